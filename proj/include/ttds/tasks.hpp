#pragma once

#include "ttds/corpus.hpp"
#include "ttds/quantizer.hpp"
#include "ttds/vocab.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace ttds {

enum class TaskFamily : std::uint8_t { seqrec = 0, user_pred = 1, preference = 2 };
const char* family_name(TaskFamily f);
TaskFamily parse_family(const std::string& s);

// Placeholders: {user_id}, {history}, {item_id}, {user_list}.
struct PromptTemplate {
  std::string id;
  TaskFamily family = TaskFamily::seqrec;
  std::string text;

  void validate() const;
};

// One record per line: id <TAB> family <TAB> text. Blank lines and '#' lines are skipped.
std::vector<PromptTemplate> parse_templates(std::istream& in);
std::vector<PromptTemplate> load_templates(const std::filesystem::path& path);
std::vector<PromptTemplate> templates_for(const std::vector<PromptTemplate>& all, TaskFamily family);

// Token layout: <bos>, prompt tokens, then target tokens. loss_mask is parallel to tokens and
// is 1 exactly on the target positions.
struct PromptInstance {
  std::vector<TokenId> tokens;
  std::vector<std::uint8_t> loss_mask;
  std::vector<TokenId> target;
  TaskFamily family = TaskFamily::seqrec;
  std::string template_id;
  std::vector<std::pair<Tower, std::string>> entities;  // entities whose IDs feed the alignment losses

  std::size_t prompt_length() const { return tokens.size() - target.size(); }
  std::span<const TokenId> prompt() const { return {tokens.data(), prompt_length()}; }
};

struct RenderLimits {
  int history_cap = 20;  // H
  int summary_cap = 24;  // T
};

// `target` may be null to render only the prompt (inference).
PromptInstance render_seqrec(const std::string& user, const std::vector<std::string>& history,
                             const std::string* target, const IndexAssignment& items, const IndexAssignment& users,
                             const Vocabulary& vocab, const PromptTemplate& tmpl, const RenderLimits& limits = {});

// `purchasers` in purchase order; the prompt lists all but the last (most recent H of them) and the
// target is the last one. Returns nullopt when there are fewer than two purchasers.
std::optional<PromptInstance> render_user_prediction(const std::string& item, const std::vector<std::string>& purchasers,
                                                     const IndexAssignment& items, const IndexAssignment& users,
                                                     const Vocabulary& vocab, const PromptTemplate& tmpl,
                                                     const RenderLimits& limits = {});

// Target is the NL tokens of `summary` truncated to T. Returns nullopt for an empty summary.
std::optional<PromptInstance> render_preference(const std::string& user, const std::vector<std::string>& history,
                                                const std::string& summary, const IndexAssignment& items,
                                                const IndexAssignment& users, const Vocabulary& vocab,
                                                const PromptTemplate& tmpl, const RenderLimits& limits = {});

// Users who bought each item inside their train portion, ordered by (timestamp, user id).
std::map<std::string, std::vector<std::string>> item_purchasers(const Dataset& data);

struct TaskMix {
  double seqrec = 4.0;
  double user_pred = 1.0;
  double preference = 1.0;

  double weight(TaskFamily f) const;
  void validate() const;
};

struct StreamConfig {
  TaskMix mix;
  int batch_size = 16;
  RenderLimits limits;
  std::size_t total_samples = 0;  // 0: one pass over the seqrec pairs sets the epoch size
};

struct StreamStats {
  std::size_t seqrec_pairs = 0;
  std::size_t user_pred_pool = 0;
  std::size_t preference_pool = 0;
  std::size_t skipped_user_pred = 0;   // items with fewer than two purchasers
  std::size_t skipped_preference = 0;  // users without a review summary
  std::size_t counts[3] = {0, 0, 0};
};

struct TrainingStream {
  std::vector<std::vector<PromptInstance>> batches;
  StreamStats stats;

  std::size_t size() const;
};

// Family sizes: without total_samples, every seqrec pair once and the other families in proportion
// to their weight relative to seqrec; with total_samples, all families in proportion to weight.
// Families smaller than their allocation are cycled through reshuffled passes. The final order is
// a seeded shuffle of all instances.
TrainingStream build_training_stream(const Dataset& data, const Vocabulary& vocab, const IndexAssignment& items,
                                     const IndexAssignment& users, const std::vector<PromptTemplate>& templates,
                                     const StreamConfig& cfg, std::uint64_t seed);

void write_instances_jsonl(const std::vector<PromptInstance>& instances, const Vocabulary& vocab, std::ostream& out);

}  // namespace ttds
