#pragma once

#include "ttds/corpus.hpp"
#include "ttds/inference.hpp"

#include "json.hpp"

#include <map>
#include <string>
#include <vector>

namespace ttds {

// 1 iff target appears within the first k entries.
int hr_at_k(const std::vector<std::string>& ranked, const std::string& target, int k);
// 1/log2(rank+1) for a single relevant target at 1-based rank <= k, else 0.
double ndcg_at_k(const std::vector<std::string>& ranked, const std::string& target, int k);

// Fraction of entities whose level tuple (suffix ignored) is shared with at least one other.
double collision_rate(const IndexAssignment& assignment);

enum class EvalTarget { valid, test };

struct EvalOptions {
  std::vector<int> ks{1, 5, 10};
  RecommendOptions recommend;
  EvalTarget target = EvalTarget::test;
  std::size_t max_users = 0;  // 0: every split user
};

using MetricMap = std::map<std::string, double>;  // "HR@10" -> value

struct TemplateMetrics {
  std::string template_id;
  MetricMap metrics;
};

struct MetricReport {
  std::vector<TemplateMetrics> per_template;
  MetricMap averaged;  // unweighted mean over templates
  std::size_t users = 0;
  std::string decoding;
  double collision_rate_item = 0.0;
  double collision_rate_user = 0.0;
  double in_domain_rate = 1.0;  // emitted IDs that map to catalog items
  std::string config_hash;

  nlohmann::json to_json() const;
  std::string table() const;
};

// Metric names for a K set: HR@k for every k, NDCG@k for every k > 1.
std::vector<std::string> metric_names(const std::vector<int>& ks);

// Adds one ranking's contribution into `sums` (caller divides by the user count).
void accumulate_metrics(const std::vector<std::string>& ranked, const std::string& target, const std::vector<int>& ks,
                        MetricMap& sums);

// Leave-one-out evaluation over every seqrec template: the history is every item before the target.
MetricReport evaluate(const Dataset& data, const ModelBundle& model, const IndexTrie& trie,
                      const std::vector<PromptTemplate>& templates, const EvalOptions& options);

// Most-interacted train items first (ties by item id), with the same history filtering rule.
MetricMap evaluate_popularity(const Dataset& data, const std::vector<int>& ks, EvalTarget target, bool filter_history);

}  // namespace ttds
