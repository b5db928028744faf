#pragma once

#include "ttds/model.hpp"
#include "ttds/tasks.hpp"

#include <set>
#include <span>
#include <string>
#include <vector>

namespace ttds {

// Prefix tree over the item tower's full semantic IDs (M level tokens plus suffix).
class IndexTrie {
 public:
  struct Node {
    std::vector<std::pair<TokenId, int>> children;  // (token, node index), sorted by token
    int leaves = 0;                                 // catalog items under this node
    int item = -1;                                  // catalog index at a leaf
  };

  static IndexTrie build(const IndexAssignment& items, const Vocabulary& vocab);

  int depth() const { return depth_; }
  const Node& node(int i) const { return nodes_[static_cast<std::size_t>(i)]; }
  std::size_t node_count() const { return nodes_.size(); }
  std::size_t leaf_count() const { return items_.size(); }
  const std::string& item(int index) const { return items_[static_cast<std::size_t>(index)]; }

  // Child of `node` reached through `token`, or -1.
  int child(int node, TokenId token) const;
  bool contains(std::span<const TokenId> path) const;
  // Item at the end of a full-length path, or nullopt.
  std::optional<std::string> lookup(std::span<const TokenId> path) const;
  // Node indices from the root to an item's leaf (empty for unknown items).
  std::vector<int> path_nodes(const std::string& item) const;

 private:
  std::vector<Node> nodes_;
  std::vector<std::string> items_;
  std::vector<std::vector<TokenId>> paths_;
  std::map<std::string, int> leaf_of_;
  int depth_ = 0;
};

IndexTrie build_trie(const IndexAssignment& items, const Vocabulary& vocab);

struct ScoredItem {
  std::string item_id;
  double score = 0.0;  // sum of per-step log-probabilities

  bool operator==(const ScoredItem&) const = default;
};

// Items that may not be emitted (e.g. a user's history).
struct Exclusion {
  std::set<std::string> items;
};

// Exactly depth() decoding steps; each step keeps the W best partial paths (score desc, token path
// asc on ties) among trie children. Returns the top K leaves by score, ties by item id.
std::vector<ScoredItem> constrained_beam_search(const Backbone<float>& model, std::span<const TokenId> prompt,
                                                const IndexTrie& trie, int beam_width, int k,
                                                const Exclusion* exclude = nullptr);

// Scores every catalog path with the same incremental decoder (oracle for the beam).
std::vector<ScoredItem> exhaustive_ranking(const Backbone<float>& model, std::span<const TokenId> prompt,
                                           const IndexTrie& trie, int k, const Exclusion* exclude = nullptr);

enum class DecodeMode { beam, exhaustive };
const char* decode_mode_name(DecodeMode m);
DecodeMode parse_decode_mode(const std::string& s);

struct RecommendOptions {
  int k = 10;
  int beam_width = 0;  // 0 selects max(2K, 20)
  bool filter_history = true;
  DecodeMode mode = DecodeMode::beam;
  RenderLimits limits;

  int effective_width() const { return beam_width > 0 ? beam_width : std::max(2 * k, 20); }
};

// Renders the seqrec prompt for `history` (chronological) and decodes K catalog items.
std::vector<ScoredItem> recommend_topk(const ModelBundle& model, const IndexTrie& trie, const std::string& user,
                                       const std::vector<std::string>& history, const PromptTemplate& tmpl,
                                       const RecommendOptions& options);

}  // namespace ttds
