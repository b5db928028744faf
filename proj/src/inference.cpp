#include "ttds/inference.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

namespace ttds {

IndexTrie IndexTrie::build(const IndexAssignment& items, const Vocabulary& vocab) {
  if (items.tower != Tower::item) throw DataError("the decoding trie is built from the item tower");
  if (items.entities.empty()) throw DataError("cannot build a trie over an empty catalog");
  IndexTrie t;
  t.nodes_.emplace_back();
  t.items_ = items.entities;
  for (std::size_t i = 0; i < items.entities.size(); ++i) {
    const auto path = id_tokens(items.ids[i], vocab);
    t.paths_.push_back(path);
    if (t.depth_ == 0) t.depth_ = static_cast<int>(path.size());
    if (static_cast<int>(path.size()) != t.depth_) throw DataError("semantic IDs of differing length in one catalog");
    int cur = 0;
    for (TokenId tok : path) {
      int next = t.child(cur, tok);
      if (next < 0) {
        next = static_cast<int>(t.nodes_.size());
        t.nodes_.emplace_back();
        auto& ch = t.nodes_[static_cast<std::size_t>(cur)].children;
        ch.insert(std::lower_bound(ch.begin(), ch.end(), std::make_pair(tok, -1)), {tok, next});
      }
      ++t.nodes_[static_cast<std::size_t>(cur)].leaves;
      cur = next;
    }
    auto& leaf = t.nodes_[static_cast<std::size_t>(cur)];
    if (leaf.item >= 0)
      throw DataError("items " + t.items_[static_cast<std::size_t>(leaf.item)] + " and " + items.entities[i] +
                      " share a full semantic ID");
    leaf.item = static_cast<int>(i);
    leaf.leaves = 1;
    t.leaf_of_[items.entities[i]] = cur;
  }
  return t;
}

IndexTrie build_trie(const IndexAssignment& items, const Vocabulary& vocab) { return IndexTrie::build(items, vocab); }

int IndexTrie::child(int node, TokenId token) const {
  const auto& ch = nodes_[static_cast<std::size_t>(node)].children;
  auto it = std::lower_bound(ch.begin(), ch.end(), std::make_pair(token, std::numeric_limits<int>::min()));
  return it != ch.end() && it->first == token ? it->second : -1;
}

bool IndexTrie::contains(std::span<const TokenId> path) const { return lookup(path).has_value(); }

std::optional<std::string> IndexTrie::lookup(std::span<const TokenId> path) const {
  if (static_cast<int>(path.size()) != depth_) return std::nullopt;
  int cur = 0;
  for (TokenId tok : path) {
    cur = child(cur, tok);
    if (cur < 0) return std::nullopt;
  }
  const int item = nodes_[static_cast<std::size_t>(cur)].item;
  if (item < 0) return std::nullopt;
  return items_[static_cast<std::size_t>(item)];
}

std::vector<int> IndexTrie::path_nodes(const std::string& item) const {
  auto it = leaf_of_.find(item);
  if (it == leaf_of_.end()) return {};
  std::vector<int> path{0};
  for (TokenId tok : paths_[static_cast<std::size_t>(nodes_[static_cast<std::size_t>(it->second)].item)])
    path.push_back(child(path.back(), tok));
  return path;
}

namespace {

Eigen::RowVectorXd log_probs(const RowVec<float>& logits) {
  const Eigen::RowVectorXd z = logits.cast<double>();
  const double mx = z.maxCoeff();
  const double lse = mx + std::log((z.array() - mx).exp().sum());
  return z.array() - lse;
}

struct Search {
  const Backbone<float>& model;
  const IndexTrie& trie;
  std::map<int, int> blocked;  // node -> excluded leaves below it

  Search(const Backbone<float>& m, const IndexTrie& t, const Exclusion* ex) : model(m), trie(t) {
    if (!ex) return;
    for (const auto& item : ex->items)
      for (int n : trie.path_nodes(item)) ++blocked[n];
  }

  bool open(int node) const {
    auto it = blocked.find(node);
    return trie.node(node).leaves - (it == blocked.end() ? 0 : it->second) > 0;
  }

  // Feeds the (possibly left-truncated) prompt and returns the next-token log-probabilities.
  Eigen::RowVectorXd prefill(std::span<const TokenId> prompt, Backbone<float>::KvCache& cache) const {
    if (prompt.empty()) throw DataError("decoding needs a non-empty prompt");
    const int room = model.config().max_len - trie.depth();
    if (room < 1) throw ConfigError("max_len leaves no room for a prompt before the semantic ID");
    if (static_cast<int>(prompt.size()) > room) prompt = prompt.subspan(prompt.size() - static_cast<std::size_t>(room));
    cache = model.make_cache(static_cast<int>(prompt.size()) + trie.depth());
    RowVec<float> logits;
    for (TokenId t : prompt) logits = model.step(t, cache);
    return log_probs(logits);
  }
};

void sort_results(std::vector<ScoredItem>& out, int k) {
  std::sort(out.begin(), out.end(), [](const ScoredItem& a, const ScoredItem& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.item_id < b.item_id;
  });
  if (static_cast<int>(out.size()) > k) out.resize(static_cast<std::size_t>(k));
}

}  // namespace

std::vector<ScoredItem> constrained_beam_search(const Backbone<float>& model, std::span<const TokenId> prompt,
                                                const IndexTrie& trie, int beam_width, int k,
                                                const Exclusion* exclude) {
  if (k < 1) throw ConfigError("K must be >= 1");
  if (beam_width < k)
    throw ConfigError("beam width " + std::to_string(beam_width) + " is smaller than K=" + std::to_string(k));
  Search s(model, trie, exclude);
  struct Hyp {
    int node = 0;
    double score = 0.0;
    std::vector<TokenId> path;
    Backbone<float>::KvCache cache;
    Eigen::RowVectorXd logp;
  };
  std::vector<Hyp> beam(1);
  beam[0].logp = s.prefill(prompt, beam[0].cache);

  for (int t = 0; t < trie.depth(); ++t) {
    struct Cand {
      double score;
      std::size_t hyp;
      TokenId tok;
      int node;
    };
    std::vector<Cand> cands;
    for (std::size_t h = 0; h < beam.size(); ++h)
      for (const auto& [tok, c] : trie.node(beam[h].node).children)
        if (s.open(c)) cands.push_back({beam[h].score + beam[h].logp[tok], h, tok, c});
    auto path_less = [&](const Cand& a, const Cand& b) {
      const auto& pa = beam[a.hyp].path;
      const auto& pb = beam[b.hyp].path;
      if (pa != pb) return pa < pb;
      return a.tok < b.tok;
    };
    std::sort(cands.begin(), cands.end(), [&](const Cand& a, const Cand& b) {
      if (a.score != b.score) return a.score > b.score;
      return path_less(a, b);
    });
    if (static_cast<int>(cands.size()) > beam_width) cands.resize(static_cast<std::size_t>(beam_width));

    const bool last = t + 1 == trie.depth();
    std::vector<Hyp> next;
    next.reserve(cands.size());
    for (const auto& c : cands) {
      Hyp h;
      h.node = c.node;
      h.score = c.score;
      h.path = beam[c.hyp].path;
      h.path.push_back(c.tok);
      if (!last) {
        h.cache = beam[c.hyp].cache;
        h.logp = log_probs(model.step(c.tok, h.cache));
      }
      next.push_back(std::move(h));
    }
    beam = std::move(next);
  }

  std::vector<ScoredItem> out;
  for (const auto& h : beam) out.push_back({trie.item(trie.node(h.node).item), h.score});
  sort_results(out, k);
  return out;
}

std::vector<ScoredItem> exhaustive_ranking(const Backbone<float>& model, std::span<const TokenId> prompt,
                                           const IndexTrie& trie, int k, const Exclusion* exclude) {
  if (k < 1) throw ConfigError("K must be >= 1");
  Search s(model, trie, exclude);
  std::vector<ScoredItem> out;
  std::function<void(int, int, double, const Backbone<float>::KvCache&, const Eigen::RowVectorXd&)> dfs =
      [&](int node, int t, double score, const Backbone<float>::KvCache& cache, const Eigen::RowVectorXd& logp) {
        for (const auto& [tok, c] : trie.node(node).children) {
          if (!s.open(c)) continue;
          const double sc = score + logp[tok];
          if (t + 1 == trie.depth()) {
            out.push_back({trie.item(trie.node(c).item), sc});
            continue;
          }
          auto next = cache;
          dfs(c, t + 1, sc, next, log_probs(model.step(tok, next)));
        }
      };
  Backbone<float>::KvCache cache;
  const auto logp = s.prefill(prompt, cache);
  dfs(0, 0, 0.0, cache, logp);
  sort_results(out, k);
  return out;
}

const char* decode_mode_name(DecodeMode m) { return m == DecodeMode::beam ? "beam" : "exhaustive"; }

DecodeMode parse_decode_mode(const std::string& s) {
  if (s == "beam") return DecodeMode::beam;
  if (s == "exhaustive") return DecodeMode::exhaustive;
  throw ConfigError("unknown decode mode '" + s + "' (beam | exhaustive)");
}

std::vector<ScoredItem> recommend_topk(const ModelBundle& model, const IndexTrie& trie, const std::string& user,
                                       const std::vector<std::string>& history, const PromptTemplate& tmpl,
                                       const RecommendOptions& options) {
  if (!model.user_ids.index_of(user)) throw DataError("unknown user '" + user + "'");
  const PromptInstance inst =
      render_seqrec(user, history, nullptr, model.item_ids, model.user_ids, model.vocab, tmpl, options.limits);
  Exclusion ex;
  if (options.filter_history) ex.items.insert(history.begin(), history.end());
  const Exclusion* exp = options.filter_history ? &ex : nullptr;
  if (options.mode == DecodeMode::exhaustive) return exhaustive_ranking(model.backbone, inst.prompt(), trie, options.k, exp);
  return constrained_beam_search(model.backbone, inst.prompt(), trie, options.effective_width(), options.k, exp);
}

}  // namespace ttds
