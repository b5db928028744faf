#include "ttds/synthetic.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <random>
#include <set>

namespace ttds {

namespace {

constexpr const char* kCommonWords[] = {"great", "good",    "nice",   "quality", "product", "price", "works",
                                        "well",  "value",   "recommend", "fine", "solid",   "item",  "daily",
                                        "use",   "excellent", "happy", "buy",     "again",   "love"};

std::string padded(char prefix, int value, int width) {
  std::string digits = std::to_string(value);
  if (static_cast<int>(digits.size()) < width) digits.insert(0, static_cast<std::size_t>(width) - digits.size(), '0');
  return prefix + digits;
}

// Pronounceable pseudo-words so each cluster gets a disjoint vocabulary.
std::vector<std::vector<std::string>> cluster_vocab(int clusters, int per_cluster, std::mt19937_64& rng) {
  static constexpr const char* kOnset[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"};
  static constexpr const char* kNucleus[] = {"a", "e", "i", "o", "u"};
  std::set<std::string> used(std::begin(kCommonWords), std::end(kCommonWords));
  std::vector<std::vector<std::string>> vocab(static_cast<std::size_t>(clusters));
  for (auto& words : vocab) {
    while (static_cast<int>(words.size()) < per_cluster) {
      std::string w;
      int syllables = 2 + static_cast<int>(rng() % 2);
      for (int s = 0; s < syllables; ++s) {
        w += kOnset[rng() % std::size(kOnset)];
        w += kNucleus[rng() % std::size(kNucleus)];
      }
      if (used.insert(w).second) words.push_back(w);
    }
  }
  return vocab;
}

}  // namespace

SyntheticCorpus generate_synthetic(const SynthConfig& cfg) {
  if (cfg.clusters < 2) throw ConfigError("synthetic config needs at least 2 clusters");
  if (cfg.items < cfg.clusters) throw ConfigError("synthetic config needs items >= clusters");
  if (cfg.users < 1) throw ConfigError("synthetic config needs at least 1 user");
  if (cfg.min_length < 1 || cfg.max_length < cfg.min_length)
    throw ConfigError("synthetic sequence length range is empty");
  if (cfg.in_cluster_rate < 0.0 || cfg.in_cluster_rate > 1.0)
    throw ConfigError("in_cluster_rate must lie in [0,1]");
  if (cfg.words_per_cluster < 4) throw ConfigError("words_per_cluster must be >= 4");

  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto pick = [&](std::size_t n) { return static_cast<std::size_t>(rng() % n); };

  SyntheticCorpus out;
  const auto vocab = cluster_vocab(cfg.clusters, cfg.words_per_cluster, rng);
  const int id_width = std::max(4, static_cast<int>(std::to_string(std::max(cfg.items, cfg.users)).size()));

  // Balanced partition: shuffled item order dealt round-robin.
  std::vector<int> order(static_cast<std::size_t>(cfg.items));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::string>> members(static_cast<std::size_t>(cfg.clusters));
  for (std::size_t r = 0; r < order.size(); ++r) {
    const int c = static_cast<int>(r % static_cast<std::size_t>(cfg.clusters));
    const std::string id = padded('I', order[r], id_width);
    members[static_cast<std::size_t>(c)].push_back(id);
    out.item_cluster[id] = c;
  }
  for (auto& m : members) std::sort(m.begin(), m.end());

  auto cluster_word = [&](int c) { return vocab[static_cast<std::size_t>(c)][pick(vocab[0].size())]; };
  auto common_word = [&] { return std::string(kCommonWords[pick(std::size(kCommonWords))]); };

  for (const auto& [id, c] : out.item_cluster) {
    ItemMeta m;
    m.item_id = id;
    m.title = cluster_word(c) + " " + cluster_word(c) + " " + common_word();
    std::string desc;
    for (int w = 0; w < 6; ++w) {
      if (!desc.empty()) desc += ' ';
      desc += unit(rng) < 0.7 ? cluster_word(c) : common_word();
    }
    m.description = desc;
    m.brand = vocab[static_cast<std::size_t>(c)][static_cast<std::size_t>(pick(3))];
    m.categories = {"products", vocab[static_cast<std::size_t>(c)][0]};
    out.item_meta.emplace(id, std::move(m));
  }

  const std::int64_t base_time = 1'400'000'000;
  for (int u = 0; u < cfg.users; ++u) {
    const std::string uid = padded('U', u, id_width);
    std::vector<int> preferred{static_cast<int>(pick(static_cast<std::size_t>(cfg.clusters)))};
    if (unit(rng) < 0.5) {
      int second = static_cast<int>(pick(static_cast<std::size_t>(cfg.clusters - 1)));
      if (second >= preferred[0]) ++second;
      preferred.push_back(second);
    }
    std::sort(preferred.begin(), preferred.end());
    out.user_clusters[uid] = preferred;
    std::vector<int> others;
    for (int c = 0; c < cfg.clusters; ++c)
      if (!std::binary_search(preferred.begin(), preferred.end(), c)) others.push_back(c);

    const int length = cfg.min_length + static_cast<int>(pick(static_cast<std::size_t>(cfg.max_length - cfg.min_length + 1)));
    std::set<std::string> taken;
    std::int64_t t = base_time + static_cast<std::int64_t>(pick(86'400 * 365));
    for (int step = 0; step < length; ++step) {
      const bool in_pref = unit(rng) < cfg.in_cluster_rate;
      const auto& pool = in_pref ? preferred : others;
      // Sample without replacement within a user; give up on the cluster when it is exhausted.
      std::string item;
      for (int attempt = 0; attempt < 64 && item.empty(); ++attempt) {
        const int c = pool[pick(pool.size())];
        const auto& cand = members[static_cast<std::size_t>(c)];
        const auto& id = cand[pick(cand.size())];
        if (!taken.count(id)) item = id;
      }
      if (item.empty()) continue;
      taken.insert(item);
      t += 86'400 + static_cast<std::int64_t>(pick(3'600));
      const int c = out.item_cluster[item];
      Interaction in;
      in.user_id = uid;
      in.item_id = item;
      in.timestamp = t;
      in.summary = cluster_word(c) + " " + common_word() + " " + cluster_word(c);
      in.review_text = in.summary + " " + common_word() + " " + cluster_word(c) + " " + common_word();
      out.interactions.push_back(std::move(in));
    }
  }
  return out;
}

Dataset synthetic_dataset(const SynthConfig& config, const IngestOptions& options) {
  SyntheticCorpus corpus = generate_synthetic(config);
  Dataset ds = build_dataset(std::move(corpus.interactions), corpus.item_meta, options);
  for (const auto& rec : ds.items) ds.item_cluster[rec.entity_id] = corpus.item_cluster.at(rec.entity_id);
  return ds;
}

}  // namespace ttds
