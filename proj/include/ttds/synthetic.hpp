#pragma once

#include "ttds/corpus.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace ttds {

// Planted-structure generator: items fall into latent clusters, each with its own vocabulary,
// and every user draws most of a sequence from one or two preferred clusters.
struct SynthConfig {
  int clusters = 10;
  int items = 300;
  int users = 200;
  int min_length = 8;
  int max_length = 16;
  double in_cluster_rate = 0.9;  // probability that a draw comes from a preferred cluster
  int words_per_cluster = 12;
  std::uint64_t seed = 42;
};

struct SyntheticCorpus {
  std::vector<Interaction> interactions;
  std::map<std::string, ItemMeta> item_meta;
  std::map<std::string, int> item_cluster;
  std::map<std::string, std::vector<int>> user_clusters;  // preferred clusters per user
};

SyntheticCorpus generate_synthetic(const SynthConfig& config);

// generate_synthetic followed by the same k-core/split/content pipeline used for real data.
Dataset synthetic_dataset(const SynthConfig& config, const IngestOptions& options);

}  // namespace ttds
