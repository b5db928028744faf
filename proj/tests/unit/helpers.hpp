#pragma once

#include "ttds/backbone.hpp"
#include "ttds/corpus.hpp"
#include "ttds/quantizer.hpp"

#include <random>
#include <string>
#include <vector>

namespace ttds::test {

template <typename T>
Mat<T> random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, scale);
  Mat<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(nd(rng));
  return m;
}

inline std::string pad3(int i) {
  std::string s = std::to_string(i);
  return std::string(s.size() < 3 ? 3 - s.size() : 0, '0') + s;
}

// Small vocabulary with `words` NL entries w0..w{n-1}.
inline Vocabulary word_vocab(int words) {
  std::vector<std::string> corpus;
  for (int i = 0; i < words; ++i) corpus.push_back("w" + std::to_string(i));
  return Vocabulary::build(corpus, 1);
}

// Every user buys every item in a fixed rotation; deterministic timestamps.
inline std::vector<Interaction> dense_interactions(int users, int items, int per_user) {
  std::vector<Interaction> out;
  for (int u = 0; u < users; ++u)
    for (int k = 0; k < per_user; ++k) {
      Interaction in;
      in.user_id = "u" + pad3(u);
      in.item_id = "i" + pad3((u + k) % items);
      in.timestamp = 1000 + 10 * k + u;
      in.summary = k % 2 ? "nice w" + std::to_string(k) : "";
      out.push_back(in);
    }
  return out;
}

// Assignment whose level tuples are given explicitly; suffixes resolve collisions in entity order.
inline IndexAssignment explicit_assignment(Tower tower, const std::vector<std::string>& entities,
                                           const std::vector<std::vector<int>>& levels) {
  IndexAssignment a;
  a.tower = tower;
  a.entities = entities;
  std::map<std::vector<int>, int> used;
  for (const auto& l : levels) a.ids.push_back({tower, l, used[l]++});
  return a;
}

}  // namespace ttds::test
