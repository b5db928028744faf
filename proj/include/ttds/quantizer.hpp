#pragma once

#include "ttds/backbone.hpp"
#include "ttds/common.hpp"

#include <compare>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ttds {

// A 4096-wide backbone would use 256 codewords of width 256 behind a [4096, 2048, 1024, 512, 256]
// projection; the defaults are sized for a 128-wide one.
struct TowerConfig {
  Tower tower = Tower::item;
  int levels = 4;
  int codes = 32;
  int code_dim = 32;
  std::vector<int> widths{128, 64, 32};  // backbone d first, code_dim last

  void validate(int backbone_dim) const;
};

// Feed-forward stack from backbone space to code space; GELU between layers, linear output.
template <typename T>
struct Projection {
  std::vector<Mat<T>> weights;  // in x out
  std::vector<Mat<T>> biases;   // 1 x out

  Projection() = default;
  Projection(const std::vector<int>& widths, std::uint64_t seed);

  int input_dim() const { return static_cast<int>(weights.front().rows()); }
  int output_dim() const { return static_cast<int>(weights.back().cols()); }

  struct Trace {
    std::vector<Mat<T>> inputs;  // input to each layer
    std::vector<Mat<T>> pre;     // pre-activation of each hidden layer
  };
  Mat<T> forward(const Mat<T>& x, Trace* trace = nullptr) const;
  // Accumulates parameter gradients and returns the gradient w.r.t. the input rows.
  Mat<T> backward(const Trace& trace, const Mat<T>& d_out, Projection& grads) const;

  Projection zeros_like() const;

  template <typename F>
  void visit(F&& f) {
    for (std::size_t i = 0; i < weights.size(); ++i) {
      f("proj" + std::to_string(i) + ".w", weights[i]);
      f("proj" + std::to_string(i) + ".b", biases[i]);
    }
  }
};

template <typename T>
struct TowerQuantizer {
  TowerConfig config;
  Projection<T> projection;
  std::vector<Mat<T>> codebooks;  // levels x (codes x code_dim)

  TowerQuantizer() = default;
  TowerQuantizer(const TowerConfig& config, std::uint64_t seed);

  TowerQuantizer zeros_like() const;

  template <typename F>
  void visit(F&& f) {
    projection.visit(f);
    for (std::size_t m = 0; m < codebooks.size(); ++m) f("codebook" + std::to_string(m), codebooks[m]);
  }
};

template <typename T>
struct TwinTowerQuantizer {
  TowerQuantizer<T> item;
  TowerQuantizer<T> user;

  TowerQuantizer<T>& tower(Tower t) { return t == Tower::item ? item : user; }
  const TowerQuantizer<T>& tower(Tower t) const { return t == Tower::item ? item : user; }

  template <typename F>
  void visit(F&& f) {
    item.visit([&](const std::string& n, Mat<T>& m) { f("item." + n, m); });
    user.visit([&](const std::string& n, Mat<T>& m) { f("user." + n, m); });
  }
};

// project(): content embedding -> code space.
template <typename T>
RowVec<T> project(const RowVec<T>& embedding, const TowerQuantizer<T>& tower);

template <typename T>
struct ResidualCode {
  std::vector<int> levels;             // i*_1..i*_M
  std::vector<RowVec<T>> residuals;    // r_1..r_M
};

// r_0 = z; i*_m = argmin_i |r_{m-1} - c_{i,m}|^2 (lowest index on ties); r_m = r_{m-1} - c_{i*_m,m}.
template <typename T>
ResidualCode<T> residual_encode(const RowVec<T>& z, const std::vector<Mat<T>>& codebooks);

template <typename T>
RowVec<T> reconstruct(std::span<const int> levels, const std::vector<Mat<T>>& codebooks);

struct KMeansOptions {
  int iterations = 50;
  std::uint64_t seed = 0;
};

// Lloyd iterations from a k-means++ start; empty clusters are re-seeded from the point farthest
// from its centroid.
template <typename T>
Mat<T> kmeans(const Mat<T>& points, int k, const KMeansOptions& options, std::vector<int>* assignment = nullptr);

// Level-1 codebook from the projected vectors, level-m from the level-(m-1) residuals.
template <typename T>
std::vector<Mat<T>> kmeans_init(const Mat<T>& projected, const TowerConfig& config, const KMeansOptions& options);

// Lloyd iterations on every level, starting from the current codewords (level m on the residuals
// left by the refitted levels 1..m-1). Codeword identities carry over wherever clusters persist.
template <typename T>
void refit_codebooks(const Mat<T>& projected, std::vector<Mat<T>>& codebooks, int iterations);

// Mean |r_m|^2 over rows, for m = 1..M.
template <typename T>
std::vector<double> mean_residual_norms(const Mat<T>& projected, const std::vector<Mat<T>>& codebooks);

struct SemanticId {
  Tower tower = Tower::item;
  std::vector<int> levels;
  int suffix = 0;

  auto operator<=>(const SemanticId&) const = default;
};

struct IndexAssignment {
  Tower tower = Tower::item;
  int epoch = 0;
  std::vector<std::string> entities;  // sorted ascending
  std::vector<SemanticId> ids;        // parallel to entities

  const SemanticId& id_of(const std::string& entity) const;
  std::optional<std::size_t> index_of(const std::string& entity) const;
  std::optional<std::string> entity_of(const SemanticId& id) const;
  // Entities sharing this entity's level tuple (including itself), in suffix order.
  std::vector<std::string> collision_set(const std::string& entity) const;
};

// Token ids of a full semantic ID (M level tokens followed by the suffix token).
std::vector<TokenId> id_tokens(const SemanticId& id, const Vocabulary& vocab);

// Residual-encodes each projected row and resolves collisions: inside each set of identical level
// tuples, ascending entity id gets suffix 0, 1, ... . `entities` must be sorted.
IndexAssignment assign_ids(const std::vector<std::string>& entities, const Mat<float>& projected,
                           const std::vector<Mat<float>>& codebooks, Tower tower, int max_suffixes, int epoch = 0);

// Projects a batch of content embeddings through a tower.
Mat<float> project_batch(const Mat<float>& embeddings, const TowerQuantizer<float>& tower);

// Re-embeds every entity with the current backbone and re-assigns IDs; epoch = previous + 1.
// With refit_iterations > 0 the tower's codebooks are first refitted to the new projections.
IndexAssignment reindex(const Backbone<float>& model, const std::vector<std::string>& entities,
                        const std::vector<std::vector<TokenId>>& contents, TowerQuantizer<float>& tower,
                        int max_suffixes, const IndexAssignment& previous, int refit_iterations = 0);

void write_assignment_jsonl(const IndexAssignment& assignment, std::ostream& out);
IndexAssignment read_assignment_jsonl(std::istream& in);

}  // namespace ttds
