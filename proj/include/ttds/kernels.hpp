#pragma once

// Data-parallel kernels. Each has a serial reference implementation used by the tests and the
// benchmark; the parallel versions must return bit-identical results.

#include "ttds/backbone.hpp"
#include "ttds/common.hpp"

#include <span>
#include <vector>

namespace ttds::kernels {

// Squared Euclidean distance computed element by element (no expansion), so every caller
// sees the same rounding.
template <typename T>
T squared_distance(const T* a, const T* b, Eigen::Index n) {
  T acc = T(0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const T diff = a[i] - b[i];
    acc += diff * diff;
  }
  return acc;
}

// Index of the nearest codebook row to every row of `points`; ties go to the lowest index.
template <typename T>
void nearest_serial(const Mat<T>& points, const Mat<T>& codebook, std::vector<int>& index, std::vector<T>& dist);
template <typename T>
void nearest_parallel(const Mat<T>& points, const Mat<T>& codebook, std::vector<int>& index, std::vector<T>& dist);

// Residual encoding of every row; `levels` is rows x M, `residual` receives r_M per row.
template <typename T>
void encode_serial(const Mat<T>& points, const std::vector<Mat<T>>& codebooks, Mat<int>& levels, Mat<T>& residual);
template <typename T>
void encode_parallel(const Mat<T>& points, const std::vector<Mat<T>>& codebooks, Mat<int>& levels,
                     Mat<T>& residual);

// Content embeddings (mean-pooled final hidden states) for many token sequences.
Mat<float> embed_serial(const Backbone<float>& model, const std::vector<std::vector<TokenId>>& texts);
Mat<float> embed_parallel(const Backbone<float>& model, const std::vector<std::vector<TokenId>>& texts);

}  // namespace ttds::kernels
