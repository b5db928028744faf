#include "ttds/kernels.hpp"

#include "ttds/omp.hpp"

#include <atomic>
#include <limits>

namespace ttds {

namespace {
std::atomic<bool> g_deterministic{false};
}

void set_deterministic(bool on) {
  g_deterministic = on;
  if (on) omp_set_num_threads(1);
}
bool deterministic() { return g_deterministic; }
int worker_threads() { return g_deterministic ? 1 : omp_get_max_threads(); }

namespace kernels {

namespace {

template <typename T>
void nearest_row(const Mat<T>& points, const Mat<T>& codebook, Eigen::Index r, int& best, T& best_d) {
  best = 0;
  best_d = std::numeric_limits<T>::infinity();
  for (Eigen::Index c = 0; c < codebook.rows(); ++c) {
    const T dd = squared_distance(points.row(r).data(), codebook.row(c).data(), points.cols());
    if (dd < best_d) {
      best_d = dd;
      best = static_cast<int>(c);
    }
  }
}

template <typename T>
void encode_row(const Mat<T>& points, const std::vector<Mat<T>>& codebooks, Eigen::Index r, Mat<int>& levels,
                Mat<T>& residual) {
  RowVec<T> res = points.row(r);
  for (std::size_t m = 0; m < codebooks.size(); ++m) {
    const auto& cb = codebooks[m];
    int best = 0;
    T best_d = std::numeric_limits<T>::infinity();
    for (Eigen::Index c = 0; c < cb.rows(); ++c) {
      const T dd = squared_distance(res.data(), cb.row(c).data(), res.cols());
      if (dd < best_d) {
        best_d = dd;
        best = static_cast<int>(c);
      }
    }
    levels(r, static_cast<Eigen::Index>(m)) = best;
    res -= cb.row(best);
  }
  residual.row(r) = res;
}

void check_dims(Eigen::Index point_dim, Eigen::Index code_dim) {
  if (point_dim != code_dim) throw DimensionError("point and codebook dimensions differ");
}

}  // namespace

template <typename T>
void nearest_serial(const Mat<T>& points, const Mat<T>& codebook, std::vector<int>& index, std::vector<T>& dist) {
  check_dims(points.cols(), codebook.cols());
  index.resize(static_cast<std::size_t>(points.rows()));
  dist.resize(index.size());
  for (Eigen::Index r = 0; r < points.rows(); ++r)
    nearest_row(points, codebook, r, index[static_cast<std::size_t>(r)], dist[static_cast<std::size_t>(r)]);
}

template <typename T>
void nearest_parallel(const Mat<T>& points, const Mat<T>& codebook, std::vector<int>& index, std::vector<T>& dist) {
  check_dims(points.cols(), codebook.cols());
  index.resize(static_cast<std::size_t>(points.rows()));
  dist.resize(index.size());
  const Eigen::Index n = points.rows();
  TTDS_OMP(parallel for schedule(static) num_threads(worker_threads()))
  for (Eigen::Index r = 0; r < n; ++r)
    nearest_row(points, codebook, r, index[static_cast<std::size_t>(r)], dist[static_cast<std::size_t>(r)]);
}

template <typename T>
void encode_serial(const Mat<T>& points, const std::vector<Mat<T>>& codebooks, Mat<int>& levels, Mat<T>& residual) {
  for (const auto& cb : codebooks) check_dims(points.cols(), cb.cols());
  levels.resize(points.rows(), static_cast<Eigen::Index>(codebooks.size()));
  residual.resize(points.rows(), points.cols());
  for (Eigen::Index r = 0; r < points.rows(); ++r) encode_row(points, codebooks, r, levels, residual);
}

template <typename T>
void encode_parallel(const Mat<T>& points, const std::vector<Mat<T>>& codebooks, Mat<int>& levels,
                     Mat<T>& residual) {
  for (const auto& cb : codebooks) check_dims(points.cols(), cb.cols());
  levels.resize(points.rows(), static_cast<Eigen::Index>(codebooks.size()));
  residual.resize(points.rows(), points.cols());
  const Eigen::Index n = points.rows();
  TTDS_OMP(parallel for schedule(static) num_threads(worker_threads()))
  for (Eigen::Index r = 0; r < n; ++r) encode_row(points, codebooks, r, levels, residual);
}

Mat<float> embed_serial(const Backbone<float>& model, const std::vector<std::vector<TokenId>>& texts) {
  Mat<float> out(static_cast<Eigen::Index>(texts.size()), model.d_model());
  for (std::size_t i = 0; i < texts.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = embed_content<float>(model, texts[i]);
  return out;
}

Mat<float> embed_parallel(const Backbone<float>& model, const std::vector<std::vector<TokenId>>& texts) {
  Mat<float> out(static_cast<Eigen::Index>(texts.size()), model.d_model());
  const auto n = static_cast<std::ptrdiff_t>(texts.size());
  TTDS_OMP(parallel for schedule(dynamic, 8) num_threads(worker_threads()))
  for (std::ptrdiff_t i = 0; i < n; ++i)
    out.row(static_cast<Eigen::Index>(i)) = embed_content<float>(model, texts[static_cast<std::size_t>(i)]);
  return out;
}

template void nearest_serial<float>(const Mat<float>&, const Mat<float>&, std::vector<int>&, std::vector<float>&);
template void nearest_serial<double>(const Mat<double>&, const Mat<double>&, std::vector<int>&, std::vector<double>&);
template void nearest_parallel<float>(const Mat<float>&, const Mat<float>&, std::vector<int>&, std::vector<float>&);
template void nearest_parallel<double>(const Mat<double>&, const Mat<double>&, std::vector<int>&,
                                       std::vector<double>&);
template void encode_serial<float>(const Mat<float>&, const std::vector<Mat<float>>&, Mat<int>&, Mat<float>&);
template void encode_serial<double>(const Mat<double>&, const std::vector<Mat<double>>&, Mat<int>&, Mat<double>&);
template void encode_parallel<float>(const Mat<float>&, const std::vector<Mat<float>>&, Mat<int>&, Mat<float>&);
template void encode_parallel<double>(const Mat<double>&, const std::vector<Mat<double>>&, Mat<int>&, Mat<double>&);

}  // namespace kernels
}  // namespace ttds
