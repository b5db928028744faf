#pragma once

// Row-wise neural-network primitives shared by the decoder and the quantizer projection.

#include "ttds/common.hpp"

#include <cmath>
#include <random>
#include <vector>

namespace ttds::detail {

constexpr double kLnEps = 1e-5;
constexpr double kGeluC0 = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluC1 = 0.044715;

template <typename T>
void fill_normal(Mat<T>& m, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> nd(0.0, stddev);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(nd(rng));
}

template <typename T>
Mat<T> const_mat(Eigen::Index r, Eigen::Index c, T v) {
  return Mat<T>::Constant(r, c, v);
}

// Row-wise layer norm; returns normalized rows in xhat and 1/sigma per row.
template <typename T>
Mat<T> layer_norm(const Mat<T>& x, const Mat<T>& g, const Mat<T>& b, Mat<T>& xhat, std::vector<T>& rstd) {
  const Eigen::Index n = x.rows(), d = x.cols();
  xhat.resize(n, d);
  rstd.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const T mean = x.row(i).mean();
    const auto centered = (x.row(i).array() - mean).eval();
    const T var = centered.square().mean();
    const T r = T(1) / std::sqrt(var + T(kLnEps));
    rstd[static_cast<std::size_t>(i)] = r;
    xhat.row(i) = centered * r;
  }
  Mat<T> y = (xhat.array().rowwise() * g.row(0).array()).matrix();
  y.rowwise() += b.row(0);
  return y;
}

template <typename T>
Mat<T> layer_norm_backward(const Mat<T>& dy, const Mat<T>& xhat, const std::vector<T>& rstd, const Mat<T>& g,
                           Mat<T>& dg, Mat<T>& db) {
  dg.row(0) += (dy.array() * xhat.array()).colwise().sum().matrix();
  db.row(0) += dy.colwise().sum();
  Mat<T> dxhat = (dy.array().rowwise() * g.row(0).array()).matrix();
  Mat<T> dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const T m1 = dxhat.row(i).mean();
    const T m2 = (dxhat.row(i).array() * xhat.row(i).array()).mean();
    dx.row(i) = ((dxhat.row(i).array() - m1 - xhat.row(i).array() * m2) * rstd[static_cast<std::size_t>(i)]).matrix();
  }
  return dx;
}

template <typename T>
Mat<T> gelu(const Mat<T>& u) {
  auto a = u.array();
  auto t = (T(kGeluC0) * (a + T(kGeluC1) * a.cube())).tanh();
  return (T(0.5) * a * (T(1) + t)).matrix();
}

template <typename T>
Mat<T> gelu_grad(const Mat<T>& u) {
  auto a = u.array();
  auto t = (T(kGeluC0) * (a + T(kGeluC1) * a.cube())).tanh().eval();
  return (T(0.5) * (T(1) + t) +
          T(0.5) * a * (T(1) - t.square()) * T(kGeluC0) * (T(1) + T(3 * kGeluC1) * a.square()))
      .matrix();
}

template <typename T>
void softmax_inplace(Eigen::Ref<RowVec<T>> row) {
  const T mx = row.maxCoeff();
  row = (row.array() - mx).exp().matrix();
  row /= row.sum();
}

}  // namespace ttds::detail
