#include "ttds/optim.hpp"

#include <cmath>

namespace ttds {

template <typename T>
void check_finite(const std::vector<ParamRef<T>>& grads) {
  for (const auto& g : grads)
    if (!g.value->allFinite()) throw NumericError("non-finite gradient in parameter block '" + g.name + "'");
}

template <typename T>
void AdamW<T>::step(const std::vector<ParamRef<T>>& params, const std::vector<ParamRef<T>>& grads, double lr) {
  if (params.size() != grads.size()) throw DimensionError("optimizer: parameter and gradient lists differ");
  check_finite(grads);
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.push_back(Mat<T>::Zero(p.value->rows(), p.value->cols()));
      v_.push_back(Mat<T>::Zero(p.value->rows(), p.value->cols()));
    }
  }
  if (m_.size() != params.size()) throw StateError("optimizer state does not match the parameter set");
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
  const T step_size = static_cast<T>(lr / bc1);
  const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
  const T eps = static_cast<T>(cfg_.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Mat<T>& p = *params[i].value;
    const Mat<T>& g = *grads[i].value;
    if (p.rows() != m_[i].rows() || p.cols() != m_[i].cols() || g.rows() != p.rows() || g.cols() != p.cols())
      throw DimensionError("optimizer: shape mismatch in '" + params[i].name + "'");
    if (cfg_.weight_decay > 0.0 && p.rows() > 1) p *= static_cast<T>(1.0 - lr * cfg_.weight_decay);
    m_[i] = b1 * m_[i] + (T(1) - b1) * g;
    v_[i] = b2 * v_[i] + (T(1) - b2) * g.cwiseProduct(g);
    p.array() -= step_size * m_[i].array() / (v_[i].array().sqrt() * inv_sqrt_bc2 + eps);
  }
}

template <typename T>
void AdamW<T>::restore(std::int64_t steps, std::vector<Mat<T>> m, std::vector<Mat<T>> v) {
  if (m.size() != v.size()) throw CheckpointError("optimizer moment lists differ in length");
  t_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

template class AdamW<float>;
template class AdamW<double>;
template void check_finite<float>(const std::vector<ParamRef<float>>&);
template void check_finite<double>(const std::vector<ParamRef<double>>&);

}  // namespace ttds
