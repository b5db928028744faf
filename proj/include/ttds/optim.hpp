#pragma once

#include "ttds/common.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace ttds {

template <typename T>
struct ParamRef {
  std::string name;
  Mat<T>* value = nullptr;
};

// Collects name/tensor references from any container exposing visit(f(name, Mat&)).
template <typename T, typename Container>
std::vector<ParamRef<T>> collect_params(Container& c, const std::string& prefix = {}) {
  std::vector<ParamRef<T>> out;
  c.visit([&](const std::string& name, Mat<T>& m) { out.push_back({prefix + name, &m}); });
  return out;
}

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Adaptive moments with decoupled weight decay. 1xN tensors (biases, norm gains) are not decayed.
template <typename T>
class AdamW {
 public:
  AdamW() = default;
  explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

  // Throws NumericError naming the first tensor whose gradient holds a non-finite value.
  void step(const std::vector<ParamRef<T>>& params, const std::vector<ParamRef<T>>& grads, double lr);

  const AdamWConfig& config() const { return cfg_; }
  std::int64_t steps() const { return t_; }
  std::vector<Mat<T>>& first_moments() { return m_; }
  std::vector<Mat<T>>& second_moments() { return v_; }
  const std::vector<Mat<T>>& first_moments() const { return m_; }
  const std::vector<Mat<T>>& second_moments() const { return v_; }
  void restore(std::int64_t steps, std::vector<Mat<T>> m, std::vector<Mat<T>> v);

 private:
  AdamWConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<Mat<T>> m_, v_;
};

template <typename T>
void check_finite(const std::vector<ParamRef<T>>& grads);

}  // namespace ttds
