#include "ttds/alignment.hpp"

#include <cmath>

namespace ttds {

void AlignmentConfig::validate() const {
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw ConfigError("align.beta must be a finite value >= 0");
  if (!(commitment >= 0.0) || !std::isfinite(commitment))
    throw ConfigError("align.commitment must be a finite value >= 0");
}

template <typename T>
double id_level_loss(const RowVec<T>& x_s, const RowVec<T>& x_i, RowVec<T>* d_x_s, RowVec<T>* d_x_i) {
  if (x_s.cols() != x_i.cols())
    throw DimensionError("id_level_loss: dimensions " + std::to_string(x_s.cols()) + " and " +
                         std::to_string(x_i.cols()) + " differ");
  const RowVec<T> diff = x_s - x_i;
  if (d_x_s) *d_x_s = T(2) * diff;
  if (d_x_i) *d_x_i = T(-2) * diff;
  return static_cast<double>(diff.squaredNorm());
}

template <typename T>
double token_level_loss(const std::vector<RowVec<T>>& residuals) {
  if (residuals.empty()) throw DataError("token_level_loss: empty residual trail");
  double sum = 0.0;
  for (const auto& r : residuals) sum += static_cast<double>(r.squaredNorm());
  return sum;
}

double dmvae_loss(double id_loss, double token_loss, double beta) { return id_loss + beta * token_loss; }

double dmvae_loss(std::span<const TowerLoss> towers, double beta) {
  double sum = 0.0;
  for (const auto& t : towers) sum += dmvae_loss(t.id, t.token, beta);
  return sum;
}

template <typename T>
TokenLossGrad<T> token_level_gradient(const ResidualCode<T>& code, TokenGradient mode, double commitment) {
  const std::size_t levels = code.residuals.size();
  if (levels == 0) throw DataError("token_level_gradient: empty residual trail");
  TokenLossGrad<T> g;
  g.d_codewords.resize(levels);
  // suffix[j] = sum_{m >= j} r_m
  RowVec<T> tail = RowVec<T>::Zero(code.residuals[0].cols());
  for (std::size_t j = levels; j-- > 0;) {
    tail += code.residuals[j];
    g.d_codewords[j] = mode == TokenGradient::literal ? RowVec<T>(T(-2) * tail) : RowVec<T>(T(-2) * code.residuals[j]);
  }
  g.d_z = T(2) * tail;
  if (mode == TokenGradient::split) g.d_z *= static_cast<T>(commitment);
  return g;
}

template <typename T>
EntityAlignment token_alignment(const TowerQuantizer<T>& tower, const RowVec<T>& x_i, const AlignmentConfig& cfg,
                                double weight, TowerQuantizer<T>* tower_grads, RowVec<T>* d_x_i) {
  typename Projection<T>::Trace trace;
  Mat<T> x = x_i;
  const RowVec<T> z = tower.projection.forward(x, &trace).row(0);
  const ResidualCode<T> code = residual_encode(z, tower.codebooks);
  EntityAlignment out;
  out.token_loss = token_level_loss(code.residuals);
  out.levels = code.levels;
  if (!tower_grads && !d_x_i) return out;

  TokenLossGrad<T> g = token_level_gradient(code, cfg.token_gradient, cfg.commitment);
  const T w = static_cast<T>(weight);
  Mat<T> d_z = w * g.d_z;
  if (tower_grads) {
    for (std::size_t m = 0; m < code.levels.size(); ++m)
      tower_grads->codebooks[m].row(code.levels[m]) += w * g.d_codewords[m];
    Mat<T> dx = tower.projection.backward(trace, d_z, tower_grads->projection);
    if (d_x_i) *d_x_i += dx.row(0);
  } else {
    Projection<T> scratch = tower.projection.zeros_like();
    *d_x_i += tower.projection.backward(trace, d_z, scratch).row(0);
  }
  return out;
}

template <typename T>
EntityAlignment entity_alignment(const Backbone<T>& model, const TowerQuantizer<T>& tower,
                                 std::span<const TokenId> content, std::span<const TokenId> id_tokens,
                                 const AlignmentConfig& cfg, double id_weight, double token_weight,
                                 BackboneParams<T>* backbone_grads, TowerQuantizer<T>* tower_grads) {
  typename Backbone<T>::Trace content_trace, id_trace;
  model.forward(content, content_trace);
  model.forward(id_tokens, id_trace);
  const RowVec<T> x_i = mean_pool(content_trace.h, content_trace.ids);
  const RowVec<T> x_s = mean_pool(id_trace.h, id_trace.ids);

  RowVec<T> d_x_s, d_x_i;
  EntityAlignment out;
  out.id_loss = id_level_loss(x_s, x_i, &d_x_s, &d_x_i);
  d_x_s *= static_cast<T>(id_weight);
  d_x_i *= static_cast<T>(id_weight);

  const bool content_grad = backbone_grads && cfg.content_gradient;
  RowVec<T>* want_dx = content_grad ? &d_x_i : nullptr;
  const EntityAlignment tok = token_alignment(tower, x_i, cfg, token_weight, tower_grads, want_dx);
  out.token_loss = tok.token_loss;
  out.levels = tok.levels;

  if (content_grad) {
    Mat<T> d_h = Mat<T>::Zero(content_trace.h.rows(), content_trace.h.cols());
    mean_pool_backward<T>(content_trace.ids, d_x_i, d_h);
    model.backward_stream(content_trace, std::move(d_h), *backbone_grads);
  }
  if (backbone_grads) {
    Mat<T> d_h_s = Mat<T>::Zero(id_trace.h.rows(), id_trace.h.cols());
    mean_pool_backward<T>(id_trace.ids, d_x_s, d_h_s);
    model.backward_stream(id_trace, std::move(d_h_s), *backbone_grads);
  }
  return out;
}

#define TTDS_ALIGN_INSTANTIATE(T)                                                                                 \
  template double id_level_loss<T>(const RowVec<T>&, const RowVec<T>&, RowVec<T>*, RowVec<T>*);                   \
  template double token_level_loss<T>(const std::vector<RowVec<T>>&);                                             \
  template TokenLossGrad<T> token_level_gradient<T>(const ResidualCode<T>&, TokenGradient, double);               \
  template EntityAlignment token_alignment<T>(const TowerQuantizer<T>&, const RowVec<T>&, const AlignmentConfig&, \
                                              double, TowerQuantizer<T>*, RowVec<T>*);                            \
  template EntityAlignment entity_alignment<T>(const Backbone<T>&, const TowerQuantizer<T>&,                      \
                                               std::span<const TokenId>, std::span<const TokenId>,                \
                                               const AlignmentConfig&, double, double, BackboneParams<T>*,        \
                                               TowerQuantizer<T>*);

TTDS_ALIGN_INSTANTIATE(float)
TTDS_ALIGN_INSTANTIATE(double)

}  // namespace ttds
