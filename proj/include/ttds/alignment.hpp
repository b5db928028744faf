#pragma once

#include "ttds/backbone.hpp"
#include "ttds/quantizer.hpp"

#include <span>
#include <vector>

namespace ttds {

// How the token-level loss routes gradients through the argmin.
//  literal: exact derivative of sum_m |r_m|^2 with the selected indices held fixed.
//  split:   commitment term (weight `commitment`) on the encoder side, codebook term on each
//           selected codeword; the reported value is still the literal sum.
enum class TokenGradient { literal, split };

struct AlignmentConfig {
  double beta = 0.25;
  double commitment = 0.25;
  TokenGradient token_gradient = TokenGradient::split;
  // When false, x_i is a fixed target: neither alignment loss sends gradient into the backbone
  // through the content pass.
  bool content_gradient = false;

  void validate() const;
};

// |x_s - x_i|^2; optional gradients with respect to both arguments.
template <typename T>
double id_level_loss(const RowVec<T>& x_s, const RowVec<T>& x_i, RowVec<T>* d_x_s = nullptr,
                     RowVec<T>* d_x_i = nullptr);

// sum_m |r_m|^2 over a residual trail.
template <typename T>
double token_level_loss(const std::vector<RowVec<T>>& residuals);

double dmvae_loss(double id_loss, double token_loss, double beta);

struct TowerLoss {
  double id = 0.0;
  double token = 0.0;
};
// Sum of the per-tower dmvae losses for the towers present.
double dmvae_loss(std::span<const TowerLoss> towers, double beta);

// Gradient of the token loss with respect to z and the selected codewords.
template <typename T>
struct TokenLossGrad {
  RowVec<T> d_z;
  std::vector<RowVec<T>> d_codewords;  // one per level, for code.levels[m]
};
template <typename T>
TokenLossGrad<T> token_level_gradient(const ResidualCode<T>& code, TokenGradient mode, double commitment);

struct EntityAlignment {
  double id_loss = 0.0;
  double token_loss = 0.0;
  std::vector<int> levels;  // argmin path of the current encoding
};

// Token loss of one precomputed content embedding. Accumulates `weight` times the routed gradient
// into tower_grads and, if d_x_i is given, adds the gradient with respect to x_i.
template <typename T>
EntityAlignment token_alignment(const TowerQuantizer<T>& tower, const RowVec<T>& x_i, const AlignmentConfig& cfg,
                                double weight, TowerQuantizer<T>* tower_grads, RowVec<T>* d_x_i = nullptr);

// Both alignment losses for one entity: x_s pools the backbone states over the entity's ID tokens,
// x_i pools them over its content tokens. Gradients (scaled by id_weight / token_weight) are added
// to whichever grads pointers are non-null; the content pass only receives them when
// cfg.content_gradient is set.
template <typename T>
EntityAlignment entity_alignment(const Backbone<T>& model, const TowerQuantizer<T>& tower,
                                 std::span<const TokenId> content, std::span<const TokenId> id_tokens,
                                 const AlignmentConfig& cfg, double id_weight, double token_weight,
                                 BackboneParams<T>* backbone_grads, TowerQuantizer<T>* tower_grads);

}  // namespace ttds
