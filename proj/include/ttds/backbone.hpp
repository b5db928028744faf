#pragma once

#include "ttds/common.hpp"
#include "ttds/vocab.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace ttds {

struct BackboneConfig {
  int d_model = 128;
  int layers = 4;
  int heads = 4;
  int max_len = 256;
  int ffn_mult = 4;
};

template <typename T>
struct LayerWeights {
  Mat<T> ln1_g, ln1_b;
  Mat<T> wq, wk, wv, wo, bo;
  Mat<T> ln2_g, ln2_b;
  Mat<T> w1, b1, w2, b2;
};

// All trainable tensors of the decoder. Row vectors are stored as 1xN matrices so that every
// tensor can be visited uniformly by the optimizer, checkpointing and gradient checks.
template <typename T>
struct BackboneParams {
  Mat<T> tok_emb;  // |V| x d
  Mat<T> pos_emb;  // L_max x d
  std::vector<LayerWeights<T>> layers;
  Mat<T> lnf_g, lnf_b;
  Mat<T> head_w;   // d x |V|
  Mat<T> head_b;   // 1 x |V|

  template <typename F>
  void visit(F&& f) {
    f(std::string("tok_emb"), tok_emb);
    f(std::string("pos_emb"), pos_emb);
    for (std::size_t i = 0; i < layers.size(); ++i) {
      auto& l = layers[i];
      const std::string p = "layer" + std::to_string(i) + ".";
      f(p + "ln1_g", l.ln1_g), f(p + "ln1_b", l.ln1_b);
      f(p + "wq", l.wq), f(p + "wk", l.wk), f(p + "wv", l.wv), f(p + "wo", l.wo), f(p + "bo", l.bo);
      f(p + "ln2_g", l.ln2_g), f(p + "ln2_b", l.ln2_b);
      f(p + "w1", l.w1), f(p + "b1", l.b1), f(p + "w2", l.w2), f(p + "b2", l.b2);
    }
    f(std::string("lnf_g"), lnf_g);
    f(std::string("lnf_b"), lnf_b);
    f(std::string("head_w"), head_w);
    f(std::string("head_b"), head_b);
  }
  template <typename F>
  void visit(F&& f) const {
    const_cast<BackboneParams*>(this)->visit([&](const std::string& n, Mat<T>& m) { f(n, std::as_const(m)); });
  }

  BackboneParams zeros_like() const;
  void set_zero();
  void add(const BackboneParams& other);
};

template <typename T>
class Backbone {
 public:
  Backbone() = default;
  Backbone(const BackboneConfig& config, int vocab_size, std::uint64_t seed);

  const BackboneConfig& config() const { return config_; }
  int vocab_size() const { return static_cast<int>(params_.tok_emb.rows()); }
  int d_model() const { return config_.d_model; }
  BackboneParams<T>& params() { return params_; }
  const BackboneParams<T>& params() const { return params_; }

  // Appends embedding rows and head columns for new tokens (small random init).
  void grow_vocab(int new_size, std::uint64_t seed, T init_std = T(0.02));

  // Per-sequence activations kept for the backward pass.
  struct LayerTrace {
    Mat<T> x, xhat1, a, q, k, v, o, y, xhat2, c, u, gu;
    std::vector<T> rstd1, rstd2;
    std::vector<Mat<T>> probs;  // per head, L x L lower-triangular
  };
  struct Trace {
    std::vector<TokenId> ids;
    std::vector<LayerTrace> layers;
    Mat<T> h, xhatf, f;  // pre-norm final stream, normalized, final hidden (post final norm)
    std::vector<T> rstdf;
    bool truncated = false;
  };

  // Runs the decoder up to the final hidden states. Inputs longer than max_len keep the
  // most recent max_len tokens (trace.truncated is set).
  void forward(std::span<const TokenId> ids, Trace& trace) const;

  // LM-head logits for selected positions of a forward trace.
  Mat<T> head_logits(const Trace& trace, std::span<const int> rows) const;
  Mat<T> all_logits(const Trace& trace) const;

  // Accumulates head gradients for `rows` and adds the induced gradient to d_final.
  void head_backward(const Trace& trace, std::span<const int> rows, const Mat<T>& d_logits, BackboneParams<T>& grads,
                     Mat<T>& d_final) const;
  // Backpropagates d_final (L x d, gradient w.r.t. final hidden states) through the decoder.
  void backward(const Trace& trace, const Mat<T>& d_final, BackboneParams<T>& grads) const;
  // Same, starting from the gradient w.r.t. the pre-norm final stream (trace.h).
  void backward_stream(const Trace& trace, Mat<T> d_stream, BackboneParams<T>& grads) const;

  // Incremental decoding with cached keys/values.
  struct KvCache {
    std::vector<Mat<T>> k, v;
    int length = 0;
  };
  KvCache make_cache(int capacity) const;
  // Feeds one token at position cache.length and returns that position's logits row.
  RowVec<T> step(TokenId id, KvCache& cache) const;

 private:
  BackboneConfig config_;
  BackboneParams<T> params_;
};

// Logits for every position of `ids`.
template <typename T>
Mat<T> forward_logits(const Backbone<T>& model, std::span<const TokenId> ids, bool* truncated = nullptr);

// Mean of the last block's output stream (before the final norm) over non-padding positions.
template <typename T>
RowVec<T> embed_content(const Backbone<T>& model, std::span<const TokenId> ids);
template <typename T>
RowVec<T> mean_pool(const Mat<T>& hidden, std::span<const TokenId> ids);

// Gradient of mean_pool: spreads d_pooled over the pooled rows.
template <typename T>
void mean_pool_backward(std::span<const TokenId> ids, const RowVec<T>& d_pooled, Mat<T>& d_hidden);

struct NllResult {
  double loss = 0.0;
  int count = 0;
};

// Sum over masked rows of -log softmax(logits)[target]. Rows/targets/mask are parallel.
template <typename T>
NllResult nll_loss(const Mat<T>& logits, std::span<const TokenId> targets, std::span<const std::uint8_t> mask,
                   Mat<T>* d_logits = nullptr);

template <typename T>
RowVec<T> log_softmax(const RowVec<T>& row);

// Appends the semantic block to `vocab` and grows the embedding table and LM head to match.
void extend_vocab(Vocabulary& vocab, Backbone<float>& model, int item_levels, int item_codes, int user_levels,
                  int user_codes, int suffixes, std::uint64_t seed);

// Hash over every parameter byte; used to verify freezes.
template <typename T>
std::uint64_t params_hash(const BackboneParams<T>& params);

}  // namespace ttds
