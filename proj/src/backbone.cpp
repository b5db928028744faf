#include "ttds/backbone.hpp"

#include "nn_ops.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <string_view>

namespace ttds {

using namespace detail;

// ---- parameter containers ---------------------------------------------------

template <typename T>
BackboneParams<T> BackboneParams<T>::zeros_like() const {
  BackboneParams<T> z = *this;
  z.set_zero();
  return z;
}

template <typename T>
void BackboneParams<T>::set_zero() {
  visit([](const std::string&, Mat<T>& m) { m.setZero(); });
}

template <typename T>
void BackboneParams<T>::add(const BackboneParams& other) {
  std::vector<const Mat<T>*> src;
  other.visit([&](const std::string&, const Mat<T>& m) { src.push_back(&m); });
  std::size_t i = 0;
  visit([&](const std::string&, Mat<T>& m) { m += *src[i++]; });
}

// ---- model ------------------------------------------------------------------

template <typename T>
Backbone<T>::Backbone(const BackboneConfig& cfg, int vocab_size, std::uint64_t seed) : config_(cfg) {
  if (cfg.d_model < 1 || cfg.layers < 1 || cfg.heads < 1 || cfg.max_len < 1 || cfg.ffn_mult < 1)
    throw ConfigError("backbone dimensions must be positive");
  if (cfg.d_model % cfg.heads != 0) throw ConfigError("d_model must be divisible by heads");
  if (vocab_size < 1) throw ConfigError("vocabulary is empty");
  std::mt19937_64 rng(seed);
  const int d = cfg.d_model, h = cfg.d_model * cfg.ffn_mult;
  const double std_w = 0.02, std_out = 0.02 / std::sqrt(2.0 * cfg.layers);
  auto& p = params_;
  p.tok_emb.resize(vocab_size, d), fill_normal(p.tok_emb, rng, std_w);
  p.pos_emb.resize(cfg.max_len, d), fill_normal(p.pos_emb, rng, std_w);
  p.layers.resize(static_cast<std::size_t>(cfg.layers));
  for (auto& l : p.layers) {
    l.ln1_g = const_mat<T>(1, d, T(1)), l.ln1_b = const_mat<T>(1, d, T(0));
    l.wq.resize(d, d), fill_normal(l.wq, rng, std_w);
    l.wk.resize(d, d), fill_normal(l.wk, rng, std_w);
    l.wv.resize(d, d), fill_normal(l.wv, rng, std_w);
    l.wo.resize(d, d), fill_normal(l.wo, rng, std_out);
    l.bo = const_mat<T>(1, d, T(0));
    l.ln2_g = const_mat<T>(1, d, T(1)), l.ln2_b = const_mat<T>(1, d, T(0));
    l.w1.resize(d, h), fill_normal(l.w1, rng, std_w);
    l.b1 = const_mat<T>(1, h, T(0));
    l.w2.resize(h, d), fill_normal(l.w2, rng, std_out);
    l.b2 = const_mat<T>(1, d, T(0));
  }
  p.lnf_g = const_mat<T>(1, d, T(1)), p.lnf_b = const_mat<T>(1, d, T(0));
  p.head_w.resize(d, vocab_size), fill_normal(p.head_w, rng, std_w);
  p.head_b = const_mat<T>(1, vocab_size, T(0));
}

template <typename T>
void Backbone<T>::grow_vocab(int new_size, std::uint64_t seed, T init_std) {
  const int old = vocab_size();
  if (new_size < old) throw StateError("vocabulary cannot shrink");
  if (new_size == old) return;
  std::mt19937_64 rng(seed);
  Mat<T> extra_rows(new_size - old, config_.d_model);
  fill_normal(extra_rows, rng, static_cast<double>(init_std));
  Mat<T> extra_cols(config_.d_model, new_size - old);
  fill_normal(extra_cols, rng, static_cast<double>(init_std));
  auto& p = params_;
  p.tok_emb.conservativeResize(new_size, Eigen::NoChange);
  p.tok_emb.bottomRows(new_size - old) = extra_rows;
  p.head_w.conservativeResize(Eigen::NoChange, new_size);
  p.head_w.rightCols(new_size - old) = extra_cols;
  p.head_b.conservativeResize(Eigen::NoChange, new_size);
  p.head_b.rightCols(new_size - old).setZero();
}

template <typename T>
void Backbone<T>::forward(std::span<const TokenId> ids_in, Trace& tr) const {
  if (ids_in.empty()) throw DataError("forward pass on an empty token sequence");
  tr.truncated = static_cast<int>(ids_in.size()) > config_.max_len;
  auto ids = tr.truncated ? ids_in.subspan(ids_in.size() - static_cast<std::size_t>(config_.max_len)) : ids_in;
  tr.ids.assign(ids.begin(), ids.end());
  const auto n = static_cast<Eigen::Index>(ids.size());
  const int d = config_.d_model, heads = config_.heads, dh = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  const auto& p = params_;

  Mat<T> x(n, d);
  for (Eigen::Index t = 0; t < n; ++t) {
    const TokenId id = ids[static_cast<std::size_t>(t)];
    if (id < 0 || id >= vocab_size()) throw DataError("token id " + std::to_string(id) + " out of range");
    x.row(t) = p.tok_emb.row(id) + p.pos_emb.row(t);
  }

  tr.layers.resize(p.layers.size());
  for (std::size_t li = 0; li < p.layers.size(); ++li) {
    const auto& w = p.layers[li];
    auto& lt = tr.layers[li];
    lt.x = x;
    lt.a = layer_norm(x, w.ln1_g, w.ln1_b, lt.xhat1, lt.rstd1);
    lt.q.noalias() = lt.a * w.wq;
    lt.k.noalias() = lt.a * w.wk;
    lt.v.noalias() = lt.a * w.wv;
    lt.o.resize(n, d);
    lt.probs.resize(static_cast<std::size_t>(heads));
    for (int hd = 0; hd < heads; ++hd) {
      Mat<T>& P = lt.probs[static_cast<std::size_t>(hd)];
      P.noalias() = lt.q.middleCols(hd * dh, dh) * lt.k.middleCols(hd * dh, dh).transpose();
      for (Eigen::Index i = 0; i < n; ++i) {
        auto row = P.row(i);
        row.head(i + 1) *= scale;
        softmax_inplace<T>(row.head(i + 1));
        row.tail(n - i - 1).setZero();
      }
      lt.o.middleCols(hd * dh, dh).noalias() = P * lt.v.middleCols(hd * dh, dh);
    }
    lt.y = x;
    lt.y.noalias() += lt.o * w.wo;
    lt.y.rowwise() += w.bo.row(0);
    lt.c = layer_norm(lt.y, w.ln2_g, w.ln2_b, lt.xhat2, lt.rstd2);
    lt.u.noalias() = lt.c * w.w1;
    lt.u.rowwise() += w.b1.row(0);
    lt.gu = gelu(lt.u);
    x = lt.y;
    x.noalias() += lt.gu * w.w2;
    x.rowwise() += w.b2.row(0);
  }
  tr.h = x;
  tr.f = layer_norm(x, p.lnf_g, p.lnf_b, tr.xhatf, tr.rstdf);
}

template <typename T>
Mat<T> Backbone<T>::head_logits(const Trace& tr, std::span<const int> rows) const {
  Mat<T> sel(static_cast<Eigen::Index>(rows.size()), config_.d_model);
  for (std::size_t i = 0; i < rows.size(); ++i) sel.row(static_cast<Eigen::Index>(i)) = tr.f.row(rows[i]);
  Mat<T> logits = sel * params_.head_w;
  logits.rowwise() += params_.head_b.row(0);
  return logits;
}

template <typename T>
Mat<T> Backbone<T>::all_logits(const Trace& tr) const {
  Mat<T> logits = tr.f * params_.head_w;
  logits.rowwise() += params_.head_b.row(0);
  return logits;
}

template <typename T>
void Backbone<T>::head_backward(const Trace& tr, std::span<const int> rows, const Mat<T>& d_logits,
                                BackboneParams<T>& g, Mat<T>& d_final) const {
  if (d_final.rows() != tr.f.rows() || d_final.cols() != tr.f.cols()) d_final = Mat<T>::Zero(tr.f.rows(), tr.f.cols());
  Mat<T> sel(static_cast<Eigen::Index>(rows.size()), config_.d_model);
  for (std::size_t i = 0; i < rows.size(); ++i) sel.row(static_cast<Eigen::Index>(i)) = tr.f.row(rows[i]);
  g.head_w.noalias() += sel.transpose() * d_logits;
  g.head_b.row(0) += d_logits.colwise().sum();
  Mat<T> d_sel = d_logits * params_.head_w.transpose();
  for (std::size_t i = 0; i < rows.size(); ++i) d_final.row(rows[i]) += d_sel.row(static_cast<Eigen::Index>(i));
}

template <typename T>
void Backbone<T>::backward(const Trace& tr, const Mat<T>& d_final, BackboneParams<T>& g) const {
  backward_stream(tr, layer_norm_backward(d_final, tr.xhatf, tr.rstdf, params_.lnf_g, g.lnf_g, g.lnf_b), g);
}

template <typename T>
void Backbone<T>::backward_stream(const Trace& tr, Mat<T> dx, BackboneParams<T>& g) const {
  const auto n = static_cast<Eigen::Index>(tr.ids.size());
  const int d = config_.d_model, heads = config_.heads, dh = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  const auto& p = params_;

  for (std::size_t li = p.layers.size(); li-- > 0;) {
    const auto& w = p.layers[li];
    auto& gw = g.layers[li];
    const auto& lt = tr.layers[li];

    // feed-forward block: x_out = y + gelu(c W1 + b1) W2 + b2
    gw.w2.noalias() += lt.gu.transpose() * dx;
    gw.b2.row(0) += dx.colwise().sum();
    Mat<T> du = ((dx * w.w2.transpose()).array() * gelu_grad(lt.u).array()).matrix();
    gw.w1.noalias() += lt.c.transpose() * du;
    gw.b1.row(0) += du.colwise().sum();
    Mat<T> dc = du * w.w1.transpose();
    Mat<T> dy = dx + layer_norm_backward(dc, lt.xhat2, lt.rstd2, w.ln2_g, gw.ln2_g, gw.ln2_b);

    // attention block: y = x + o Wo + bo
    gw.wo.noalias() += lt.o.transpose() * dy;
    gw.bo.row(0) += dy.colwise().sum();
    Mat<T> d_o = dy * w.wo.transpose();
    Mat<T> dq(n, d), dk(n, d), dv(n, d);
    for (int hd = 0; hd < heads; ++hd) {
      const Mat<T>& P = lt.probs[static_cast<std::size_t>(hd)];
      const auto doh = d_o.middleCols(hd * dh, dh);
      Mat<T> dP = doh * lt.v.middleCols(hd * dh, dh).transpose();
      dv.middleCols(hd * dh, dh).noalias() = P.transpose() * doh;
      Mat<T> dS = P;
      for (Eigen::Index i = 0; i < n; ++i) {
        const T dot = P.row(i).head(i + 1).dot(dP.row(i).head(i + 1));
        dS.row(i).head(i + 1) = (P.row(i).head(i + 1).array() * (dP.row(i).head(i + 1).array() - dot)).matrix();
      }
      dS *= scale;
      dq.middleCols(hd * dh, dh).noalias() = dS * lt.k.middleCols(hd * dh, dh);
      dk.middleCols(hd * dh, dh).noalias() = dS.transpose() * lt.q.middleCols(hd * dh, dh);
    }
    gw.wq.noalias() += lt.a.transpose() * dq;
    gw.wk.noalias() += lt.a.transpose() * dk;
    gw.wv.noalias() += lt.a.transpose() * dv;
    Mat<T> da = dq * w.wq.transpose();
    da.noalias() += dk * w.wk.transpose();
    da.noalias() += dv * w.wv.transpose();
    dx = dy + layer_norm_backward(da, lt.xhat1, lt.rstd1, w.ln1_g, gw.ln1_g, gw.ln1_b);
  }
  for (Eigen::Index t = 0; t < n; ++t) {
    g.tok_emb.row(tr.ids[static_cast<std::size_t>(t)]) += dx.row(t);
    g.pos_emb.row(t) += dx.row(t);
  }
}

template <typename T>
typename Backbone<T>::KvCache Backbone<T>::make_cache(int capacity) const {
  KvCache c;
  capacity = std::min(capacity, config_.max_len);
  c.k.assign(params_.layers.size(), Mat<T>(capacity, config_.d_model));
  c.v.assign(params_.layers.size(), Mat<T>(capacity, config_.d_model));
  return c;
}

template <typename T>
RowVec<T> Backbone<T>::step(TokenId id, KvCache& cache) const {
  const int pos = cache.length;
  if (cache.k.empty() || pos >= cache.k[0].rows()) throw StateError("decode cache is full");
  if (id < 0 || id >= vocab_size()) throw DataError("token id " + std::to_string(id) + " out of range");
  const int d = config_.d_model, heads = config_.heads, dh = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  const auto& p = params_;
  Mat<T> x = p.tok_emb.row(id) + p.pos_emb.row(pos);
  Mat<T> xhat;
  std::vector<T> rstd;
  for (std::size_t li = 0; li < p.layers.size(); ++li) {
    const auto& w = p.layers[li];
    Mat<T> a = layer_norm(x, w.ln1_g, w.ln1_b, xhat, rstd);
    Mat<T> q = a * w.wq;
    cache.k[li].row(pos) = a * w.wk;
    cache.v[li].row(pos) = a * w.wv;
    Mat<T> o(1, d);
    for (int hd = 0; hd < heads; ++hd) {
      RowVec<T> s = q.middleCols(hd * dh, dh) * cache.k[li].block(0, hd * dh, pos + 1, dh).transpose();
      s *= scale;
      softmax_inplace<T>(s);
      o.middleCols(hd * dh, dh).noalias() = s * cache.v[li].block(0, hd * dh, pos + 1, dh);
    }
    Mat<T> y = x + o * w.wo + w.bo;
    Mat<T> c = layer_norm(y, w.ln2_g, w.ln2_b, xhat, rstd);
    Mat<T> u = c * w.w1 + w.b1;
    x = y + gelu(u) * w.w2 + w.b2;
  }
  cache.length = pos + 1;
  Mat<T> f = layer_norm(x, p.lnf_g, p.lnf_b, xhat, rstd);
  return f * p.head_w + p.head_b;
}

// ---- free functions -----------------------------------------------------------

template <typename T>
Mat<T> forward_logits(const Backbone<T>& model, std::span<const TokenId> ids, bool* truncated) {
  typename Backbone<T>::Trace tr;
  model.forward(ids, tr);
  if (truncated) *truncated = tr.truncated;
  return model.all_logits(tr);
}

template <typename T>
RowVec<T> mean_pool(const Mat<T>& hidden, std::span<const TokenId> ids) {
  RowVec<T> acc = RowVec<T>::Zero(hidden.cols());
  int count = 0;
  for (std::size_t t = 0; t < ids.size(); ++t) {
    if (ids[t] == Vocabulary::kPad) continue;
    acc += hidden.row(static_cast<Eigen::Index>(t));
    ++count;
  }
  if (count == 0) throw DataError("mean pool over zero non-padding positions");
  return acc / static_cast<T>(count);
}

template <typename T>
void mean_pool_backward(std::span<const TokenId> ids, const RowVec<T>& d_pooled, Mat<T>& d_hidden) {
  int count = 0;
  for (TokenId id : ids) count += id != Vocabulary::kPad;
  if (count == 0) throw DataError("mean pool over zero non-padding positions");
  const T inv = T(1) / static_cast<T>(count);
  for (std::size_t t = 0; t < ids.size(); ++t)
    if (ids[t] != Vocabulary::kPad) d_hidden.row(static_cast<Eigen::Index>(t)) += d_pooled * inv;
}

template <typename T>
RowVec<T> embed_content(const Backbone<T>& model, std::span<const TokenId> ids) {
  if (ids.empty()) throw DataError("content embedding of an empty token sequence");
  typename Backbone<T>::Trace tr;
  model.forward(ids, tr);
  return mean_pool<T>(tr.h, tr.ids);
}

template <typename T>
RowVec<T> log_softmax(const RowVec<T>& row) {
  const T mx = row.maxCoeff();
  const T lse = mx + std::log((row.array() - mx).exp().sum());
  return (row.array() - lse).matrix();
}

template <typename T>
NllResult nll_loss(const Mat<T>& logits, std::span<const TokenId> targets, std::span<const std::uint8_t> mask,
                   Mat<T>* d_logits) {
  if (targets.size() != static_cast<std::size_t>(logits.rows()) || mask.size() != targets.size())
    throw DimensionError("nll_loss: logits, targets and mask disagree in length");
  NllResult r;
  if (d_logits) *d_logits = Mat<T>::Zero(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    if (!mask[static_cast<std::size_t>(i)]) continue;
    const TokenId t = targets[static_cast<std::size_t>(i)];
    if (t < 0 || t >= logits.cols()) throw DataError("nll_loss: target id out of range");
    RowVec<T> ls = log_softmax<T>(logits.row(i));
    r.loss -= static_cast<double>(ls(t));
    ++r.count;
    if (d_logits) {
      d_logits->row(i) = ls.array().exp().matrix();
      (*d_logits)(i, t) -= T(1);
    }
  }
  if (r.count == 0) throw DataError("nll_loss: mask selects zero positions");
  return r;
}

void extend_vocab(Vocabulary& vocab, Backbone<float>& model, int item_levels, int item_codes, int user_levels,
                  int user_codes, int suffixes, std::uint64_t seed) {
  if (model.vocab_size() != vocab.size()) throw StateError("model and vocabulary sizes disagree");
  vocab.extend(item_levels, item_codes, user_levels, user_codes, suffixes);
  model.grow_vocab(vocab.size(), seed);
}

template <typename T>
std::uint64_t params_hash(const BackboneParams<T>& params) {
  std::uint64_t h = 0;
  params.visit([&](const std::string& name, const Mat<T>& m) {
    h = mix_seed(h, std::hash<std::string>{}(name));
    std::string_view bytes(reinterpret_cast<const char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(T));
    h = mix_seed(h, std::hash<std::string_view>{}(bytes));
  });
  return h;
}

#define TTDS_INSTANTIATE(T)                                                                                     \
  template struct BackboneParams<T>;                                                                            \
  template class Backbone<T>;                                                                                   \
  template Mat<T> forward_logits<T>(const Backbone<T>&, std::span<const TokenId>, bool*);                       \
  template RowVec<T> embed_content<T>(const Backbone<T>&, std::span<const TokenId>);                            \
  template RowVec<T> mean_pool<T>(const Mat<T>&, std::span<const TokenId>);                                     \
  template void mean_pool_backward<T>(std::span<const TokenId>, const RowVec<T>&, Mat<T>&);                     \
  template RowVec<T> log_softmax<T>(const RowVec<T>&);                                                          \
  template NllResult nll_loss<T>(const Mat<T>&, std::span<const TokenId>, std::span<const std::uint8_t>, Mat<T>*); \
  template std::uint64_t params_hash<T>(const BackboneParams<T>&);

TTDS_INSTANTIATE(float)
TTDS_INSTANTIATE(double)

}  // namespace ttds
