#include "ttds/quantizer.hpp"

#include "nn_ops.hpp"
#include "ttds/kernels.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <random>

namespace ttds {

using namespace detail;

void TowerConfig::validate(int backbone_dim) const {
  const std::string t = tower_name(tower);
  if (levels < 1) throw ConfigError(t + " tower: levels must be >= 1");
  if (codes < 2) throw ConfigError(t + " tower: codes must be >= 2");
  if (code_dim < 1) throw ConfigError(t + " tower: code_dim must be >= 1");
  if (widths.size() < 2) throw ConfigError(t + " tower: projection needs at least input and output widths");
  if (widths.front() != backbone_dim)
    throw ConfigError(t + " tower: projection input width " + std::to_string(widths.front()) +
                      " != backbone d " + std::to_string(backbone_dim));
  if (widths.back() != code_dim) throw ConfigError(t + " tower: projection output width != code_dim");
  for (int w : widths)
    if (w < 1) throw ConfigError(t + " tower: projection widths must be positive");
}

// ---- projection ---------------------------------------------------------------

template <typename T>
Projection<T>::Projection(const std::vector<int>& widths, std::uint64_t seed) {
  if (widths.size() < 2) throw ConfigError("projection needs at least two widths");
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    Mat<T> w(widths[i], widths[i + 1]);
    fill_normal(w, rng, 1.0 / std::sqrt(static_cast<double>(widths[i])));
    weights.push_back(std::move(w));
    biases.push_back(Mat<T>::Zero(1, widths[i + 1]));
  }
}

template <typename T>
Mat<T> Projection<T>::forward(const Mat<T>& x, Trace* trace) const {
  if (x.cols() != input_dim())
    throw DimensionError("projection input has width " + std::to_string(x.cols()) + ", expected " +
                         std::to_string(input_dim()));
  Mat<T> h = x;
  if (trace) trace->inputs.clear(), trace->pre.clear();
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (trace) trace->inputs.push_back(h);
    Mat<T> u = h * weights[i];
    u.rowwise() += biases[i].row(0);
    if (i + 1 < weights.size()) {
      if (trace) trace->pre.push_back(u);
      h = gelu(u);
    } else {
      h = std::move(u);
    }
  }
  return h;
}

template <typename T>
Mat<T> Projection<T>::backward(const Trace& trace, const Mat<T>& d_out, Projection& grads) const {
  Mat<T> d = d_out;
  for (std::size_t i = weights.size(); i-- > 0;) {
    if (i + 1 < weights.size()) d = (d.array() * gelu_grad(trace.pre[i]).array()).matrix();
    grads.weights[i].noalias() += trace.inputs[i].transpose() * d;
    grads.biases[i].row(0) += d.colwise().sum();
    d = d * weights[i].transpose();
  }
  return d;
}

template <typename T>
Projection<T> Projection<T>::zeros_like() const {
  Projection z = *this;
  for (auto& w : z.weights) w.setZero();
  for (auto& b : z.biases) b.setZero();
  return z;
}

template <typename T>
TowerQuantizer<T>::TowerQuantizer(const TowerConfig& cfg, std::uint64_t seed)
    : config(cfg), projection(cfg.widths, mix_seed(seed, 1)) {
  std::mt19937_64 rng(mix_seed(seed, 2));
  for (int m = 0; m < cfg.levels; ++m) {
    Mat<T> cb(cfg.codes, cfg.code_dim);
    fill_normal(cb, rng, 0.1);
    codebooks.push_back(std::move(cb));
  }
}

template <typename T>
TowerQuantizer<T> TowerQuantizer<T>::zeros_like() const {
  TowerQuantizer z = *this;
  z.projection = projection.zeros_like();
  for (auto& cb : z.codebooks) cb.setZero();
  return z;
}

template <typename T>
RowVec<T> project(const RowVec<T>& embedding, const TowerQuantizer<T>& tower) {
  if (embedding.cols() != tower.projection.input_dim())
    throw DimensionError("embedding dimension " + std::to_string(embedding.cols()) + " != projection input " +
                         std::to_string(tower.projection.input_dim()));
  Mat<T> x = embedding;
  return tower.projection.forward(x).row(0);
}

// ---- residual quantization ----------------------------------------------------

template <typename T>
ResidualCode<T> residual_encode(const RowVec<T>& z, const std::vector<Mat<T>>& codebooks) {
  if (codebooks.empty()) throw ConfigError("residual_encode needs at least one codebook");
  if (!z.allFinite()) throw NumericError("residual_encode: input vector holds NaN or infinity");
  ResidualCode<T> out;
  RowVec<T> r = z;
  for (const auto& cb : codebooks) {
    if (cb.cols() != z.cols()) throw DimensionError("codebook width differs from vector width");
    int best = 0;
    T best_d = std::numeric_limits<T>::infinity();
    for (Eigen::Index c = 0; c < cb.rows(); ++c) {
      const T dd = kernels::squared_distance(r.data(), cb.row(c).data(), r.cols());
      if (dd < best_d) best_d = dd, best = static_cast<int>(c);
    }
    r -= cb.row(best);
    out.levels.push_back(best);
    out.residuals.push_back(r);
  }
  return out;
}

template <typename T>
RowVec<T> reconstruct(std::span<const int> levels, const std::vector<Mat<T>>& codebooks) {
  if (levels.size() != codebooks.size()) throw DimensionError("reconstruct: level count differs from codebook count");
  RowVec<T> acc = RowVec<T>::Zero(codebooks.front().cols());
  for (std::size_t m = 0; m < levels.size(); ++m) {
    if (levels[m] < 0 || levels[m] >= codebooks[m].rows())
      throw DataError("reconstruct: index " + std::to_string(levels[m]) + " out of range at level " +
                      std::to_string(m));
    acc += codebooks[m].row(levels[m]);
  }
  return acc;
}

namespace {

// Lloyd iterations in place; returns the final assignment.
template <typename T>
std::vector<int> lloyd(const Mat<T>& points, Mat<T>& centroids, int iterations) {
  const Eigen::Index n = points.rows(), d = points.cols();
  const auto k = static_cast<int>(centroids.rows());
  std::vector<int> assign, prev;
  std::vector<T> dist;
  for (int it = 0; it < iterations; ++it) {
    kernels::nearest_parallel(points, centroids, assign, dist);
    if (assign == prev) break;
    prev = assign;
    Mat<T> sums = Mat<T>::Zero(k, d);
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(assign[static_cast<std::size_t>(i)]) += points.row(i);
      ++counts[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        centroids.row(c) = sums.row(c) / static_cast<T>(counts[static_cast<std::size_t>(c)]);
        continue;
      }
      // empty cluster: take over the point worst served by its current centroid
      auto far = std::max_element(dist.begin(), dist.end()) - dist.begin();
      centroids.row(c) = points.row(far);
      dist[static_cast<std::size_t>(far)] = T(-1);
    }
  }
  kernels::nearest_parallel(points, centroids, assign, dist);
  return assign;
}

}  // namespace

template <typename T>
Mat<T> kmeans(const Mat<T>& points, int k, const KMeansOptions& opt, std::vector<int>* assignment) {
  const Eigen::Index n = points.rows(), d = points.cols();
  if (k < 1) throw ConfigError("kmeans: k must be >= 1");
  if (n < k)
    throw DataError("kmeans: " + std::to_string(n) + " vectors cannot seed " + std::to_string(k) + " centroids");
  std::mt19937_64 rng(opt.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  Mat<T> centroids(k, d);
  std::vector<double> d2(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  Eigen::Index pick = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(n));
  for (int c = 0; c < k; ++c) {
    if (c > 0) {
      double total = 0.0;
      for (double v : d2) total += v;
      if (total > 0.0) {
        double target = unit(rng) * total, acc = 0.0;
        pick = n - 1;
        for (Eigen::Index i = 0; i < n; ++i) {
          acc += d2[static_cast<std::size_t>(i)];
          if (acc > target && d2[static_cast<std::size_t>(i)] > 0.0) {
            pick = i;
            break;
          }
        }
      } else {
        pick = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(n));
      }
    }
    centroids.row(c) = points.row(pick);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double dd = static_cast<double>(kernels::squared_distance(points.row(i).data(), centroids.row(c).data(), d));
      d2[static_cast<std::size_t>(i)] = std::min(d2[static_cast<std::size_t>(i)], dd);
    }
  }

  std::vector<int> assign = lloyd(points, centroids, opt.iterations);
  if (assignment) *assignment = std::move(assign);
  return centroids;
}

namespace {

// Identical codewords can only arise from degenerate inputs; nudge them apart.
template <typename T>
void separate_duplicates(Mat<T>& cb, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1e-3);
  for (Eigen::Index i = 1; i < cb.rows(); ++i) {
    for (Eigen::Index j = 0; j < i; ++j) {
      if (cb.row(i) == cb.row(j)) {
        for (Eigen::Index c = 0; c < cb.cols(); ++c) cb(i, c) += static_cast<T>(nd(rng));
        j = -1;  // re-check against every earlier row
      }
    }
  }
}

}  // namespace

template <typename T>
std::vector<Mat<T>> kmeans_init(const Mat<T>& projected, const TowerConfig& config, const KMeansOptions& options) {
  if (projected.rows() < config.codes)
    throw DataError(std::string(tower_name(config.tower)) + " tower: kmeans_init needs at least " +
                    std::to_string(config.codes) + " vectors, got " + std::to_string(projected.rows()));
  if (projected.cols() != config.code_dim) throw DimensionError("kmeans_init: vectors do not match code_dim");
  std::vector<Mat<T>> books;
  Mat<T> residual = projected;
  std::mt19937_64 rng(mix_seed(options.seed, 99));
  for (int m = 0; m < config.levels; ++m) {
    KMeansOptions o = options;
    o.seed = mix_seed(options.seed, static_cast<std::uint64_t>(m));
    std::vector<int> assign;
    Mat<T> cb = kmeans(residual, config.codes, o, &assign);
    for (Eigen::Index i = 0; i < residual.rows(); ++i) residual.row(i) -= cb.row(assign[static_cast<std::size_t>(i)]);
    separate_duplicates(cb, rng);
    books.push_back(std::move(cb));
  }
  return books;
}

template <typename T>
std::vector<double> mean_residual_norms(const Mat<T>& projected, const std::vector<Mat<T>>& codebooks) {
  std::vector<double> sums(codebooks.size(), 0.0);
  Mat<T> res = projected;
  for (std::size_t m = 0; m < codebooks.size(); ++m) {
    std::vector<int> idx;
    std::vector<T> dist;
    kernels::nearest_parallel(res, codebooks[m], idx, dist);
    for (Eigen::Index i = 0; i < res.rows(); ++i) {
      res.row(i) -= codebooks[m].row(idx[static_cast<std::size_t>(i)]);
      sums[m] += static_cast<double>(res.row(i).squaredNorm());
    }
    sums[m] /= static_cast<double>(std::max<Eigen::Index>(1, res.rows()));
  }
  return sums;
}

// ---- assignment -----------------------------------------------------------------

std::optional<std::size_t> IndexAssignment::index_of(const std::string& entity) const {
  auto it = std::lower_bound(entities.begin(), entities.end(), entity);
  if (it == entities.end() || *it != entity) return std::nullopt;
  return static_cast<std::size_t>(it - entities.begin());
}

const SemanticId& IndexAssignment::id_of(const std::string& entity) const {
  auto i = index_of(entity);
  if (!i) throw DataError(std::string("no ") + tower_name(tower) + " semantic ID assigned to '" + entity + "'");
  return ids[*i];
}

std::optional<std::string> IndexAssignment::entity_of(const SemanticId& id) const {
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (ids[i] == id) return entities[i];
  return std::nullopt;
}

std::vector<std::string> IndexAssignment::collision_set(const std::string& entity) const {
  const auto& levels = id_of(entity).levels;
  std::vector<std::pair<int, std::string>> members;
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (ids[i].levels == levels) members.emplace_back(ids[i].suffix, entities[i]);
  std::sort(members.begin(), members.end());
  std::vector<std::string> out;
  for (auto& m : members) out.push_back(std::move(m.second));
  return out;
}

std::vector<TokenId> id_tokens(const SemanticId& id, const Vocabulary& vocab) {
  std::vector<TokenId> out;
  out.reserve(id.levels.size() + 1);
  for (std::size_t m = 0; m < id.levels.size(); ++m)
    out.push_back(vocab.semantic_token(id.tower, static_cast<int>(m), id.levels[m]));
  out.push_back(vocab.suffix_token(id.suffix));
  return out;
}

IndexAssignment assign_ids(const std::vector<std::string>& entities, const Mat<float>& projected,
                           const std::vector<Mat<float>>& codebooks, Tower tower, int max_suffixes, int epoch) {
  if (static_cast<Eigen::Index>(entities.size()) != projected.rows())
    throw DimensionError("assign_ids: entity count differs from embedding rows");
  if (!std::is_sorted(entities.begin(), entities.end())) throw DataError("assign_ids: entities must be sorted");
  if (!projected.allFinite()) throw NumericError("assign_ids: projected vectors hold NaN or infinity");
  Mat<int> levels;
  Mat<float> residual;
  kernels::encode_parallel(projected, codebooks, levels, residual);

  IndexAssignment out;
  out.tower = tower;
  out.epoch = epoch;
  out.entities = entities;
  out.ids.resize(entities.size());
  std::map<std::vector<int>, int> next_suffix;
  for (std::size_t i = 0; i < entities.size(); ++i) {
    SemanticId& id = out.ids[i];
    id.tower = tower;
    id.levels.assign(levels.row(static_cast<Eigen::Index>(i)).data(),
                     levels.row(static_cast<Eigen::Index>(i)).data() + levels.cols());
    id.suffix = next_suffix[id.levels]++;
  }
  for (const auto& [tuple, size] : next_suffix) {
    if (size <= max_suffixes) continue;
    std::string name = "<";
    for (std::size_t m = 0; m < tuple.size(); ++m) name += (m ? "," : "") + std::to_string(tuple[m]);
    throw CollisionOverflowError(std::string(tower_name(tower)) + " collision set " + name + "> holds " +
                                 std::to_string(size) + " entities, suffix budget is " +
                                 std::to_string(max_suffixes));
  }
  return out;
}

Mat<float> project_batch(const Mat<float>& embeddings, const TowerQuantizer<float>& tower) {
  return tower.projection.forward(embeddings);
}

template <typename T>
void refit_codebooks(const Mat<T>& projected, std::vector<Mat<T>>& codebooks, int iterations) {
  Mat<T> residual = projected;
  for (auto& cb : codebooks) {
    if (cb.cols() != residual.cols()) throw DimensionError("refit_codebooks: codebook width differs from the vectors");
    const std::vector<int> assign = lloyd(residual, cb, iterations);
    for (Eigen::Index i = 0; i < residual.rows(); ++i) residual.row(i) -= cb.row(assign[static_cast<std::size_t>(i)]);
  }
}

IndexAssignment reindex(const Backbone<float>& model, const std::vector<std::string>& entities,
                        const std::vector<std::vector<TokenId>>& contents, TowerQuantizer<float>& tower,
                        int max_suffixes, const IndexAssignment& previous, int refit_iterations) {
  Mat<float> emb = kernels::embed_parallel(model, contents);
  const Mat<float> z = project_batch(emb, tower);
  if (refit_iterations > 0) refit_codebooks(z, tower.codebooks, refit_iterations);
  return assign_ids(entities, z, tower.codebooks, tower.config.tower, max_suffixes, previous.epoch + 1);
}

void write_assignment_jsonl(const IndexAssignment& a, std::ostream& out) {
  for (std::size_t i = 0; i < a.entities.size(); ++i)
    out << nlohmann::json{{"entity_id", a.entities[i]},
                          {"tower", tower_name(a.tower)},
                          {"levels", a.ids[i].levels},
                          {"suffix", a.ids[i].suffix},
                          {"epoch", a.epoch}}
               .dump()
        << '\n';
}

IndexAssignment read_assignment_jsonl(std::istream& in) {
  IndexAssignment a;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    if (first) {
      a.tower = parse_tower(j.at("tower").get<std::string>());
      a.epoch = j.at("epoch").get<int>();
      first = false;
    }
    a.entities.push_back(j.at("entity_id").get<std::string>());
    a.ids.push_back({a.tower, j.at("levels").get<std::vector<int>>(), j.at("suffix").get<int>()});
  }
  return a;
}

template struct Projection<float>;
template struct Projection<double>;
template struct TowerQuantizer<float>;
template struct TowerQuantizer<double>;
template RowVec<float> project<float>(const RowVec<float>&, const TowerQuantizer<float>&);
template RowVec<double> project<double>(const RowVec<double>&, const TowerQuantizer<double>&);
template ResidualCode<float> residual_encode<float>(const RowVec<float>&, const std::vector<Mat<float>>&);
template ResidualCode<double> residual_encode<double>(const RowVec<double>&, const std::vector<Mat<double>>&);
template RowVec<float> reconstruct<float>(std::span<const int>, const std::vector<Mat<float>>&);
template RowVec<double> reconstruct<double>(std::span<const int>, const std::vector<Mat<double>>&);
template Mat<float> kmeans<float>(const Mat<float>&, int, const KMeansOptions&, std::vector<int>*);
template Mat<double> kmeans<double>(const Mat<double>&, int, const KMeansOptions&, std::vector<int>*);
template std::vector<Mat<float>> kmeans_init<float>(const Mat<float>&, const TowerConfig&, const KMeansOptions&);
template std::vector<Mat<double>> kmeans_init<double>(const Mat<double>&, const TowerConfig&, const KMeansOptions&);
template void refit_codebooks<float>(const Mat<float>&, std::vector<Mat<float>>&, int);
template void refit_codebooks<double>(const Mat<double>&, std::vector<Mat<double>>&, int);
template std::vector<double> mean_residual_norms<float>(const Mat<float>&, const std::vector<Mat<float>>&);
template std::vector<double> mean_residual_norms<double>(const Mat<double>&, const std::vector<Mat<double>>&);

}  // namespace ttds
