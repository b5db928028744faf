#include "ttds/trainer.hpp"

#include "ttds/eval.hpp"
#include "ttds/inference.hpp"
#include "ttds/kernels.hpp"
#include "ttds/omp.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <regex>
#include <set>

namespace ttds {

void TrainConfig::validate() const {
  align.validate();
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ConfigError("train.alpha must be a finite value >= 0");
  for (double lr : {pretrain_lr, warmup_lr, joint_lr})
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("learning rates must be finite and > 0");
  if (pretrain_epochs < 0 || warmup_epochs < 0 || joint_epochs < 0) throw ConfigError("epoch counts must be >= 0");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (reindex_interval < 1) throw ConfigError("train.reindex_interval must be >= 1");
  if (max_suffixes < 1) throw ConfigError("quantizer.max_suffixes must be >= 1");
  if (kmeans_iterations < 1) throw ConfigError("quantizer.kmeans_iterations must be >= 1");
  if (refit_iterations < 0) throw ConfigError("train.refit_iterations must be >= 0");
  if (!(joint_commitment >= 0.0)) throw ConfigError("align.joint_commitment must be >= 0");
  if (weight_decay < 0.0) throw ConfigError("train.weight_decay must be >= 0");
  if (grad_clip < 0.0) throw ConfigError("train.grad_clip must be >= 0");
  if (heldout_fraction < 0.0 || heldout_fraction >= 1.0) throw ConfigError("train.heldout_fraction must lie in [0, 1)");
}

double total_loss(double llm, double dmvae, double alpha) { return llm + alpha * dmvae; }

nlohmann::json EpochMetrics::to_json() const {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  nlohmann::json j;
  j["stage"] = stage;
  j["epoch"] = epoch;
  j["L_LLM"] = opt(l_llm);
  j["L_ID"] = opt(l_id);
  j["L_Token"] = opt(l_token);
  j["L_total"] = opt(l_total);
  j["collision_rate"] = opt(collision_rate);
  j["HR@10_valid"] = opt(hr10_valid);
  if (l_llm_heldout) j["L_LLM_heldout"] = *l_llm_heldout;
  j["wall_time"] = wall_time;
  return j;
}

// ---- content ----------------------------------------------------------------------

ContentIndex ContentIndex::build(const Dataset& data, const Vocabulary& vocab) {
  ContentIndex c;
  for (const auto& r : data.items) c.item[r.entity_id] = encode_text(r.text, vocab);
  for (const auto& r : data.users) c.user[r.entity_id] = encode_text(r.text, vocab);
  for (auto* m : {&c.item, &c.user})
    for (auto& [id, toks] : *m)
      if (toks.empty()) toks.push_back(Vocabulary::kUnk);
  return c;
}

const std::vector<TokenId>& ContentIndex::of(Tower t, const std::string& entity) const {
  const auto& m = t == Tower::item ? item : user;
  auto it = m.find(entity);
  if (it == m.end()) throw DataError(std::string("no content for ") + tower_name(t) + " '" + entity + "'");
  return it->second;
}

std::vector<std::string> ContentIndex::entities(Tower t) const {
  std::vector<std::string> out;
  for (const auto& [id, toks] : t == Tower::item ? item : user) out.push_back(id);
  return out;
}

std::vector<std::vector<TokenId>> ContentIndex::sequences(Tower t) const {
  std::vector<std::vector<TokenId>> out;
  for (const auto& [id, toks] : t == Tower::item ? item : user) out.push_back(toks);
  return out;
}

Vocabulary build_vocabulary(const Dataset& data, const std::vector<PromptTemplate>& templates, int min_freq) {
  std::vector<std::string> corpus;
  for (const auto& r : data.items) corpus.push_back(r.text);
  for (const auto& r : data.users) corpus.push_back(r.text);
  static const std::regex placeholder(R"(\{[a-z_]+\})");
  for (const auto& t : templates) corpus.push_back(std::regex_replace(t.text, placeholder, " "));
  return Vocabulary::build(corpus, min_freq);
}

// ---- shared helpers ---------------------------------------------------------------

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

template <typename T>
void clip_gradients(const std::vector<ParamRef<T>>& grads, double max_norm) {
  if (max_norm <= 0.0) return;
  double sq = 0.0;
  for (const auto& g : grads) sq += g.value->template cast<double>().squaredNorm();
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) return;  // AdamW::step reports the offending tensor
  if (norm > max_norm) {
    const T s = static_cast<T>(max_norm / norm);
    for (const auto& g : grads) *g.value *= s;
  }
}

template <typename T, typename Container>
void add_into(Container& dst, Container& src) {
  auto d = collect_params<T>(dst);
  auto s = collect_params<T>(src);
  for (std::size_t i = 0; i < d.size(); ++i) *d[i].value += *s[i].value;
}

template <typename T, typename Container>
void zero_all(Container& c) {
  c.visit([](const std::string&, Mat<T>& m) { m.setZero(); });
}

// LM loss of one token sequence over the positions whose *next* token is masked in.
template <typename T>
double sequence_nll(const Backbone<T>& model, std::span<const TokenId> tokens, std::span<const std::uint8_t> mask,
                    double scale, BackboneParams<T>* grads, int* count) {
  typename Backbone<T>::Trace tr;
  model.forward(tokens, tr);
  const std::size_t offset = tokens.size() - tr.ids.size();
  std::vector<int> rows;
  std::vector<TokenId> targets;
  for (std::size_t p = 0; p + 1 < tr.ids.size(); ++p) {
    if (!mask.empty() && !mask[offset + p + 1]) continue;
    rows.push_back(static_cast<int>(p));
    targets.push_back(tr.ids[p + 1]);
  }
  if (count) *count = static_cast<int>(rows.size());
  if (rows.empty()) return 0.0;
  const Mat<T> logits = model.head_logits(tr, rows);
  const std::vector<std::uint8_t> ones(rows.size(), 1);
  Mat<T> d_logits;
  const NllResult r = nll_loss<T>(logits, targets, ones, grads ? &d_logits : nullptr);
  if (grads) {
    d_logits *= static_cast<T>(scale);
    Mat<T> d_final = Mat<T>::Zero(tr.f.rows(), tr.f.cols());
    model.head_backward(tr, rows, d_logits, *grads, d_final);
    model.backward(tr, d_final, *grads);
  }
  return r.loss;
}

std::vector<TokenId> with_bos(const std::vector<TokenId>& doc) {
  std::vector<TokenId> out{Vocabulary::kBos};
  out.insert(out.end(), doc.begin(), doc.end());
  return out;
}

}  // namespace

// ---- stage 0 ----------------------------------------------------------------------

double document_loss(const Backbone<float>& model, const std::vector<std::vector<TokenId>>& documents) {
  const auto n = static_cast<std::ptrdiff_t>(documents.size());
  std::vector<double> loss(documents.size(), 0.0);
  std::vector<int> count(documents.size(), 0);
  TTDS_OMP(parallel for schedule(dynamic, 8) num_threads(worker_threads()))
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto seq = with_bos(documents[static_cast<std::size_t>(i)]);
    loss[static_cast<std::size_t>(i)] =
        sequence_nll<float>(model, seq, {}, 1.0, nullptr, &count[static_cast<std::size_t>(i)]);
  }
  const double total = std::accumulate(loss.begin(), loss.end(), 0.0);
  const int tokens = std::accumulate(count.begin(), count.end(), 0);
  return tokens ? total / tokens : 0.0;
}

PretrainReport pretrain_backbone(Backbone<float>& model, const std::vector<std::vector<TokenId>>& documents,
                                 const TrainConfig& cfg, const MetricsSink& sink) {
  cfg.validate();
  if (documents.empty()) throw EmptyCorpusError("pretraining needs at least one document");
  std::mt19937_64 rng(mix_seed(cfg.seed, 0x5052));
  std::vector<std::size_t> order(documents.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_held = static_cast<std::size_t>(std::floor(cfg.heldout_fraction * static_cast<double>(documents.size())));
  std::vector<std::vector<TokenId>> train, held;
  for (std::size_t i = 0; i < order.size(); ++i) (i < n_held ? held : train).push_back(documents[order[i]]);
  if (held.empty()) held = train;
  if (train.empty()) train = held;

  PretrainReport report;
  report.heldout_loss.push_back(document_loss(model, held));
  if (sink) {
    EpochMetrics m;
    m.stage = "pretrain";
    m.epoch = 0;
    m.l_llm_heldout = report.heldout_loss[0];
    sink(m);
  }

  AdamW<float> opt(AdamWConfig{0.9, 0.999, 1e-8, cfg.weight_decay});
  BackboneParams<float> grads = model.params().zeros_like();
  const int threads = worker_threads();
  std::vector<BackboneParams<float>> local(static_cast<std::size_t>(threads), grads);

  for (int epoch = 1; epoch <= cfg.pretrain_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::size_t> idx(train.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    double epoch_loss = 0.0;
    long epoch_tokens = 0;
    for (std::size_t b = 0; b < idx.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t e = std::min(idx.size(), b + static_cast<std::size_t>(cfg.batch_size));
      std::vector<std::vector<TokenId>> seqs;
      int tokens = 0;
      for (std::size_t i = b; i < e; ++i) {
        seqs.push_back(with_bos(train[idx[i]]));
        tokens += static_cast<int>(std::min<std::size_t>(seqs.back().size(), static_cast<std::size_t>(model.config().max_len))) - 1;
      }
      if (tokens == 0) continue;
      for (auto& g : local) g.set_zero();
      std::vector<double> loss(seqs.size(), 0.0);
      const auto n = static_cast<std::ptrdiff_t>(seqs.size());
      TTDS_OMP(parallel for schedule(static) num_threads(threads))
      for (std::ptrdiff_t i = 0; i < n; ++i) {
        auto& g = local[static_cast<std::size_t>(omp_get_thread_num())];
        loss[static_cast<std::size_t>(i)] =
            sequence_nll<float>(model, seqs[static_cast<std::size_t>(i)], {}, 1.0 / tokens, &g, nullptr);
      }
      grads.set_zero();
      for (auto& g : local) grads.add(g);
      const double batch_loss = std::accumulate(loss.begin(), loss.end(), 0.0);
      if (!std::isfinite(batch_loss))
        throw NumericError("pretraining loss diverged in epoch " + std::to_string(epoch));
      epoch_loss += batch_loss;
      epoch_tokens += tokens;
      auto p = collect_params<float>(model.params());
      auto g = collect_params<float>(grads);
      clip_gradients(g, cfg.grad_clip);
      opt.step(p, g, cfg.pretrain_lr);
    }
    report.train_loss.push_back(epoch_tokens ? epoch_loss / static_cast<double>(epoch_tokens) : 0.0);
    report.heldout_loss.push_back(document_loss(model, held));
    if (sink) {
      EpochMetrics m;
      m.stage = "pretrain";
      m.epoch = epoch;
      m.l_llm = report.train_loss.back();
      m.l_total = m.l_llm;
      m.l_llm_heldout = report.heldout_loss.back();
      m.wall_time = seconds_since(t0);
      sink(m);
    }
  }
  return report;
}

// ---- stage 1 ----------------------------------------------------------------------

double warmup_epoch(TowerQuantizer<float>& tower, const Mat<float>& embeddings, const TrainConfig& cfg,
                    AdamW<float>& optimizer, std::mt19937_64& rng) {
  const int threads = worker_threads();
  const auto n = static_cast<std::size_t>(embeddings.rows());
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  TowerQuantizer<float> grads = tower.zeros_like();
  std::vector<TowerQuantizer<float>> local(static_cast<std::size_t>(threads), grads);
  double tower_loss = 0.0;
  for (std::size_t b = 0; b < n; b += static_cast<std::size_t>(cfg.batch_size)) {
    const std::size_t e = std::min(n, b + static_cast<std::size_t>(cfg.batch_size));
    const double w = 1.0 / static_cast<double>(e - b);
    for (auto& g : local) zero_all<float>(g);
    std::vector<double> loss(e - b, 0.0);
    const auto m = static_cast<std::ptrdiff_t>(e - b);
    TTDS_OMP(parallel for schedule(static) num_threads(threads))
    for (std::ptrdiff_t i = 0; i < m; ++i) {
      const RowVec<float> x = embeddings.row(static_cast<Eigen::Index>(idx[b + static_cast<std::size_t>(i)]));
      loss[static_cast<std::size_t>(i)] =
          token_alignment(tower, x, cfg.align, w, &local[static_cast<std::size_t>(omp_get_thread_num())]).token_loss;
    }
    zero_all<float>(grads);
    for (auto& g : local) add_into<float>(grads, g);
    tower_loss += std::accumulate(loss.begin(), loss.end(), 0.0);
    auto p = collect_params<float>(tower);
    auto g = collect_params<float>(grads);
    clip_gradients(g, cfg.grad_clip);
    optimizer.step(p, g, cfg.warmup_lr);
  }
  return tower_loss / static_cast<double>(std::max<std::size_t>(n, 1));
}

WarmupReport warmup_quantizer(ModelBundle& model, const ContentIndex& content, const TrainConfig& cfg,
                              const MetricsSink& sink) {
  cfg.validate();
  if (!model.vocab.extended()) throw StateError("warm-up needs the vocabulary extended with semantic tokens");
  const Tower towers[2] = {Tower::item, Tower::user};
  WarmupReport report;
  Mat<float> embeddings[2];
  std::vector<std::string> entities[2];
  AdamW<float> opts[2] = {AdamW<float>(AdamWConfig{0.9, 0.999, 1e-8, cfg.weight_decay}),
                          AdamW<float>(AdamWConfig{0.9, 0.999, 1e-8, cfg.weight_decay})};
  for (int t = 0; t < 2; ++t) {
    auto& tower = model.quantizer.tower(towers[t]);
    tower.config.validate(model.backbone.d_model());
    entities[t] = content.entities(towers[t]);
    embeddings[t] = kernels::embed_parallel(model.backbone, content.sequences(towers[t]));
    const Mat<float> z = project_batch(embeddings[t], tower);
    tower.codebooks = kmeans_init(z, tower.config, KMeansOptions{cfg.kmeans_iterations, mix_seed(cfg.seed, 0x4B4D + t)});
    report.init_norms[t] = mean_residual_norms(z, tower.codebooks);
  }

  std::mt19937_64 rng(mix_seed(cfg.seed, 0x5755));
  for (int epoch = 1; epoch <= cfg.warmup_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    double token_sum = 0.0;
    for (int t = 0; t < 2; ++t)
      token_sum += warmup_epoch(model.quantizer.tower(towers[t]), embeddings[t], cfg, opts[t], rng);
    if (sink) {
      EpochMetrics m;
      m.stage = "warmup";
      m.epoch = epoch;
      m.l_token = token_sum;
      m.wall_time = seconds_since(t0);
      sink(m);
    }
  }

  for (int t = 0; t < 2; ++t) {
    auto& tower = model.quantizer.tower(towers[t]);
    const Mat<float> z = project_batch(embeddings[t], tower);
    report.refined_norms[t] = mean_residual_norms(z, tower.codebooks);
    model.ids(towers[t]) = assign_ids(entities[t], z, tower.codebooks, towers[t], cfg.max_suffixes, 0);
  }
  if (sink) {
    EpochMetrics m;
    m.stage = "warmup";
    m.epoch = cfg.warmup_epochs;
    double token = 0.0;
    for (const auto& norms : report.refined_norms) token += std::accumulate(norms.begin(), norms.end(), 0.0);
    m.l_token = token;
    m.collision_rate = collision_rate(model.item_ids);
    sink(m);
  }
  return report;
}

// ---- stage 2 ----------------------------------------------------------------------

AlignmentInputs alignment_inputs(const std::vector<PromptInstance>& batch, const ContentIndex& content,
                                 const ModelBundle& model) {
  std::set<std::pair<Tower, std::string>> seen;
  for (const auto& inst : batch)
    for (const auto& e : inst.entities) seen.insert(e);
  AlignmentInputs in;
  for (const auto& [tower, id] : seen) {
    in.towers.push_back(tower);
    in.entities.push_back(id);
    in.content.push_back(content.of(tower, id));
    in.id_tokens.push_back(id_tokens(model.ids(tower).id_of(id), model.vocab));
  }
  return in;
}

template <typename T>
BatchLoss batch_loss(const Backbone<T>& backbone, const TwinTowerQuantizer<T>& quantizer,
                     const std::vector<PromptInstance>& batch, const AlignmentInputs& align, double alpha,
                     const AlignmentConfig& align_cfg, BackboneParams<T>* backbone_grads,
                     TwinTowerQuantizer<T>* quantizer_grads) {
  BatchLoss out;
  for (const auto& inst : batch) {
    const std::size_t len = inst.tokens.size();
    const std::size_t kept = std::min(len, static_cast<std::size_t>(backbone.config().max_len));
    for (std::size_t p = len - kept + 1; p < len; ++p) out.target_tokens += inst.loss_mask[p];
  }
  if (out.target_tokens == 0) throw DataError("batch holds no target tokens");
  int per_tower[2] = {0, 0};
  for (Tower t : align.towers) ++per_tower[static_cast<int>(t)];

  const bool want_grads = backbone_grads || quantizer_grads;
  const bool align_grads = want_grads && alpha != 0.0;
  const int threads = want_grads ? worker_threads() : 1;
  std::vector<BackboneParams<T>> bg;
  std::vector<TwinTowerQuantizer<T>> qg;
  if (backbone_grads) bg.assign(static_cast<std::size_t>(threads), backbone.params().zeros_like());
  if (quantizer_grads) {
    TwinTowerQuantizer<T> z{quantizer.item.zeros_like(), quantizer.user.zeros_like()};
    qg.assign(static_cast<std::size_t>(threads), z);
  }

  const std::size_t n_inst = batch.size(), n_align = align.towers.size();
  std::vector<double> llm(n_inst, 0.0), id(n_align, 0.0), tok(n_align, 0.0);
  const auto total_units = static_cast<std::ptrdiff_t>(n_inst + n_align);
  const double inv_tokens = 1.0 / out.target_tokens;
  TTDS_OMP(parallel for schedule(static) num_threads(threads))
  for (std::ptrdiff_t u = 0; u < total_units; ++u) {
    const auto th = static_cast<std::size_t>(omp_get_thread_num());
    BackboneParams<T>* g = backbone_grads ? &bg[th] : nullptr;
    if (static_cast<std::size_t>(u) < n_inst) {
      const auto& inst = batch[static_cast<std::size_t>(u)];
      llm[static_cast<std::size_t>(u)] = sequence_nll<T>(backbone, inst.tokens, inst.loss_mask, inv_tokens, g, nullptr);
      continue;
    }
    const std::size_t j = static_cast<std::size_t>(u) - n_inst;
    const Tower t = align.towers[j];
    const double share = 1.0 / per_tower[static_cast<int>(t)];
    const EntityAlignment r = entity_alignment<T>(
        backbone, quantizer.tower(t), align.content[j], align.id_tokens[j], align_cfg, alpha * share,
        alpha * align_cfg.beta * share, align_grads ? g : nullptr,
        align_grads && quantizer_grads ? &qg[th].tower(t) : nullptr);
    id[j] = r.id_loss;
    tok[j] = r.token_loss;
  }
  if (backbone_grads)
    for (auto& g : bg) backbone_grads->add(g);
  if (quantizer_grads)
    for (auto& g : qg) add_into<T>(*quantizer_grads, g);

  out.llm = std::accumulate(llm.begin(), llm.end(), 0.0) * inv_tokens;
  double id_sum[2] = {0, 0}, tok_sum[2] = {0, 0};
  for (std::size_t j = 0; j < n_align; ++j) {
    id_sum[static_cast<int>(align.towers[j])] += id[j];
    tok_sum[static_cast<int>(align.towers[j])] += tok[j];
  }
  TowerLoss towers[2];
  std::size_t present = 0;
  for (int t = 0; t < 2; ++t) {
    if (per_tower[t] == 0) continue;
    towers[present++] = {id_sum[t] / per_tower[t], tok_sum[t] / per_tower[t]};
    out.id += id_sum[t] / per_tower[t];
    out.token += tok_sum[t] / per_tower[t];
  }
  out.dmvae = dmvae_loss(std::span<const TowerLoss>(towers, present), align_cfg.beta);
  out.total = total_loss(out.llm, out.dmvae, alpha);
  return out;
}

std::vector<ParamRef<float>> joint_params(ModelBundle& model) {
  auto p = collect_params<float>(model.backbone.params(), "backbone.");
  auto q = collect_params<float>(model.quantizer, "quantizer.");
  p.insert(p.end(), q.begin(), q.end());
  return p;
}

void train_joint(TrainState& state, const Dataset& data, const ContentIndex& content,
                 const std::vector<PromptTemplate>& templates, const StreamConfig& stream_cfg, const TrainConfig& cfg,
                 const JointHooks& hooks) {
  cfg.validate();
  auto& model = state.model;
  if (!model.vocab.extended() || model.item_ids.entities.empty() || model.user_ids.entities.empty())
    throw StateError("joint training needs the warm-up stage (extended vocabulary and initial IDs)");
  if (state.optimizer.config().weight_decay != cfg.weight_decay && state.optimizer.steps() == 0)
    state.optimizer = AdamW<float>(AdamWConfig{0.9, 0.999, 1e-8, cfg.weight_decay});
  const auto seqrec = templates_for(templates, TaskFamily::seqrec);
  AlignmentConfig align = cfg.align;
  align.commitment = cfg.joint_commitment;

  BackboneParams<float> bgrad = model.backbone.params().zeros_like();
  TwinTowerQuantizer<float> qgrad{model.quantizer.item.zeros_like(), model.quantizer.user.zeros_like()};
  auto params = joint_params(model);
  auto grads = collect_params<float>(bgrad, "backbone.");
  auto qg = collect_params<float>(qgrad, "quantizer.");
  grads.insert(grads.end(), qg.begin(), qg.end());

  while (state.epochs_done < cfg.joint_epochs) {
    const auto t0 = std::chrono::steady_clock::now();
    const int epoch = state.epochs_done + 1;
    const TrainingStream stream = build_training_stream(data, model.vocab, model.item_ids, model.user_ids, templates,
                                                        stream_cfg, state.rng());
    double sum_llm = 0.0, sum_id = 0.0, sum_tok = 0.0;
    for (const auto& batch : stream.batches) {
      const AlignmentInputs in = alignment_inputs(batch, content, model);
      bgrad.set_zero();
      zero_all<float>(qgrad);
      const BatchLoss bl =
          batch_loss<float>(model.backbone, model.quantizer, batch, in, cfg.alpha, align, &bgrad, &qgrad);
      if (!std::isfinite(bl.total))
        throw NumericError("joint loss diverged in epoch " + std::to_string(epoch) + " (L_LLM " +
                           std::to_string(bl.llm) + ", L_ID " + std::to_string(bl.id) + ", L_Token " +
                           std::to_string(bl.token) + ")");
      clip_gradients(grads, cfg.grad_clip);
      state.optimizer.step(params, grads, cfg.joint_lr);
      sum_llm += bl.llm;
      sum_id += bl.id;
      sum_tok += bl.token;
    }
    state.epochs_done = epoch;
    if (epoch % cfg.reindex_interval == 0) {
      for (Tower t : {Tower::item, Tower::user})
        model.ids(t) = reindex(model.backbone, content.entities(t), content.sequences(t), model.quantizer.tower(t),
                               cfg.max_suffixes, model.ids(t), cfg.refit_iterations);
      ++state.reindex_count;
    }
    state.stage = "joint";

    EpochMetrics m;
    m.stage = "joint";
    m.epoch = epoch;
    const double nb = static_cast<double>(std::max<std::size_t>(stream.batches.size(), 1));
    m.l_llm = sum_llm / nb;
    m.l_id = sum_id / nb;
    m.l_token = sum_tok / nb;
    m.l_total = total_loss(*m.l_llm, dmvae_loss(*m.l_id, *m.l_token, cfg.align.beta), cfg.alpha);
    m.collision_rate = collision_rate(model.item_ids);
    if (hooks.valid_hr10) {
      m.hr10_valid = hooks.valid_hr10(state);
    } else if (cfg.eval_valid && !seqrec.empty()) {
      EvalOptions eo;
      eo.ks = {10};
      eo.target = EvalTarget::valid;
      eo.max_users = cfg.valid_users;
      const IndexTrie trie = build_trie(model.item_ids, model.vocab);
      m.hr10_valid = evaluate(data, model, trie, {seqrec.front()}, eo).averaged.at("HR@10");
    }
    m.wall_time = seconds_since(t0);
    if (hooks.metrics) hooks.metrics(m);
    if (hooks.epoch_end) hooks.epoch_end(state);
  }
}

template BatchLoss batch_loss<float>(const Backbone<float>&, const TwinTowerQuantizer<float>&,
                                     const std::vector<PromptInstance>&, const AlignmentInputs&, double,
                                     const AlignmentConfig&, BackboneParams<float>*, TwinTowerQuantizer<float>*);
template BatchLoss batch_loss<double>(const Backbone<double>&, const TwinTowerQuantizer<double>&,
                                      const std::vector<PromptInstance>&, const AlignmentInputs&, double,
                                      const AlignmentConfig&, BackboneParams<double>*, TwinTowerQuantizer<double>*);

}  // namespace ttds
