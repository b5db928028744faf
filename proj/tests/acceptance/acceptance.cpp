// Acceptance checks. Prints one PASS/FAIL line per criterion and exits non-zero if any fail.
// Usage: acceptance [criterion numbers...]   (default: all)

#include "ttds/alignment.hpp"
#include "ttds/config.hpp"
#include "ttds/eval.hpp"
#include "ttds/inference.hpp"
#include "ttds/omp.hpp"
#include "ttds/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace ttds;

namespace {

// Pinned tolerances.
constexpr double kResidualTol = 1e-12;       // criterion 1
constexpr double kRefineSlack = 0.01;        // criterion 2
constexpr double kGradRelTol = 1e-6;         // criterion 3
constexpr double kGradRelFloor = 1e-6;       // denominator floor for near-zero gradients
constexpr double kIdentityTol = 1e-6;        // criterion 4
constexpr double kHrRatio = 2.0;             // criterion 8
constexpr double kPurity = 0.6;              // criterion 8

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

template <typename T>
Mat<T> gaussian(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, scale);
  Mat<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(nd(rng));
  return m;
}

// ---------------------------------------------------------------------------------------------
// 1. residual encoding vs exhaustive per-level argmin

Outcome quantizer_argmin() {
  const int n = 1000, d = 8, M = 3, N = 8;
  std::vector<Mat<double>> cbs;
  for (int m = 0; m < M; ++m) cbs.push_back(gaussian<double>(N, d, 100 + m, 1.0 / (m + 1)));
  const Mat<double> pts = gaussian<double>(n, d, 7);
  int agree = 0;
  double worst = 0.0;
  for (int i = 0; i < n; ++i) {
    const RowVec<double> z = pts.row(i);
    RowVec<double> r = z;
    std::vector<int> oracle;
    for (int m = 0; m < M; ++m) {
      int best = 0;
      double bd = INFINITY;
      for (int c = 0; c < N; ++c) {
        double s = 0;
        for (int j = 0; j < d; ++j) s += (r(j) - cbs[m](c, j)) * (r(j) - cbs[m](c, j));
        if (s < bd) bd = s, best = c;
      }
      oracle.push_back(best);
      r -= cbs[m].row(best);
    }
    const auto code = residual_encode(z, cbs);
    agree += code.levels == oracle;
    RowVec<double> sum = code.residuals.back();
    for (int m = 0; m < M; ++m) sum += cbs[m].row(code.levels[m]);
    worst = std::max(worst, (sum - z).cwiseAbs().maxCoeff());
  }
  return {agree == n && worst <= kResidualTol, fmt("%d/%d index paths match, max |z - sum c - r_M| = %.2e", agree, n, worst)};
}

// ---------------------------------------------------------------------------------------------
// 2. k-means initialisation and refinement

Outcome warmup_monotonicity() {
  TowerConfig tc;
  tc.levels = 3;
  tc.codes = 16;
  tc.code_dim = 8;
  tc.widths = {16, 12, 8};
  TowerQuantizer<float> tower(tc, 31);
  const Mat<float> x = gaussian<float>(1000, 16, 32);
  tower.codebooks = kmeans_init(project_batch(x, tower), tc, KMeansOptions{50, 33});
  const auto init = mean_residual_norms(project_batch(x, tower), tower.codebooks);
  bool monotone = true;
  for (std::size_t m = 1; m < init.size(); ++m) monotone = monotone && init[m] <= init[m - 1];

  TrainConfig cfg;
  AdamW<float> opt(AdamWConfig{0.9, 0.999, 1e-8, cfg.weight_decay});
  std::mt19937_64 rng(34);
  for (int e = 0; e < cfg.warmup_epochs; ++e) warmup_epoch(tower, x, cfg, opt, rng);
  const auto refined = mean_residual_norms(project_batch(x, tower), tower.codebooks);
  const bool kept = refined.back() <= (1.0 + kRefineSlack) * init.back();
  return {monotone && kept, fmt("k-means |r_m|^2 = %.4f, %.4f, %.4f; after %d refinement epochs |r_M|^2 = %.4f",
                                init[0], init[1], init[2], cfg.warmup_epochs, refined.back())};
}

// ---------------------------------------------------------------------------------------------
// 3. analytic vs finite-difference gradients in double precision

struct GradCheck {
  double worst = 0.0;
  std::string where;
  std::size_t coords = 0;
  bool path_stable = true;
};

// Sixth-order central difference of f over every coordinate of every tensor.
void check_tensors(GradCheck& gc, const std::string& what, std::vector<std::pair<std::string, Mat<double>*>> params,
                   std::vector<Mat<double>*> grads, const std::function<double()>& f) {
  const double h = 1e-3;
  for (std::size_t t = 0; t < params.size(); ++t) {
    Mat<double>& p = *params[t].second;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      const double keep = p.data()[i];
      auto at = [&](double dx) {
        p.data()[i] = keep + dx;
        return f();
      };
      const double fd = (at(3 * h) - 9 * at(2 * h) + 45 * at(h) - 45 * at(-h) + 9 * at(-2 * h) - at(-3 * h)) / (60 * h);
      p.data()[i] = keep;
      const double an = grads[t]->data()[i];
      const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), kGradRelFloor});
      if (rel > gc.worst) gc.worst = rel, gc.where = what + ":" + params[t].first;
      ++gc.coords;
    }
  }
}

std::vector<std::pair<std::string, Mat<double>*>> named(auto& container) {
  std::vector<std::pair<std::string, Mat<double>*>> out;
  container.visit([&](const std::string& n, Mat<double>& m) { out.push_back({n, &m}); });
  return out;
}

std::vector<Mat<double>*> tensors(auto& container) {
  std::vector<Mat<double>*> out;
  container.visit([&](const std::string&, Mat<double>& m) { out.push_back(&m); });
  return out;
}

Outcome gradient_check() {
  const int V = 24;
  BackboneConfig bc;
  bc.d_model = 8;
  bc.layers = 1;
  bc.heads = 2;
  bc.max_len = 12;
  bc.ffn_mult = 2;
  Backbone<double> model(bc, V, 41);
  std::size_t n_params = 0;
  model.params().visit([&](const std::string&, const Mat<double>& m) { n_params += static_cast<std::size_t>(m.size()); });

  TowerConfig tc;
  tc.levels = 1;
  tc.codes = 4;
  tc.code_dim = 4;
  tc.widths = {8, 6, 4};
  TwinTowerQuantizer<double> quant{TowerQuantizer<double>(tc, 42), TowerQuantizer<double>(tc, 43)};
  auto& tower = quant.item;

  AlignmentConfig ac;
  ac.content_gradient = true;
  ac.token_gradient = TokenGradient::literal;
  GradCheck gc;

  // L_LLM over a two-instance batch
  std::vector<PromptInstance> batch(2);
  std::mt19937_64 rng(44);
  for (auto& inst : batch) {
    inst.tokens.push_back(Vocabulary::kBos);
    for (int t = 0; t < 8; ++t) inst.tokens.push_back(static_cast<TokenId>(3 + rng() % (V - 3)));
    inst.loss_mask.assign(inst.tokens.size(), 0);
    for (std::size_t t = inst.tokens.size() - 3; t < inst.tokens.size(); ++t) inst.loss_mask[t] = 1;
  }
  const AlignmentInputs none;
  {
    BackboneParams<double> g = model.params().zeros_like();
    batch_loss<double>(model, quant, batch, none, 0.0, ac, &g, nullptr);
    check_tensors(gc, "L_LLM", named(model.params()), tensors(g),
                  [&] { return batch_loss<double>(model, quant, batch, none, 0.0, ac, nullptr, nullptr).llm; });
  }

  const std::vector<TokenId> content{4, 9, 12, 3, 17, 8}, ids{21, 22, 23};
  const auto base_levels = entity_alignment<double>(model, tower, content, ids, ac, 1, 1, nullptr, nullptr).levels;
  auto align_loss = [&](double wid, double wtok) {
    const auto r = entity_alignment<double>(model, tower, content, ids, ac, wid, wtok, nullptr, nullptr);
    if (r.levels != base_levels) gc.path_stable = false;
    return wid * r.id_loss + wtok * r.token_loss;
  };
  for (auto [name, wid, wtok] : {std::tuple{"L_ID", 1.0, 0.0}, std::tuple{"L_Token", 0.0, 1.0}}) {
    BackboneParams<double> g = model.params().zeros_like();
    TowerQuantizer<double> tg = tower.zeros_like();
    entity_alignment<double>(model, tower, content, ids, ac, wid, wtok, &g, &tg);
    auto f = [&, wid = wid, wtok = wtok] { return align_loss(wid, wtok); };
    check_tensors(gc, name, named(model.params()), tensors(g), f);
    check_tensors(gc, name, named(tower), tensors(tg), f);
  }
  return {gc.worst < kGradRelTol && gc.path_stable && n_params <= 5000,
          fmt("%zu backbone parameters, %zu coordinates checked, max relative error %.2e (%s)%s", n_params, gc.coords,
              gc.worst, gc.where.c_str(), gc.path_stable ? "" : ", quantizer path moved under perturbation")};
}

// ---------------------------------------------------------------------------------------------
// 4. loss identities

Outcome loss_identities() {
  const int V = 30;
  BackboneConfig bc;
  bc.d_model = 8;
  bc.layers = 1;
  bc.heads = 2;
  bc.max_len = 16;
  Backbone<double> model(bc, V, 51);
  TowerConfig tc;
  tc.levels = 2;
  tc.codes = 4;
  tc.code_dim = 4;
  tc.widths = {8, 4};
  TwinTowerQuantizer<double> quant{TowerQuantizer<double>(tc, 52), TowerQuantizer<double>(tc, 53)};

  std::vector<PromptInstance> batch(3);
  std::mt19937_64 rng(54);
  int T = 0;
  for (auto& inst : batch) {
    inst.tokens = {Vocabulary::kBos};
    for (int t = 0; t < 7; ++t) inst.tokens.push_back(static_cast<TokenId>(3 + rng() % (V - 3)));
    inst.loss_mask.assign(inst.tokens.size(), 0);
    for (std::size_t t = 5; t < inst.tokens.size(); ++t) inst.loss_mask[t] = 1, ++T;
  }
  AlignmentInputs align;
  for (int e = 0; e < 4; ++e) {
    align.towers.push_back(e % 2 ? Tower::user : Tower::item);
    align.entities.push_back("e" + std::to_string(e));
    align.content.push_back({static_cast<TokenId>(3 + e), 7, 11, static_cast<TokenId>(12 + e)});
    align.id_tokens.push_back({static_cast<TokenId>(20 + e), static_cast<TokenId>(25 - e)});
  }
  AlignmentConfig a1, a2;
  a1.beta = 1.0;
  a2.beta = 2.0;
  const BatchLoss l0 = batch_loss<double>(model, quant, batch, align, 0.0, a1, nullptr, nullptr);
  const BatchLoss b1 = batch_loss<double>(model, quant, batch, align, 1.0, a1, nullptr, nullptr);
  const BatchLoss b2 = batch_loss<double>(model, quant, batch, align, 1.0, a2, nullptr, nullptr);
  const double e_alpha = std::abs(l0.total - l0.llm);
  const double e_beta = std::abs((b2.dmvae - b1.dmvae) - b1.token);

  // uniform logits: zero LM head
  model.params().head_w.setZero();
  model.params().head_b.setZero();
  const BatchLoss u = batch_loss<double>(model, quant, batch, align, 0.0, a1, nullptr, nullptr);
  const double e_uniform = std::abs(u.llm * T - T * std::log(static_cast<double>(V)));
  const double worst = std::max({e_alpha, e_beta, e_uniform});
  return {worst <= kIdentityTol,
          fmt("|L_All(0) - L_LLM| = %.1e, |dmvae(2) - dmvae(1) - L_Token| = %.1e, |NLL - T ln V| = %.1e (T = %d)", e_alpha,
              e_beta, e_uniform, T)};
}

// ---------------------------------------------------------------------------------------------
// 5a. collision resolution on identical embeddings

Outcome collision_adversarial() {
  const int n = 50;
  const Mat<float> z = Mat<float>::Constant(n, 4, 0.3f);
  const std::vector<Mat<float>> cbs{gaussian<float>(8, 4, 61), gaussian<float>(8, 4, 62)};
  std::vector<std::string> ents;
  for (int i = 0; i < n; ++i) ents.push_back(fmt("e%03d", i));
  const auto a = assign_ids(ents, z, cbs, Tower::item, n);
  std::set<SemanticId> uniq(a.ids.begin(), a.ids.end());
  bool ordinals = true;
  for (int i = 0; i < n; ++i) ordinals = ordinals && a.ids[static_cast<std::size_t>(i)].suffix == i;
  return {uniq.size() == static_cast<std::size_t>(n) && ordinals,
          fmt("%zu distinct IDs for %d identical embeddings, suffixes p_0..p_%d in entity order", uniq.size(), n, n - 1)};
}

// ---------------------------------------------------------------------------------------------
// 7. beam admissibility

Outcome beam_admissibility() {
  Vocabulary vocab = Vocabulary::build({"a b c d e f g h"}, 1);
  vocab.extend(2, 8, 1, 2, 4);
  BackboneConfig bc;
  bc.d_model = 16;
  bc.layers = 2;
  bc.heads = 2;
  bc.max_len = 32;
  Backbone<float> model(bc, vocab.size(), 71);
  model.params().head_w *= 30.0f;
  // 64 items on 2 x 8 codes with deliberate collisions
  std::mt19937_64 rng(72);
  IndexAssignment items;
  items.tower = Tower::item;
  std::map<std::vector<int>, int> used;
  for (int i = 0; i < 64; ++i) {
    std::vector<int> lv{static_cast<int>(rng() % 8), static_cast<int>(rng() % 8)};
    if (used[lv] == 4) lv = {i / 8, i % 8};
    items.entities.push_back(fmt("i%03d", i));
    items.ids.push_back({Tower::item, lv, used[lv]++});
  }
  const IndexTrie trie = build_trie(items, vocab);
  int same = 0;
  const int prompts = 20;
  for (int p = 0; p < prompts; ++p) {
    std::vector<TokenId> prompt{Vocabulary::kBos};
    for (int t = 0; t < 1 + p % 6; ++t) prompt.push_back(static_cast<TokenId>(3 + rng() % 8));
    same += constrained_beam_search(model, prompt, trie, 64, 64) == exhaustive_ranking(model, prompt, trie, 64);
  }
  return {same == prompts, fmt("%d/%d prompts: W = 64 beam ranking of all 64 items equals exhaustive ranking", same, prompts)};
}

// ---------------------------------------------------------------------------------------------
// 9. metric oracle

Outcome metric_oracle() {
  std::mt19937_64 rng(91);
  int exact = 0;
  for (int n = 0; n < 100; ++n) {
    std::vector<std::string> ranked;
    for (int i = 0; i < 20; ++i) ranked.push_back(fmt("x%d", i));
    std::shuffle(ranked.begin(), ranked.end(), rng);
    ranked.resize(1 + rng() % 20);
    const std::string target = fmt("x%d", static_cast<int>(rng() % 25));
    const int k = 1 + static_cast<int>(rng() % 20);
    double hr = 0, ndcg = 0;
    for (int i = 0; i < std::min<int>(k, static_cast<int>(ranked.size())); ++i)
      if (ranked[static_cast<std::size_t>(i)] == target) hr = 1, ndcg = 1.0 / std::log2(i + 2.0);
    exact += hr_at_k(ranked, target, k) == hr && ndcg_at_k(ranked, target, k) == ndcg;
  }
  const double rank3 = ndcg_at_k({"a", "b", "c"}, "c", 10);
  return {exact == 100 && rank3 == 0.5, fmt("%d/100 random cases exact, NDCG at rank 3 = %.17g", exact, rank3)};
}

// ---------------------------------------------------------------------------------------------
// 5b, 6, 8, 10. the planted synthetic run

struct RunLog {
  std::vector<nlohmann::json> lines;  // wall_time removed
  std::map<int, std::string> checkpoints;  // joint epoch -> serialized state
};

struct SyntheticRun {
  RunConfig cfg;
  Dataset data;
  std::vector<PromptTemplate> templates;
  ContentIndex content;
  TrainState state;
  RunLog log;
  double seconds = 0;
};

RunConfig toy_config() {
  RunConfig cfg;
  apply_config_file(cfg, std::filesystem::path(TTDS_CONFIG_DIR) / "toy.ini");
  cfg.deterministic = true;
  cfg.resolve();
  return cfg;
}

SyntheticRun run_pipeline(int checkpoint_epoch) {
  const auto t0 = std::chrono::steady_clock::now();
  SyntheticRun r;
  r.cfg = toy_config();
  set_deterministic(true);
  r.data = synthetic_dataset(r.cfg.synth, r.cfg.ingest);
  r.templates = load_templates(r.cfg.templates());
  const MetricsSink sink = [&](const EpochMetrics& m) {
    auto j = m.to_json();
    j.erase("wall_time");
    r.log.lines.push_back(j);
  };
  r.state = pretrain_stage(r.cfg, r.data, r.templates, sink);
  warmup_stage(r.state, r.cfg, r.data, sink);
  r.content = ContentIndex::build(r.data, r.state.model.vocab);
  JointHooks hooks;
  hooks.metrics = sink;
  hooks.epoch_end = [&](const TrainState& s) {
    if (s.epochs_done == checkpoint_epoch) r.log.checkpoints[s.epochs_done] = serialize_checkpoint(s);
  };
  train_joint(r.state, r.data, r.content, r.templates, r.cfg.stream, r.cfg.train, hooks);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

// Most-purchased train items first (ties by id), skipping the user's history; counted from scratch.
double popularity_hr10_oracle(const Dataset& d) {
  std::map<std::string, long> count;
  for (const auto& item : d.split.item_catalog) count[item] = 0;
  for (const auto& u : d.split.users)
    for (const auto& i : u.train) ++count[i];
  std::vector<std::pair<long, std::string>> order;
  for (const auto& [item, c] : count) order.push_back({-c, item});
  std::sort(order.begin(), order.end());
  double hits = 0;
  for (const auto& u : d.split.users) {
    std::set<std::string> seen(u.train.begin(), u.train.end());
    seen.insert(u.valid);
    int shown = 0;
    for (const auto& [_, item] : order) {
      if (seen.count(item)) continue;
      if (item == u.test) hits += 1;
      if (++shown == 10 || item == u.test) break;
    }
  }
  return hits / static_cast<double>(d.split.users.size());
}

// Fraction of items whose level-1 code's majority planted cluster equals their own.
double level1_purity(const IndexAssignment& items, const std::map<std::string, int>& cluster) {
  std::map<int, std::map<int, int>> votes;
  for (std::size_t i = 0; i < items.entities.size(); ++i) ++votes[items.ids[i].levels[0]][cluster.at(items.entities[i])];
  std::map<int, int> majority;
  for (const auto& [code, v] : votes)
    majority[code] = std::max_element(v.begin(), v.end(), [](auto& a, auto& b) { return a.second < b.second; })->first;
  int agree = 0;
  for (std::size_t i = 0; i < items.entities.size(); ++i)
    agree += majority[items.ids[i].levels[0]] == cluster.at(items.entities[i]);
  return static_cast<double>(agree) / static_cast<double>(items.entities.size());
}

struct Pipeline {
  std::optional<SyntheticRun> first;
  int checkpoint_epoch = 0;

  SyntheticRun& get() {
    if (!first) {
      checkpoint_epoch = toy_config().train.joint_epochs / 2;
      first = run_pipeline(checkpoint_epoch);
    }
    return *first;
  }
};

Pipeline pipeline;

Outcome collision_synthetic() {
  const auto& r = pipeline.get();
  const auto& m = r.state.model;
  // pre-resolution collision rate as assigned by the final re-index
  const double item_rate = collision_rate(m.item_ids), user_rate = collision_rate(m.user_ids);
  bool unique = true;
  for (Tower t : {Tower::item, Tower::user}) {
    std::set<SemanticId> s(m.ids(t).ids.begin(), m.ids(t).ids.end());
    unique = unique && s.size() == m.ids(t).ids.size() && s.size() == r.content.entities(t).size();
  }
  return {unique, fmt("post-resolution IDs unique for %zu items and %zu users; level-tuple collision rate item %.3f, user %.3f",
                      m.item_ids.ids.size(), m.user_ids.ids.size(), item_rate, user_rate)};
}

Outcome in_domain() {
  auto& r = pipeline.get();
  const auto& m = r.state.model;
  const IndexTrie trie = build_trie(m.item_ids, m.vocab);
  const std::set<std::string> catalog(r.data.split.item_catalog.begin(), r.data.split.item_catalog.end());
  const auto seqrec = templates_for(r.templates, TaskFamily::seqrec);
  RecommendOptions opt = r.cfg.eval.recommend;
  opt.k = 10;
  std::size_t emitted = 0, legal = 0;
  for (const auto& u : r.data.split.users) {
    std::vector<std::string> hist = u.train;
    hist.push_back(u.valid);
    for (const auto& tmpl : seqrec)
      for (const auto& s : recommend_topk(m, trie, u.user_id, hist, tmpl, opt)) {
        ++emitted;
        legal += catalog.count(s.item_id);
      }
  }
  return {emitted > 0 && legal == emitted,
          fmt("%zu of %zu beam outputs over %zu users x %zu templates are catalog items", legal, emitted,
              r.data.split.users.size(), seqrec.size())};
}

// Measured with configs/toy.ini, seed 42: popularity HR@10 = 0.065, model test HR@10 = 0.233 (3.6x),
// level-1 purity after joint training 0.973.
Outcome learning_signal() {
  auto& r = pipeline.get();
  const auto& m = r.state.model;
  const IndexTrie trie = build_trie(m.item_ids, m.vocab);
  EvalOptions eo = r.cfg.eval;
  eo.target = EvalTarget::test;
  const MetricReport rep = evaluate(r.data, m, trie, r.templates, eo);
  const double hr = rep.averaged.at("HR@10");
  const double pop = popularity_hr10_oracle(r.data);
  const double purity = level1_purity(m.item_ids, r.data.item_cluster);
  const bool pass = hr >= kHrRatio * pop && purity >= kPurity && rep.in_domain_rate == 1.0;
  return {pass, fmt("test HR@10 %.4f vs popularity %.4f (%.2fx, need %.1fx); level-1 purity %.3f (need %.1f); "
                    "%zu items, %zu users; pipeline %.0f s",
                    hr, pop, pop > 0 ? hr / pop : INFINITY, kHrRatio, purity, kPurity, r.data.split.item_catalog.size(),
                    r.data.split.users.size(), r.seconds)};
}

Outcome determinism() {
  auto& a = pipeline.get();
  const SyntheticRun b = run_pipeline(-1);
  std::size_t same = 0;
  const std::size_t n = std::min(a.log.lines.size(), b.log.lines.size());
  for (std::size_t i = 0; i < n; ++i) same += a.log.lines[i] == b.log.lines[i];
  const bool identical = a.log.lines.size() == b.log.lines.size() && same == n;

  // resume from the mid-run checkpoint for one more epoch
  const int k = pipeline.checkpoint_epoch;
  bool resumed_ok = false;
  std::string note = "no checkpoint captured";
  if (a.log.checkpoints.count(k)) {
    TrainState s = deserialize_checkpoint(a.log.checkpoints.at(k));
    TrainConfig tc = a.cfg.train;
    tc.joint_epochs = k + 1;
    std::vector<nlohmann::json> lines;
    JointHooks hooks;
    hooks.metrics = [&](const EpochMetrics& m) {
      auto j = m.to_json();
      j.erase("wall_time");
      lines.push_back(j);
    };
    train_joint(s, a.data, a.content, a.templates, a.cfg.stream, tc, hooks);
    auto it = std::find_if(a.log.lines.begin(), a.log.lines.end(), [&](const nlohmann::json& j) {
      return j.value("stage", "") == "joint" && j.value("epoch", -1) == k + 1;
    });
    resumed_ok = lines.size() == 1 && it != a.log.lines.end() && lines[0] == *it;
    note = fmt("resume after joint epoch %d reproduces the epoch-%d line %s", k, k + 1, resumed_ok ? "exactly" : "with differences");
  }
  return {identical && resumed_ok, fmt("two runs: %zu/%zu log lines identical; %s", same, a.log.lines.size(), note.c_str())};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"quantizer argmin oracle", quantizer_argmin},
      {"warm-up monotonicity", warmup_monotonicity},
      {"gradient correctness", gradient_check},
      {"loss identities", loss_identities},
      {"injectivity and collision handling", [] {
         const Outcome a = collision_adversarial();
         const Outcome b = collision_synthetic();
         return Outcome{a.pass && b.pass, a.detail + "; " + b.detail};
       }},
      {"in-domain guarantee", in_domain},
      {"beam admissibility", beam_admissibility},
      {"end-to-end learning signal", learning_signal},
      {"metric oracle", metric_oracle},
      {"determinism and resumability", determinism},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::stoi(argv[i]));

  int failed = 0;
  for (std::size_t c = 0; c < criteria.size(); ++c) {
    const int id = static_cast<int>(c) + 1;
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[c].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << std::setw(2) << id << "  " << criteria[c].first << ": " << o.detail
              << fmt(" [%.1f s]", secs) << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
