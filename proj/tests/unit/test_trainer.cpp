#include "doctest.h"
#include "helpers.hpp"

#include "ttds/config.hpp"
#include "ttds/omp.hpp"
#include "ttds/pipeline.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace ttds;

namespace {

RunConfig tiny_config() {
  RunConfig cfg;
  cfg.synth.items = 40;
  cfg.synth.users = 40;
  cfg.synth.clusters = 4;
  cfg.backbone.d_model = 16;
  cfg.backbone.layers = 1;
  cfg.backbone.heads = 2;
  cfg.backbone.max_len = 96;
  for (TowerConfig* t : {&cfg.item_tower, &cfg.user_tower}) {
    t->levels = 2;
    t->codes = 8;
    t->code_dim = 8;
  }
  cfg.item_hidden = cfg.user_hidden = {12};
  cfg.train.pretrain_epochs = 1;
  cfg.train.warmup_epochs = 2;
  cfg.train.joint_epochs = 2;
  cfg.train.eval_valid = false;
  cfg.train.seed = 3;
  cfg.resolve();
  return cfg;
}

struct Fixture {
  RunConfig cfg = tiny_config();
  Dataset data;
  std::vector<PromptTemplate> templates;
  TrainState pretrained, warm;
  ContentIndex content;
  PretrainReport pretrain_report;
  WarmupReport warmup_report;

  Fixture() {
    set_deterministic(true);
    data = synthetic_dataset(cfg.synth, cfg.ingest);
    templates = load_templates(cfg.templates());
    pretrained = pretrain_stage(cfg, data, templates, {}, &pretrain_report);
    warm = pretrained;
    warmup_report = warmup_stage(warm, cfg, data);
    content = ContentIndex::build(data, warm.model.vocab);
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

nlohmann::json without_wall_time(const EpochMetrics& m) {
  auto j = m.to_json();
  j.erase("wall_time");
  return j;
}

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("total loss combines the LM and alignment terms") {
    CHECK(total_loss(2.0, 3.0, 0.0) == 2.0);
    CHECK(total_loss(2.0, 3.0, 0.5) == 3.5);
    TrainConfig t;
    t.alpha = -1;
    CHECK_THROWS_AS(t.validate(), ConfigError);
  }

  TEST_CASE("warm-up leaves every pretrained backbone weight untouched") {
    const auto& f = fixture();
    CHECK(f.warm.stage == "warmup");
    const auto& a = f.pretrained.model.backbone.params();
    const auto& b = f.warm.model.backbone.params();
    const int nl = f.pretrained.model.vocab.size();
    CHECK(b.tok_emb.topRows(nl) == a.tok_emb);
    CHECK(b.head_w.leftCols(nl) == a.head_w);
    CHECK(b.head_b.leftCols(nl) == a.head_b);
    CHECK(b.pos_emb == a.pos_emb);
    CHECK(b.lnf_g == a.lnf_g);
    CHECK(b.layers[0].w1 == a.layers[0].w1);
    CHECK(b.layers[0].wq == a.layers[0].wq);
  }

  TEST_CASE("pretraining lowers the held-out loss; zero epochs change nothing") {
    const auto& f = fixture();
    REQUIRE(f.pretrain_report.heldout_loss.size() == 2);
    CHECK(f.pretrain_report.heldout_loss[1] < f.pretrain_report.heldout_loss[0]);

    RunConfig cfg = f.cfg;
    cfg.train.pretrain_epochs = 0;
    const TrainState a = pretrain_stage(cfg, f.data, f.templates);
    Backbone<float> fresh(cfg.backbone, a.model.vocab.size(), mix_seed(cfg.train.seed, 1));
    CHECK(params_hash(a.model.backbone.params()) == params_hash(fresh.params()));
  }

  TEST_CASE("warm-up with zero epochs keeps the k-means codebooks") {
    const auto& f = fixture();
    RunConfig cfg = f.cfg;
    cfg.train.warmup_epochs = 0;
    TrainState s = f.pretrained;
    const WarmupReport r = warmup_stage(s, cfg, f.data);
    for (int t = 0; t < 2; ++t) CHECK(r.refined_norms[t] == r.init_norms[t]);
  }

  TEST_CASE("token-loss refinement does not undo k-means on unit-scale vectors") {
    TowerConfig tc;
    tc.levels = 3;
    tc.codes = 8;
    tc.code_dim = 8;
    tc.widths = {16, 12, 8};
    TowerQuantizer<float> tower(tc, 21);
    const Mat<float> x = test::random_matrix<float>(1000, 16, 22);
    tower.codebooks = kmeans_init(project_batch(x, tower), tc, KMeansOptions{50, 23});
    const double before = mean_residual_norms(project_batch(x, tower), tower.codebooks).back();
    TrainConfig cfg;
    AdamW<float> opt(AdamWConfig{0.9, 0.999, 1e-8, cfg.weight_decay});
    std::mt19937_64 rng(24);
    double first = 0, last = 0;
    for (int e = 0; e < 10; ++e) (e == 0 ? first : last) = warmup_epoch(tower, x, cfg, opt, rng);
    CHECK(last < first);
    CHECK(mean_residual_norms(project_batch(x, tower), tower.codebooks).back() <= 1.01 * before);
  }

  TEST_CASE("re-indexing fires floor(epochs / E) times") {
    const auto& f = fixture();
    for (auto [epochs, interval] : {std::pair{2, 1}, std::pair{3, 2}, std::pair{1, 2}}) {
      TrainConfig tc = f.cfg.train;
      tc.joint_epochs = epochs;
      tc.reindex_interval = interval;
      TrainState s = f.warm;
      train_joint(s, f.data, f.content, f.templates, f.cfg.stream, tc);
      CHECK(s.reindex_count == epochs / interval);
      CHECK(s.model.item_ids.epoch == epochs / interval);
    }
  }

  TEST_CASE("warm-up gives every entity a unique ID") {
    const auto& f = fixture();
    for (Tower t : {Tower::item, Tower::user}) {
      const auto& a = f.warm.model.ids(t);
      CHECK(a.entities.size() == f.content.entities(t).size());
      std::set<SemanticId> uniq(a.ids.begin(), a.ids.end());
      CHECK(uniq.size() == a.ids.size());
      for (const auto& id : a.ids) CHECK(id.suffix < f.cfg.train.max_suffixes);
    }
  }

  TEST_CASE("batch loss: total = llm + alpha * dmvae and gradients are affine in alpha") {
    const auto& f = fixture();
    const auto& m = f.warm.model;
    const auto stream = build_training_stream(f.data, m.vocab, m.item_ids, m.user_ids, f.templates, f.cfg.stream, 9);
    const auto& batch = stream.batches.front();
    const auto in = alignment_inputs(batch, f.content, m);
    auto grads = [&](double alpha, BatchLoss& loss) {
      BackboneParams<float> g = m.backbone.params().zeros_like();
      loss = batch_loss<float>(m.backbone, m.quantizer, batch, in, alpha, f.cfg.train.align, &g, nullptr);
      return g;
    };
    BatchLoss l0, l1, lh;
    const auto g0 = grads(0.0, l0);
    const auto g1 = grads(1.0, l1);
    const auto gh = grads(0.5, lh);
    CHECK(l0.total == l0.llm);
    CHECK(l1.llm == l0.llm);
    CHECK(l1.dmvae == doctest::Approx(l1.id + f.cfg.train.align.beta * l1.token).epsilon(1e-12));
    CHECK(lh.total == doctest::Approx(lh.llm + 0.5 * lh.dmvae).epsilon(1e-12));
    const Mat<float> mid = 0.5f * (g0.layers[0].w1 + g1.layers[0].w1);
    const float scale = gh.layers[0].w1.cwiseAbs().maxCoeff();
    CHECK((gh.layers[0].w1 - mid).cwiseAbs().maxCoeff() <= 1e-4f * scale);
  }

  TEST_CASE("checkpoint round trip is byte-exact; corruption is detected") {
    const auto& f = fixture();
    const std::string bytes = serialize_checkpoint(f.warm);
    const TrainState back = deserialize_checkpoint(bytes);
    CHECK(serialize_checkpoint(back) == bytes);
    CHECK(back.stage == "warmup");
    CHECK(back.model.item_ids.ids == f.warm.model.item_ids.ids);

    std::string flipped = bytes;
    flipped[flipped.size() / 2] ^= 0x10;
    CHECK_THROWS_AS(deserialize_checkpoint(flipped), CheckpointError);
    CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, bytes.size() - 9)), CheckpointError);
    CHECK_THROWS_AS(deserialize_checkpoint("garbage"), CheckpointError);
    CHECK_THROWS_AS(load_checkpoint("/nonexistent/ckpt"), MissingArtifactError);

    const auto path = std::filesystem::temp_directory_path() / "ttds_unit.ckpt";
    save_checkpoint(f.warm, path);
    CHECK(serialize_checkpoint(load_checkpoint(path)) == bytes);
    std::filesystem::remove(path);
  }

  TEST_CASE("resuming from a mid-run checkpoint continues the run exactly") {
    const auto& f = fixture();
    std::vector<EpochMetrics> straight, resumed;
    TrainState a = f.warm;
    JointHooks ha;
    ha.metrics = [&](const EpochMetrics& m) { straight.push_back(m); };
    train_joint(a, f.data, f.content, f.templates, f.cfg.stream, f.cfg.train, ha);

    TrainConfig half = f.cfg.train;
    half.joint_epochs = 1;
    TrainState b = f.warm;
    train_joint(b, f.data, f.content, f.templates, f.cfg.stream, half);
    TrainState c = deserialize_checkpoint(serialize_checkpoint(b));
    JointHooks hc;
    hc.metrics = [&](const EpochMetrics& m) { resumed.push_back(m); };
    train_joint(c, f.data, f.content, f.templates, f.cfg.stream, f.cfg.train, hc);

    REQUIRE(straight.size() >= 2);
    REQUIRE(resumed.size() == 1);
    CHECK(without_wall_time(resumed.back()) == without_wall_time(straight.back()));
    CHECK(params_hash(c.model.backbone.params()) == params_hash(a.model.backbone.params()));
    CHECK(c.model.item_ids.ids == a.model.item_ids.ids);
    CHECK(c.epochs_done == 2);
    CHECK(c.reindex_count == a.reindex_count);
  }

  TEST_CASE("joint training refuses a state that has not been warmed up") {
    const auto& f = fixture();
    TrainState s = f.pretrained;
    CHECK_THROWS_AS(train_joint(s, f.data, f.content, f.templates, f.cfg.stream, f.cfg.train), StateError);
  }
}

TEST_SUITE("config") {
  TEST_CASE("overrides, unknown keys and malformed input") {
    RunConfig cfg;
    apply_override(cfg, "train.alpha=0.25");
    CHECK(cfg.train.alpha == 0.25);
    apply_override(cfg, "eval.ks=1,3");
    CHECK(cfg.eval.ks == std::vector<int>{1, 3});
    apply_override(cfg, "align.token_gradient=literal");
    CHECK(cfg.train.align.token_gradient == TokenGradient::literal);
    CHECK_THROWS_AS(apply_override(cfg, "train.nope=1"), ConfigError);
    CHECK_THROWS_AS(apply_override(cfg, "alpha=1"), ConfigError);
    CHECK_THROWS_AS(apply_override(cfg, "train.alpha=abc"), ConfigError);
    CHECK_THROWS_AS(apply_config_text(cfg, "[bogus]\nx = 1\n"), ConfigError);
    CHECK_THROWS_AS(apply_config_file(cfg, "/nonexistent.ini"), ConfigError);
  }

  TEST_CASE("resolve derives projection widths and validates shapes") {
    RunConfig cfg;
    cfg.backbone.d_model = 32;
    cfg.item_hidden = {24, 16};
    cfg.item_tower.code_dim = 8;
    cfg.resolve();
    CHECK(cfg.item_tower.widths == std::vector<int>{32, 24, 16, 8});
    cfg.backbone.heads = 5;
    CHECK_THROWS_AS(cfg.resolve(), ConfigError);
  }

  TEST_CASE("resolved text re-applies to the same hash; any change moves it") {
    RunConfig a;
    apply_config_file(a, std::filesystem::path(TTDS_DATA_DIR) / ".." / "configs" / "toy.ini");
    a.resolve();
    RunConfig b;
    apply_config_text(b, resolved_config_text(a));
    b.resolve();
    CHECK(config_hash(a) == config_hash(b));
    CHECK(resolved_config_text(a) == resolved_config_text(b));
    apply_override(b, "run.seed=43");
    CHECK(config_hash(a) != config_hash(b));
  }
}

TEST_SUITE("optim") {
  TEST_CASE("AdamW matches a hand-rolled update; row vectors are not decayed") {
    AdamWConfig ac;
    ac.weight_decay = 0.1;
    AdamW<double> opt(ac);
    Mat<double> w(2, 2), b(1, 2);
    w << 1, -2, 3, 0.5;
    b << 0.1, -0.1;
    const Mat<double> w0 = w, b0 = b;
    Mat<double> gw(2, 2), gb(1, 2);
    gw << 0.5, -1, 2, 0;
    gb << -0.3, 0.2;
    const std::vector<ParamRef<double>> params{{"w", &w}, {"b", &b}}, grads{{"w", &gw}, {"b", &gb}};
    const double lr = 0.01;
    opt.step(params, grads, lr);
    opt.step(params, grads, lr);

    auto oracle = [&](double p, double g, bool decay) {
      double m = 0, v = 0;
      for (int t = 1; t <= 2; ++t) {
        if (decay) p *= 1 - lr * 0.1;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
        p -= lr * mh / (std::sqrt(vh) + 1e-8);
      }
      return p;
    };
    for (int i = 0; i < 4; ++i) CHECK(w.data()[i] == doctest::Approx(oracle(w0.data()[i], gw.data()[i], true)).epsilon(1e-9));
    for (int i = 0; i < 2; ++i) CHECK(b.data()[i] == doctest::Approx(oracle(b0.data()[i], gb.data()[i], false)).epsilon(1e-9));
    CHECK(opt.steps() == 2);
  }

  TEST_CASE("non-finite gradients are rejected by name") {
    AdamW<float> opt;
    Mat<float> w = Mat<float>::Ones(2, 2), g = Mat<float>::Zero(2, 2);
    g(1, 0) = std::nanf("");
    try {
      opt.step({{"layer.w", &w}}, {{"layer.w", &g}}, 0.1);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("layer.w") != std::string::npos);
    }
    CHECK(w == Mat<float>::Ones(2, 2));
  }
}
