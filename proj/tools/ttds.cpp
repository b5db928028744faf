// ttds: command-line driver for the generative recommender pipeline.
//
//   ttds synth | ingest      -> <run>/dataset/
//   ttds pretrain            -> <run>/pretrain.ckpt
//   ttds warmup              -> <run>/warmup.ckpt, ids_item.jsonl, ids_user.jsonl
//   ttds train [--resume]    -> <run>/train.ckpt
//   ttds evaluate            -> <run>/report.json, report.txt
//   ttds recommend | inspect-id | report
//
// Settings come from built-in defaults, then --config, then --set section.key=value, then the
// dedicated flags of each subcommand (later wins).

#include "ttds/config.hpp"
#include "ttds/eval.hpp"
#include "ttds/inference.hpp"
#include "ttds/kernels.hpp"
#include "ttds/omp.hpp"
#include "ttds/pipeline.hpp"
#include "ttds/synthetic.hpp"
#include "ttds/trainer.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <zlib.h>

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ttds;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitMissing = 3;
constexpr int kExitRuntime = 4;

struct Globals {
  std::string config_file;
  std::vector<std::string> overrides;
  std::string run_dir;
  bool deterministic = false;
  std::optional<std::uint64_t> seed;
};

RunConfig load_config(const Globals& g) {
  RunConfig cfg;
  if (!g.config_file.empty()) apply_config_file(cfg, g.config_file);
  for (const auto& o : g.overrides) apply_override(cfg, o);
  if (!g.run_dir.empty()) cfg.run_dir = g.run_dir;
  if (g.deterministic) cfg.deterministic = true;
  if (g.seed) cfg.train.seed = *g.seed;
  cfg.resolve();
  set_deterministic(cfg.deterministic);
  return cfg;
}

fs::path run_path(const RunConfig& cfg, const std::string& name) { return fs::path(cfg.run_dir) / name; }

void require(const fs::path& p, const std::string& produced_by) {
  if (!fs::exists(p))
    throw MissingArtifactError("missing artifact " + p.string() + " (run `ttds " + produced_by + "` first)");
}

std::uint32_t file_crc(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::vector<char> buf(1 << 16);
  uLong crc = crc32(0L, Z_NULL, 0);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(in.gcount()));
  }
  return static_cast<std::uint32_t>(crc);
}

// Lists every file below the run directory with its size and crc32.
void write_manifest(const RunConfig& cfg) {
  json files = json::array();
  std::vector<fs::path> paths;
  for (const auto& e : fs::recursive_directory_iterator(cfg.run_dir))
    if (e.is_regular_file() && e.path().filename() != "manifest.json" && e.path().extension() != ".tmp")
      paths.push_back(e.path());
  std::sort(paths.begin(), paths.end());
  for (const auto& p : paths) {
    std::ostringstream crc;
    crc << std::hex << std::setw(8) << std::setfill('0') << file_crc(p);
    files.push_back({{"path", fs::relative(p, cfg.run_dir).string()}, {"bytes", fs::file_size(p)}, {"crc32", crc.str()}});
  }
  std::ofstream(run_path(cfg, "manifest.json")) << json{{"config_hash", config_hash(cfg)}, {"files", files}}.dump(2)
                                                << '\n';
}

void echo_config(const RunConfig& cfg) {
  fs::create_directories(cfg.run_dir);
  std::ofstream(run_path(cfg, "config.resolved.ini")) << resolved_config_text(cfg);
}

class MetricsLog {
 public:
  MetricsLog(const fs::path& p, bool truncate) : out_(p, truncate ? std::ios::trunc : std::ios::app) {}
  void operator()(const EpochMetrics& m) {
    out_ << m.to_json().dump() << '\n';
    out_.flush();
    std::cerr << m.to_json().dump() << '\n';
  }

 private:
  std::ofstream out_;
};

Dataset load_run_dataset(const RunConfig& cfg) {
  const auto dir = run_path(cfg, "dataset");
  require(dir / "splits.jsonl", "synth` or `ttds ingest");
  return load_dataset(dir);
}

void export_ids(const RunConfig& cfg, const ModelBundle& m) {
  std::ofstream item(run_path(cfg, "ids_item.jsonl"));
  write_assignment_jsonl(m.item_ids, item);
  std::ofstream user(run_path(cfg, "ids_user.jsonl"));
  write_assignment_jsonl(m.user_ids, user);
}

// ---- subcommands -------------------------------------------------------------------

void cmd_synth(const RunConfig& cfg) {
  echo_config(cfg);
  const Dataset d = synthetic_dataset(cfg.synth, cfg.ingest);
  save_dataset(d, run_path(cfg, "dataset"));
  std::cout << "synthetic dataset: " << d.items.size() << " items, " << d.users.size() << " users, "
            << d.stats.kept_interactions << " interactions -> " << run_path(cfg, "dataset").string() << '\n';
}

void cmd_ingest(const RunConfig& cfg) {
  if (cfg.reviews_path.empty() || cfg.meta_path.empty())
    throw ConfigError("ingest needs --reviews and --meta (or [data] reviews / meta)");
  std::ifstream reviews(cfg.reviews_path), meta(cfg.meta_path);
  if (!reviews) throw MissingArtifactError("review file not found: " + cfg.reviews_path);
  if (!meta) throw MissingArtifactError("metadata file not found: " + cfg.meta_path);
  echo_config(cfg);
  const Dataset d = ingest_reviews(reviews, meta, cfg.ingest);
  save_dataset(d, run_path(cfg, "dataset"));
  std::cout << "ingested " << d.stats.review_lines << " review lines (" << d.stats.malformed << " malformed): "
            << d.items.size() << " items, " << d.users.size() << " users after " << cfg.ingest.min_core << "-core\n";
}

void cmd_pretrain(const RunConfig& cfg) {
  const Dataset data = load_run_dataset(cfg);
  const auto templates = load_templates(cfg.templates());
  echo_config(cfg);
  MetricsLog log(run_path(cfg, "metrics.jsonl"), true);
  PretrainReport report;
  const TrainState state = pretrain_stage(cfg, data, templates, std::ref(log), &report);
  save_checkpoint(state, run_path(cfg, "pretrain.ckpt"));
  std::cout << "pretrain: held-out loss " << report.heldout_loss.front() << " -> " << report.heldout_loss.back()
            << '\n';
}

void cmd_warmup(const RunConfig& cfg) {
  const Dataset data = load_run_dataset(cfg);
  require(run_path(cfg, "pretrain.ckpt"), "pretrain");
  echo_config(cfg);
  TrainState state = load_checkpoint(run_path(cfg, "pretrain.ckpt"));
  MetricsLog log(run_path(cfg, "metrics.jsonl"), false);
  const auto rep = warmup_stage(state, cfg, data, std::ref(log));
  save_checkpoint(state, run_path(cfg, "warmup.ckpt"));
  export_ids(cfg, state.model);
  std::cout << "warm-up: item mean |r_M|^2 " << rep.init_norms[0].back() << " -> " << rep.refined_norms[0].back()
            << ", item collision rate " << collision_rate(state.model.item_ids) << '\n';
}

void cmd_train(const RunConfig& cfg, bool resume) {
  const Dataset data = load_run_dataset(cfg);
  const auto templates = load_templates(cfg.templates());
  const auto ckpt = run_path(cfg, "train.ckpt");
  TrainState state;
  if (resume) {
    require(ckpt, "train");
    state = load_checkpoint(ckpt);
  } else {
    require(run_path(cfg, "warmup.ckpt"), "warmup");
    state = load_checkpoint(run_path(cfg, "warmup.ckpt"));
  }
  echo_config(cfg);
  const ContentIndex content = ContentIndex::build(data, state.model.vocab);
  MetricsLog log(run_path(cfg, "metrics.jsonl"), false);
  JointHooks hooks;
  hooks.metrics = std::ref(log);
  hooks.epoch_end = [&](const TrainState& s) { save_checkpoint(s, ckpt); };
  if (state.epochs_done >= cfg.train.joint_epochs) save_checkpoint(state, ckpt);
  train_joint(state, data, content, templates, cfg.stream, cfg.train, hooks);
  export_ids(cfg, state.model);
  std::cout << "joint training: " << state.epochs_done << " epochs, " << state.reindex_count << " re-indexes -> "
            << ckpt.string() << '\n';
}

fs::path model_checkpoint(const RunConfig& cfg, const std::string& flag) {
  const fs::path p = flag.empty() ? run_path(cfg, "train.ckpt") : fs::path(flag);
  require(p, "train");
  return p;
}

void cmd_evaluate(const RunConfig& cfg, const std::string& ckpt_flag, bool on_valid) {
  const auto ckpt = model_checkpoint(cfg, ckpt_flag);
  const Dataset data = load_run_dataset(cfg);
  const auto templates = load_templates(cfg.templates());
  echo_config(cfg);
  const TrainState state = load_checkpoint(ckpt);
  const IndexTrie trie = build_trie(state.model.item_ids, state.model.vocab);
  EvalOptions eo = cfg.eval;
  eo.target = on_valid ? EvalTarget::valid : EvalTarget::test;
  MetricReport report = evaluate(data, state.model, trie, templates, eo);
  report.config_hash = config_hash(cfg);
  const MetricMap pop = evaluate_popularity(data, eo.ks, eo.target, eo.recommend.filter_history);
  json j = report.to_json();
  j["target"] = on_valid ? "valid" : "test";
  j["checkpoint"] = ckpt.string();
  j["popularity_baseline"] = pop;
  std::ofstream(run_path(cfg, "report.json")) << j.dump(2) << '\n';
  std::ofstream(run_path(cfg, "report.txt")) << report.table();
  std::cout << report.table();
  std::cout << "popularity baseline:";
  for (const auto& [k, v] : pop) std::cout << ' ' << k << '=' << v;
  std::cout << '\n';
}

void cmd_recommend(const RunConfig& cfg, const std::string& ckpt_flag, const std::string& user, int k,
                   const std::string& template_id) {
  const auto ckpt = model_checkpoint(cfg, ckpt_flag);
  const Dataset data = load_run_dataset(cfg);
  const auto templates = templates_for(load_templates(cfg.templates()), TaskFamily::seqrec);
  if (templates.empty()) throw ConfigError("no seqrec templates");
  const PromptTemplate* tmpl = &templates.front();
  if (!template_id.empty()) {
    tmpl = nullptr;
    for (const auto& t : templates)
      if (t.id == template_id) tmpl = &t;
    if (!tmpl) throw ConfigError("no seqrec template with id " + template_id);
  }
  const TrainState state = load_checkpoint(ckpt);
  const IndexTrie trie = build_trie(state.model.item_ids, state.model.vocab);
  RecommendOptions opt = cfg.eval.recommend;
  opt.k = k;

  std::vector<std::string> users;
  if (user.empty()) {
    for (const auto& u : data.split.users) users.push_back(u.user_id);
  } else {
    users.push_back(user);
  }
  std::ofstream file;
  if (user.empty()) file.open(run_path(cfg, "recommendations.jsonl"));
  std::ostream& out = user.empty() ? static_cast<std::ostream&>(file) : std::cout;
  for (const auto& u : users) {
    const auto* seq = data.find_sequence(u);
    if (!seq) throw DataError("unknown user '" + u + "'");
    const auto recs = recommend_topk(state.model, trie, u, seq->items, *tmpl, opt);
    for (std::size_t r = 0; r < recs.size(); ++r)
      out << json{{"user_id", u}, {"rank", r + 1}, {"item_id", recs[r].item_id}, {"score", recs[r].score}}.dump()
          << '\n';
  }
  if (user.empty()) std::cout << "wrote " << run_path(cfg, "recommendations.jsonl").string() << '\n';
}

void cmd_inspect(const RunConfig& cfg, const std::string& ckpt_flag, const std::string& entity,
                 const std::string& tower_name_flag) {
  fs::path ckpt = ckpt_flag;
  if (ckpt.empty()) {
    ckpt = run_path(cfg, "train.ckpt");
    if (!fs::exists(ckpt)) ckpt = run_path(cfg, "warmup.ckpt");
  }
  require(ckpt, "warmup");
  const Tower tower = parse_tower(tower_name_flag);
  const Dataset data = load_run_dataset(cfg);
  const TrainState state = load_checkpoint(ckpt);
  const auto& m = state.model;
  const auto& assignment = m.ids(tower);
  const SemanticId& id = assignment.id_of(entity);
  const ContentIndex content = ContentIndex::build(data, m.vocab);
  const RowVec<float> x = embed_content<float>(m.backbone, content.of(tower, entity));
  const RowVec<float> z = project(x, m.quantizer.tower(tower));
  const auto code = residual_encode(z, m.quantizer.tower(tower).codebooks);

  std::cout << tower_name(tower) << ' ' << entity << " (assignment epoch " << assignment.epoch << ")\n";
  std::cout << "semantic ID:";
  for (TokenId t : id_tokens(id, m.vocab)) std::cout << ' ' << m.vocab.token_text(t);
  std::cout << '\n';
  RowVec<float> r = z;
  for (std::size_t lv = 0; lv < code.levels.size(); ++lv) {
    const auto& cb = m.quantizer.tower(tower).codebooks[lv];
    std::vector<std::pair<float, int>> d;
    for (Eigen::Index c = 0; c < cb.rows(); ++c)
      d.emplace_back(kernels::squared_distance(r.data(), cb.row(c).data(), r.cols()), static_cast<int>(c));
    std::sort(d.begin(), d.end());
    std::cout << "level " << lv + 1 << ": assigned " << id.levels[lv] << ", current nearest " << d[0].second
              << " (d^2=" << d[0].first << "), runner-up " << d[1].second << " (d^2=" << d[1].first << ")\n";
    r -= cb.row(code.levels[lv]);
  }
  std::cout << "residual |r_M|^2 = " << code.residuals.back().squaredNorm() << '\n';
  std::cout << "collision set:";
  for (const auto& e : assignment.collision_set(entity)) std::cout << ' ' << e << "(p_" << assignment.id_of(e).suffix << ')';
  std::cout << '\n';
}

void cmd_report(const RunConfig& cfg) {
  const auto metrics = run_path(cfg, "metrics.jsonl");
  require(metrics, "pretrain");
  std::ifstream in(metrics);
  std::string line;
  std::cout << "stage      epoch     L_LLM      L_ID   L_Token   L_total  collision  HR@10_valid\n";
  auto cell = [](const json& v) {
    std::ostringstream os;
    if (v.is_null())
      os << std::setw(10) << "-";
    else
      os << std::setw(10) << std::fixed << std::setprecision(4) << v.get<double>();
    return os.str();
  };
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    std::cout << std::left << std::setw(9) << j["stage"].get<std::string>() << std::right << std::setw(6)
              << j["epoch"].get<int>() << cell(j["L_LLM"]) << cell(j["L_ID"]) << cell(j["L_Token"])
              << cell(j["L_total"]) << cell(j["collision_rate"]) << cell(j["HR@10_valid"]) << '\n';
  }
  const auto rep = run_path(cfg, "report.txt");
  if (fs::exists(rep)) std::cout << '\n' << std::ifstream(rep).rdbuf();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ttds: twin-tower semantic-ID generative recommender"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("-c,--config", g.config_file, "INI config file");
  app.add_option("--set", g.overrides, "override a config value: section.key=value")->allow_extra_args(false);
  app.add_option("-r,--run-dir", g.run_dir, "run directory (overrides [run] dir)");
  app.add_flag("--deterministic", g.deterministic, "single-threaded reproducible mode");

  std::uint64_t seed = 0;
  auto* synth = app.add_subcommand("synth", "generate the planted synthetic dataset");
  auto* synth_seed = synth->add_option("--seed", seed, "generator seed");

  std::string reviews, meta;
  auto* ingest = app.add_subcommand("ingest", "load Amazon-style review and metadata JSON-lines");
  ingest->add_option("--reviews", reviews, "review file");
  ingest->add_option("--meta", meta, "metadata file");

  std::uint64_t train_seed = 0;
  auto* pretrain = app.add_subcommand("pretrain", "language-model pretraining on content text");
  auto* pretrain_seed = pretrain->add_option("--seed", train_seed, "training seed");
  auto* warmup = app.add_subcommand("warmup", "quantizer warm-up and initial ID assignment");
  auto* warmup_seed = warmup->add_option("--seed", train_seed, "training seed");
  bool resume = false;
  auto* train = app.add_subcommand("train", "joint training with periodic re-indexing");
  train->add_flag("--resume", resume, "continue from train.ckpt");

  std::string ckpt;
  bool on_valid = false;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "leave-one-out HR@K / NDCG@K");
  evaluate_cmd->add_option("--checkpoint", ckpt, "checkpoint (default: <run>/train.ckpt)");
  evaluate_cmd->add_flag("--valid", on_valid, "score the validation targets instead of the test targets");

  std::string user, template_id;
  int k = 10;
  auto* recommend = app.add_subcommand("recommend", "top-K items for one user (or all users)");
  recommend->add_option("--checkpoint", ckpt, "checkpoint (default: <run>/train.ckpt)");
  recommend->add_option("--user", user, "user id (omit for every user)");
  recommend->add_option("-k,--k", k, "list length")->check(CLI::PositiveNumber);
  recommend->add_option("--template", template_id, "seqrec template id");

  std::string entity, tower = "item";
  auto* inspect = app.add_subcommand("inspect-id", "semantic ID, codeword distances and collision set");
  inspect->add_option("--checkpoint", ckpt, "checkpoint (default: train.ckpt, else warmup.ckpt)");
  inspect->add_option("entity", entity, "entity id")->required();
  inspect->add_option("--tower", tower, "item | user");

  auto* report = app.add_subcommand("report", "metrics log and last evaluation report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (synth_seed->count() || pretrain_seed->count() || warmup_seed->count())
      g.seed = synth_seed->count() ? std::optional<std::uint64_t>() : std::optional<std::uint64_t>(train_seed);
    RunConfig cfg = load_config(g);
    if (synth_seed->count()) cfg.synth.seed = seed;
    if (!reviews.empty()) cfg.reviews_path = reviews;
    if (!meta.empty()) cfg.meta_path = meta;

    if (synth->parsed()) cmd_synth(cfg);
    if (ingest->parsed()) cmd_ingest(cfg);
    if (pretrain->parsed()) cmd_pretrain(cfg);
    if (warmup->parsed()) cmd_warmup(cfg);
    if (train->parsed()) cmd_train(cfg, resume);
    if (evaluate_cmd->parsed()) cmd_evaluate(cfg, ckpt, on_valid);
    if (recommend->parsed()) cmd_recommend(cfg, ckpt, user, k, template_id);
    if (inspect->parsed()) cmd_inspect(cfg, ckpt, entity, tower);
    if (report->parsed()) cmd_report(cfg);
    if (fs::exists(cfg.run_dir) && !report->parsed() && !recommend->parsed() && !inspect->parsed()) write_manifest(cfg);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const MissingArtifactError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitMissing;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}
