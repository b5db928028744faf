#include "ttds/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <zlib.h>

namespace ttds {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <typename N>
N parse_num(const std::string& key, const std::string& text) {
  const std::string s = trim(text);
  N v{};
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw ConfigError("config key " + key + ": cannot parse '" + text + "' as a number");
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  const std::string s = trim(text);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError("config key " + key + ": expected true/false, got '" + text + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ','))
    if (!trim(part).empty()) out.push_back(parse_num<int>(key, part));
  return out;
}

std::string join(const std::vector<int>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + std::to_string(xs[i]);
  return out;
}

template <typename N>
ConfigField num(const char* sec, const char* key, const char* doc, N& ref) {
  const std::string full = std::string(sec) + "." + key;
  return {sec, key, doc,
          [&ref] {
            if constexpr (std::is_floating_point_v<N>)
              return fmt(static_cast<double>(ref));
            else
              return std::to_string(ref);
          },
          [&ref, full](const std::string& v) { ref = parse_num<N>(full, v); }};
}

ConfigField flag(const char* sec, const char* key, const char* doc, bool& ref) {
  const std::string full = std::string(sec) + "." + key;
  return {sec, key, doc, [&ref] { return std::string(ref ? "true" : "false"); },
          [&ref, full](const std::string& v) { ref = parse_bool(full, v); }};
}

ConfigField text(const char* sec, const char* key, const char* doc, std::string& ref) {
  return {sec, key, doc, [&ref] { return ref; }, [&ref](const std::string& v) { ref = trim(v); }};
}

ConfigField ints(const char* sec, const char* key, const char* doc, std::vector<int>& ref) {
  const std::string full = std::string(sec) + "." + key;
  return {sec, key, doc, [&ref] { return join(ref); },
          [&ref, full](const std::string& v) { ref = parse_int_list(full, v); }};
}

}  // namespace

std::vector<ConfigField> config_fields(RunConfig& c) {
  std::vector<ConfigField> f;
  f.push_back(text("data", "reviews", "review JSON-lines file (ingest)", c.reviews_path));
  f.push_back(text("data", "meta", "item metadata JSON-lines file (ingest)", c.meta_path));
  f.push_back(num("data", "min_core", "k-core threshold for users and items", c.ingest.min_core));
  f.push_back(flag("data", "iterative_kcore", "repeat k-core filtering until stable", c.ingest.iterative_kcore));
  f.push_back(flag("data", "abort_on_malformed", "fail on malformed input lines instead of skipping", c.ingest.abort_on_malformed));
  f.push_back(num("data", "recent_reviews", "review summaries folded into user content", c.ingest.recent_reviews));
  f.push_back(num("data", "top_categories", "categories folded into user content", c.ingest.top_categories));

  f.push_back(num("synth", "clusters", "planted item clusters", c.synth.clusters));
  f.push_back(num("synth", "items", "catalog size", c.synth.items));
  f.push_back(num("synth", "users", "user count", c.synth.users));
  f.push_back(num("synth", "min_length", "shortest interaction sequence", c.synth.min_length));
  f.push_back(num("synth", "max_length", "longest interaction sequence", c.synth.max_length));
  f.push_back(num("synth", "in_cluster_rate", "probability a draw comes from a preferred cluster", c.synth.in_cluster_rate));
  f.push_back(num("synth", "words_per_cluster", "distinct words per cluster vocabulary", c.synth.words_per_cluster));
  f.push_back(num("synth", "seed", "generator seed", c.synth.seed));

  f.push_back(num("model", "d_model", "hidden width", c.backbone.d_model));
  f.push_back(num("model", "layers", "decoder layers", c.backbone.layers));
  f.push_back(num("model", "heads", "attention heads", c.backbone.heads));
  f.push_back(num("model", "max_len", "context length (longer inputs keep the most recent tokens)", c.backbone.max_len));
  f.push_back(num("model", "ffn_mult", "feed-forward width multiplier", c.backbone.ffn_mult));
  f.push_back(num("model", "min_word_freq", "minimum corpus frequency for an NL token", c.min_word_freq));

  f.push_back(num("quantizer", "item_levels", "item ID levels M", c.item_tower.levels));
  f.push_back(num("quantizer", "item_codes", "item codewords per level N", c.item_tower.codes));
  f.push_back(num("quantizer", "item_code_dim", "item code width", c.item_tower.code_dim));
  f.push_back(ints("quantizer", "item_hidden", "item projection hidden widths", c.item_hidden));
  f.push_back(num("quantizer", "user_levels", "user ID levels", c.user_tower.levels));
  f.push_back(num("quantizer", "user_codes", "user codewords per level", c.user_tower.codes));
  f.push_back(num("quantizer", "user_code_dim", "user code width", c.user_tower.code_dim));
  f.push_back(ints("quantizer", "user_hidden", "user projection hidden widths", c.user_hidden));
  f.push_back(num("quantizer", "max_suffixes", "collision suffix tokens P_max", c.train.max_suffixes));
  f.push_back(num("quantizer", "refit_iterations", "Lloyd iterations refitting the codebooks at each re-index (0: off)",
                  c.train.refit_iterations));
  f.push_back(num("quantizer", "kmeans_iterations", "Lloyd iterations per level", c.train.kmeans_iterations));

  f.push_back(num("align", "beta", "token-level loss weight", c.train.align.beta));
  f.push_back(num("align", "commitment", "encoder-side commitment weight during warm-up", c.train.align.commitment));
  f.push_back(num("align", "joint_commitment", "encoder-side commitment weight during joint training (0 keeps projections fixed)",
                  c.train.joint_commitment));
  f.push_back({"align", "token_gradient", "split | literal",
               [&c] { return std::string(c.train.align.token_gradient == TokenGradient::split ? "split" : "literal"); },
               [&c](const std::string& v) {
                 const auto s = trim(v);
                 if (s == "split")
                   c.train.align.token_gradient = TokenGradient::split;
                 else if (s == "literal")
                   c.train.align.token_gradient = TokenGradient::literal;
                 else
                   throw ConfigError("align.token_gradient must be split or literal");
               }});

  f.push_back(flag("align", "content_gradient", "let the alignment losses update the backbone through the content pass",
                   c.train.align.content_gradient));

  f.push_back(text("tasks", "templates", "template file (empty: bundled data/templates.txt)", c.templates_path));
  f.push_back(num("tasks", "seqrec_weight", "mix weight of next-item prediction", c.stream.mix.seqrec));
  f.push_back(num("tasks", "user_pred_weight", "mix weight of user prediction", c.stream.mix.user_pred));
  f.push_back(num("tasks", "preference_weight", "mix weight of preference prediction", c.stream.mix.preference));
  f.push_back(num("tasks", "history_cap", "most recent history items shown in a prompt (H)", c.stream.limits.history_cap));
  f.push_back(num("tasks", "summary_cap", "preference target length in tokens (T)", c.stream.limits.summary_cap));
  f.push_back(num("tasks", "samples_per_epoch", "0: one pass over the seqrec pairs", c.stream.total_samples));

  f.push_back(num("train", "alpha", "alignment loss weight", c.train.alpha));
  f.push_back(num("train", "pretrain_lr", "pretraining learning rate", c.train.pretrain_lr));
  f.push_back(num("train", "warmup_lr", "quantizer warm-up learning rate", c.train.warmup_lr));
  f.push_back(num("train", "joint_lr", "joint training learning rate", c.train.joint_lr));
  f.push_back(num("train", "pretrain_epochs", "pretraining epochs", c.train.pretrain_epochs));
  f.push_back(num("train", "warmup_epochs", "warm-up epochs", c.train.warmup_epochs));
  f.push_back(num("train", "joint_epochs", "joint epochs", c.train.joint_epochs));
  f.push_back(num("train", "batch_size", "instances per optimizer step", c.train.batch_size));
  f.push_back(num("train", "reindex_interval", "joint epochs between ID refreshes (E)", c.train.reindex_interval));
  f.push_back(num("train", "weight_decay", "decoupled weight decay", c.train.weight_decay));
  f.push_back(num("train", "grad_clip", "global gradient-norm clip (0 disables)", c.train.grad_clip));
  f.push_back(num("train", "heldout_fraction", "pretraining documents held out", c.train.heldout_fraction));
  f.push_back(flag("train", "eval_valid", "validation HR@10 after each joint epoch", c.train.eval_valid));
  f.push_back(num("train", "valid_users", "users in the validation pass (0: all)", c.train.valid_users));

  f.push_back(ints("eval", "ks", "cutoffs for HR@K and NDCG@K", c.eval.ks));
  f.push_back({"eval", "decoding", "beam | exhaustive",
               [&c] { return std::string(decode_mode_name(c.eval.recommend.mode)); },
               [&c](const std::string& v) { c.eval.recommend.mode = parse_decode_mode(trim(v)); }});
  f.push_back(num("eval", "beam_width", "0: max(2K, 20)", c.eval.recommend.beam_width));
  f.push_back(flag("eval", "filter_history", "never recommend items already in the history", c.eval.recommend.filter_history));
  f.push_back(num("eval", "max_users", "evaluate the first N users (0: all)", c.eval.max_users));

  f.push_back(num("run", "seed", "training seed", c.train.seed));
  f.push_back(text("run", "dir", "run directory holding every artifact", c.run_dir));
  f.push_back(flag("run", "deterministic", "single-threaded, reproducible execution", c.deterministic));
  return f;
}

void RunConfig::resolve() {
  item_tower.tower = Tower::item;
  user_tower.tower = Tower::user;
  auto widths = [&](const std::vector<int>& hidden, int code_dim) {
    std::vector<int> w{backbone.d_model};
    w.insert(w.end(), hidden.begin(), hidden.end());
    w.push_back(code_dim);
    return w;
  };
  item_tower.widths = widths(item_hidden, item_tower.code_dim);
  user_tower.widths = widths(user_hidden, user_tower.code_dim);
  item_tower.validate(backbone.d_model);
  user_tower.validate(backbone.d_model);
  if (backbone.d_model < 1 || backbone.layers < 1 || backbone.heads < 1 || backbone.d_model % backbone.heads != 0)
    throw ConfigError("model: d_model must be a positive multiple of heads");
  train.validate();
  stream.mix.validate();
  stream.batch_size = train.batch_size;
  if (stream.limits.history_cap < 1 || stream.limits.summary_cap < 1)
    throw ConfigError("tasks.history_cap and tasks.summary_cap must be >= 1");
  if (eval.ks.empty()) throw ConfigError("eval.ks is empty");
  for (int k : eval.ks)
    if (k < 1) throw ConfigError("eval.ks entries must be >= 1");
  if (min_word_freq < 1) throw ConfigError("model.min_word_freq must be >= 1");
  if (run_dir.empty()) throw ConfigError("run.dir is empty");
}

std::filesystem::path RunConfig::templates() const {
  if (!templates_path.empty()) return templates_path;
  return std::filesystem::path(TTDS_DATA_DIR) / "templates.txt";
}

void apply_config_text(RunConfig& cfg, const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  auto fields = config_fields(cfg);
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) throw ConfigError("config key '" + section + "' outside any section");
    for (const auto& [key, value] : body) {
      auto it = std::find_if(fields.begin(), fields.end(),
                             [&](const ConfigField& f) { return f.section == section && f.key == key; });
      if (it == fields.end()) throw ConfigError("unknown config key [" + section + "] " + key);
      it->set(value.data());
    }
  }
}

void apply_config_file(RunConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  apply_config_text(cfg, ss.str());
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq)
    throw ConfigError("override '" + assignment + "' is not of the form section.key=value");
  const std::string section = trim(assignment.substr(0, dot)), key = trim(assignment.substr(dot + 1, eq - dot - 1));
  auto fields = config_fields(cfg);
  for (auto& f : fields)
    if (f.section == section && f.key == key) return f.set(assignment.substr(eq + 1));
  throw ConfigError("unknown config key [" + section + "] " + key);
}

std::string resolved_config_text(const RunConfig& cfg) {
  RunConfig copy = cfg;
  std::ostringstream out;
  std::string section;
  for (const auto& f : config_fields(copy)) {
    if (f.section != section) {
      out << (section.empty() ? "" : "\n") << "[" << f.section << "]\n";
      section = f.section;
    }
    out << "; " << f.doc << "\n" << f.key << " = " << f.get() << "\n";
  }
  return out.str();
}

std::string config_hash(const RunConfig& cfg) {
  const std::string text = resolved_config_text(cfg);
  const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(text.data()), static_cast<uInt>(text.size()));
  std::ostringstream os;
  os << std::hex << std::setw(8) << std::setfill('0') << crc;
  return os.str();
}

}  // namespace ttds
