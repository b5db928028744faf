#pragma once

#include "ttds/backbone.hpp"
#include "ttds/corpus.hpp"
#include "ttds/eval.hpp"
#include "ttds/quantizer.hpp"
#include "ttds/synthetic.hpp"
#include "ttds/tasks.hpp"
#include "ttds/trainer.hpp"

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace ttds {

// Every tunable of a run. Sections: [data] [synth] [model] [quantizer] [align] [tasks] [train] [eval] [run].
struct RunConfig {
  std::string reviews_path;
  std::string meta_path;
  IngestOptions ingest;
  SynthConfig synth;
  BackboneConfig backbone;
  int min_word_freq = 1;
  TowerConfig item_tower{Tower::item};
  TowerConfig user_tower{Tower::user};
  std::vector<int> item_hidden{64};  // projection widths between d and code_dim
  std::vector<int> user_hidden{64};
  std::string templates_path;        // empty: the bundled template file
  StreamConfig stream;
  TrainConfig train;
  EvalOptions eval;
  std::string run_dir = "run";
  bool deterministic = false;

  // Fills projection widths from backbone d, hidden widths and code_dim, then validates everything.
  void resolve();
  std::filesystem::path templates() const;
};

struct ConfigField {
  std::string section;
  std::string key;
  std::string doc;
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

// Field table bound to `cfg`; the order is the order of the resolved-config echo.
std::vector<ConfigField> config_fields(RunConfig& cfg);

// Reads an INI file over the current values. Unknown sections or keys are a ConfigError.
void apply_config_file(RunConfig& cfg, const std::filesystem::path& path);
void apply_config_text(RunConfig& cfg, const std::string& text);
// "section.key=value".
void apply_override(RunConfig& cfg, const std::string& assignment);

std::string resolved_config_text(const RunConfig& cfg);
std::string config_hash(const RunConfig& cfg);

}  // namespace ttds
