#include "ttds/pipeline.hpp"

namespace ttds {

TrainState pretrain_stage(const RunConfig& cfg, const Dataset& data, const std::vector<PromptTemplate>& templates,
                          const MetricsSink& sink, PretrainReport* report) {
  TrainState state;
  state.config_snapshot = resolved_config_text(cfg);
  state.rng.seed(cfg.train.seed);
  state.model.vocab = build_vocabulary(data, templates, cfg.min_word_freq);
  state.model.backbone = Backbone<float>(cfg.backbone, state.model.vocab.size(), mix_seed(cfg.train.seed, 1));
  const ContentIndex content = ContentIndex::build(data, state.model.vocab);
  auto docs = content.sequences(Tower::item);
  for (auto& d : content.sequences(Tower::user)) docs.push_back(std::move(d));
  PretrainReport rep = pretrain_backbone(state.model.backbone, docs, cfg.train, sink);
  if (report) *report = std::move(rep);
  state.stage = "pretrain";
  return state;
}

WarmupReport warmup_stage(TrainState& state, const RunConfig& cfg, const Dataset& data, const MetricsSink& sink) {
  auto& m = state.model;
  if (state.stage != "pretrain" || m.vocab.extended())
    throw StateError("warm-up needs a pretrain-stage state (found stage '" + state.stage + "')");
  if (m.backbone.config().d_model != cfg.backbone.d_model)
    throw ConfigError("model.d_model differs from the pretrained backbone");
  extend_vocab(m.vocab, m.backbone, cfg.item_tower.levels, cfg.item_tower.codes, cfg.user_tower.levels,
               cfg.user_tower.codes, cfg.train.max_suffixes, mix_seed(cfg.train.seed, 2));
  m.quantizer.item = TowerQuantizer<float>(cfg.item_tower, mix_seed(cfg.train.seed, 3));
  m.quantizer.user = TowerQuantizer<float>(cfg.user_tower, mix_seed(cfg.train.seed, 4));
  const ContentIndex content = ContentIndex::build(data, m.vocab);
  WarmupReport rep = warmup_quantizer(m, content, cfg.train, sink);
  state.stage = "warmup";
  state.epochs_done = 0;
  state.reindex_count = 0;
  state.optimizer = AdamW<float>(AdamWConfig{0.9, 0.999, 1e-8, cfg.train.weight_decay});
  state.rng.seed(mix_seed(cfg.train.seed, 5));
  state.config_snapshot = resolved_config_text(cfg);
  return rep;
}

}  // namespace ttds
