#pragma once

// Stage drivers shared by the command-line tool and the end-to-end tests.

#include "ttds/config.hpp"

namespace ttds {

// Builds the NL vocabulary, initialises the backbone and pretrains it on item and user content.
TrainState pretrain_stage(const RunConfig& cfg, const Dataset& data, const std::vector<PromptTemplate>& templates,
                          const MetricsSink& sink = {}, PretrainReport* report = nullptr);

// Extends the vocabulary, builds both quantizer towers and runs the warm-up on a pretrained state.
// Leaves the state ready for train_joint (fresh optimizer, epoch counters at zero).
WarmupReport warmup_stage(TrainState& state, const RunConfig& cfg, const Dataset& data, const MetricsSink& sink = {});

}  // namespace ttds
