#pragma once

#include "ttds/alignment.hpp"
#include "ttds/corpus.hpp"
#include "ttds/model.hpp"
#include "ttds/optim.hpp"
#include "ttds/tasks.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace ttds {

struct TrainConfig {
  double alpha = 1.0;
  AlignmentConfig align;
  // Encoder-side commitment weight during joint training; 0 leaves the projections as the warm-up
  // produced them and only the codebooks follow the moving embeddings.
  double joint_commitment = 0.0;
  double pretrain_lr = 1e-3;
  double warmup_lr = 1e-3;
  double joint_lr = 5e-4;
  int pretrain_epochs = 5;
  int warmup_epochs = 20;
  int joint_epochs = 15;
  int batch_size = 16;
  int reindex_interval = 1;  // E
  int refit_iterations = 10;  // Lloyd iterations on the codebooks at each re-index, 0 disables
  int max_suffixes = 16;     // P_max
  int kmeans_iterations = 50;
  double weight_decay = 0.01;
  double grad_clip = 1.0;        // global-norm clip, 0 disables
  double heldout_fraction = 0.1;  // pretraining documents held out for the reported loss
  bool eval_valid = true;         // HR@10 on the validation targets after each joint epoch
  std::size_t valid_users = 0;    // 0: all
  std::uint64_t seed = 42;

  void validate() const;
};

double total_loss(double llm, double dmvae, double alpha);

// One line of the metrics log. Fields that do not apply to a stage stay empty and are written as null.
struct EpochMetrics {
  std::string stage;
  int epoch = 0;
  std::optional<double> l_llm, l_id, l_token, l_total, collision_rate, hr10_valid, l_llm_heldout;
  double wall_time = 0.0;

  nlohmann::json to_json() const;
};
using MetricsSink = std::function<void(const EpochMetrics&)>;

// Content token sequences per entity, without <bos>.
struct ContentIndex {
  std::map<std::string, std::vector<TokenId>> item, user;

  static ContentIndex build(const Dataset& data, const Vocabulary& vocab);
  const std::vector<TokenId>& of(Tower t, const std::string& entity) const;
  std::vector<std::string> entities(Tower t) const;
  std::vector<std::vector<TokenId>> sequences(Tower t) const;  // in entity order
};

// NL vocabulary over item and user content plus template text (placeholders removed).
Vocabulary build_vocabulary(const Dataset& data, const std::vector<PromptTemplate>& templates, int min_freq);

// ---- stage 0: language-model pretraining on content text ----

struct PretrainReport {
  std::vector<double> train_loss;    // per epoch
  std::vector<double> heldout_loss;  // [0] before training, then per epoch
};

PretrainReport pretrain_backbone(Backbone<float>& model, const std::vector<std::vector<TokenId>>& documents,
                                 const TrainConfig& cfg, const MetricsSink& sink = {});

// Mean next-token loss over documents (<bos> prepended).
double document_loss(const Backbone<float>& model, const std::vector<std::vector<TokenId>>& documents);

// ---- stage 1: quantizer warm-up on frozen embeddings ----

struct WarmupReport {
  std::vector<double> init_norms[2];     // mean |r_m|^2 after kmeans_init, per tower
  std::vector<double> refined_norms[2];  // after gradient refinement
};

// One shuffled pass of token-loss refinement over fixed embeddings; returns the mean token loss.
double warmup_epoch(TowerQuantizer<float>& tower, const Mat<float>& embeddings, const TrainConfig& cfg,
                    AdamW<float>& optimizer, std::mt19937_64& rng);

// Expects model.vocab extended and model.quantizer constructed. Runs kmeans_init, then AdamW on
// projections and codebooks under the token loss, then assigns IDs. The backbone is read only.
WarmupReport warmup_quantizer(ModelBundle& model, const ContentIndex& content, const TrainConfig& cfg,
                              const MetricsSink& sink = {});

// ---- stage 2: joint training ----

// Per-entity inputs to the alignment losses of one batch: unique entities per tower.
struct AlignmentInputs {
  std::vector<Tower> towers;
  std::vector<std::string> entities;
  std::vector<std::vector<TokenId>> content;
  std::vector<std::vector<TokenId>> id_tokens;
};
AlignmentInputs alignment_inputs(const std::vector<PromptInstance>& batch, const ContentIndex& content,
                                 const ModelBundle& model);

struct BatchLoss {
  double llm = 0.0;    // mean NLL per target token
  double id = 0.0;     // sum over towers of the per-tower mean
  double token = 0.0;  // sum over towers of the per-tower mean
  double dmvae = 0.0;
  double total = 0.0;
  int target_tokens = 0;
};

// Loss of one batch and, when grads are given, its gradient with respect to every trainable tensor.
template <typename T>
BatchLoss batch_loss(const Backbone<T>& backbone, const TwinTowerQuantizer<T>& quantizer,
                     const std::vector<PromptInstance>& batch, const AlignmentInputs& align, double alpha,
                     const AlignmentConfig& align_cfg, BackboneParams<T>* backbone_grads,
                     TwinTowerQuantizer<T>* quantizer_grads);

// Resumable joint-training state; this is what a checkpoint holds.
struct TrainState {
  std::string stage = "pretrain";  // last completed stage: pretrain | warmup | joint
  ModelBundle model;
  AdamW<float> optimizer;
  int epochs_done = 0;    // joint epochs completed
  int reindex_count = 0;
  std::mt19937_64 rng;
  std::string config_snapshot;
};

struct JointHooks {
  MetricsSink metrics;
  std::function<void(const TrainState&)> epoch_end;  // e.g. write a checkpoint
  std::function<double(const TrainState&)> valid_hr10;  // overrides the built-in validation pass
};

// Runs joint epochs until state.epochs_done == cfg.joint_epochs. Re-indexes both towers after
// joint epoch e (1-based) when e % E == 0.
void train_joint(TrainState& state, const Dataset& data, const ContentIndex& content,
                 const std::vector<PromptTemplate>& templates, const StreamConfig& stream, const TrainConfig& cfg,
                 const JointHooks& hooks = {});

// Trainable tensors of the joint stage, in checkpoint order.
std::vector<ParamRef<float>> joint_params(ModelBundle& model);

// ---- checkpoints ----

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
TrainState load_checkpoint(const std::filesystem::path& path);
std::string serialize_checkpoint(const TrainState& state);
TrainState deserialize_checkpoint(const std::string& bytes);

}  // namespace ttds
