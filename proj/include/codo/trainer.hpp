#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "codo/augment.hpp"
#include "codo/contrastive.hpp"
#include "codo/encoder.hpp"
#include "codo/rng.hpp"

namespace codo::trainer {

enum class LrSchedule { cosine, step };

LrSchedule lr_schedule_from_string(const std::string& s);
std::string to_string(LrSchedule s);

struct TrainConfig {
  int batch_size = 4;
  // Per-step rate, linearly scaled from 0.06 at batch 1024 by default.
  double base_lr = 0.06 * 4.0 / 1024.0;
  double momentum_sgd = 0.9;
  double weight_decay = 1e-4;
  int epochs = 30;
  LrSchedule lr_schedule = LrSchedule::cosine;
  std::uint64_t seed = 0;
  int n_keys = 1;
  int snapshot_every = 1000;

  void validate() const;
};

// Everything a run needs beyond the data directory.
struct TrainSettings {
  encoder::EncoderConfig encoder;
  TrainConfig train;
  contrastive::LossConfig loss;
  int queue_capacity = 4096;
  double key_momentum = 0.999;
  std::uint64_t config_hash = 0;

  void validate() const;
};

struct TrainState {
  encoder::EncoderPair pair;
  std::array<contrastive::NegativeQueue, encoder::kLevels> queues;
  std::vector<Tensor> velocity;  // SGD momentum buffers, query layout
  std::int64_t step = 0;
  Rng rng;
};

TrainState init_state(const TrainSettings& settings);

struct StepMetrics {
  std::int64_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  int queue_fill = 0;
  double pos_logit_mean = 0.0;
};

// One-line structured record, stable field order, no timestamps.
std::string to_jsonl(const StepMetrics& m);

// Learning rate for 1-based step t of total_steps.
double lr_at(const TrainConfig& cfg, std::int64_t t, std::int64_t total_steps);

// One optimization step: key forwards without gradient, query forwards with,
// multi-view loss averaged over the batch, SGD on the query side, momentum
// blend of the key side, then key embeddings enqueued per level. Non-finite
// loss raises TrainingDivergedError naming the batch's foreground ids.
StepMetrics train_step(const encoder::Encoder& model, TrainState& state,
                       const std::vector<augment::ViewSet>& batch,
                       const TrainSettings& settings, double lr);

// Full training state including queue contents and rng, so a resumed run
// reproduces the original step for step.
encoder::CheckpointData pack_state(const TrainState& state,
                                   const TrainSettings& settings);
TrainState unpack_state(const encoder::CheckpointData& data,
                        const TrainSettings& settings);

struct PretrainResult {
  std::string final_checkpoint;
  std::int64_t steps_run = 0;
  double final_loss = 0.0;
};

// Trains over every shard in shard_dir for cfg.epochs epochs. Writes
// metrics.jsonl plus periodic and final checkpoints under out_dir. When
// resume_path is non-empty the checkpoint must carry the same config hash.
// Deterministic mode loads batches synchronously instead of through the
// prefetch thread; batch order is identical either way.
PretrainResult run_pretraining(const TrainSettings& settings,
                               const std::string& shard_dir,
                               const std::string& out_dir,
                               const std::string& resume_path = {},
                               bool deterministic = false);

}  // namespace codo::trainer
