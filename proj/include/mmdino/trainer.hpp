#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "mmdino/data.hpp"
#include "mmdino/masking.hpp"
#include "mmdino/model.hpp"
#include "mmdino/objectives.hpp"
#include "mmdino/optim.hpp"

namespace mmdino {

struct TrainConfig {
  int epochs = 200;
  int steps_per_epoch = 42;  // fixed-iteration epochs
  int batch_size = 64;
  double base_lr = 1e-4;
  double min_lr = 1e-6;
  int lr_warmup_epochs = 10;
  int head_warmup_epochs = 10;  // only the projection heads update
  AdamWConfig optim;
  double ema_start = 0.992;
  double ema_end = 1.0;
  double teacher_temp_start = 0.04;  // ramps to HeadConfig::teacher_temp
  int teacher_temp_warmup_epochs = 30;
  double center_momentum = 0.9;
  double supervised_weight = 2.0;
  double label_smoothing = 0.1;
  int queue_capacity = 4;  // prepared batches in flight
  std::uint64_t seed = 0;
  bool desk_scale = false;

  void validate() const;
  std::int64_t total_steps() const { return static_cast<std::int64_t>(epochs) * steps_per_epoch; }
};

// Everything a run needs to continue: both networks, center, optimizer
// moments and the step counter. Batch randomness is a pure function of
// (seed, step), so no generator state is stored.
struct TrainerState {
  ModelState model;
  AdamWState optim;
  std::int64_t step = 0;

  static TrainerState initialize(const Model& model, std::uint64_t seed);
};

struct BatchItem {
  int subject = 0;  // index into the training pool
  std::optional<int> label;
  CropSet crops;
  std::vector<MaskPlan> plans;  // one per global crop
};

struct Batch {
  std::int64_t step = 0;
  std::vector<BatchItem> items;
};

struct StepOutput {
  std::int64_t step = 0;
  LossBreakdown loss;
  ParamVector grads;
  Mat teacher_logits;  // image-head logits of every teacher global crop
  double lr = 0;
  double ema_momentum = 0;
  double teacher_temp = 0;
  bool heads_only = false;
};

struct StepRecord {
  std::int64_t step = 0;
  LossBreakdown loss;
  double lr = 0;
  double grad_norm = 0;
};

class NonFiniteLoss : public Error {
 public:
  using Error::Error;
};

class Trainer {
 public:
  Trainer(const Model& model, TrainConfig cfg, MaskingPolicy masking, ViewConfig views,
          std::vector<const SubjectRecord*> pool);

  // Deterministic in (seed, step).
  Batch make_batch(std::int64_t step) const;

  // Forward/backward for one batch. Reads the state only: the teacher and
  // center change exclusively in apply().
  StepOutput compute(const TrainerState& state, const Batch& batch) const;

  // Optimizer step on the student, then EMA and center updates.
  UpdateStats apply(TrainerState& state, const StepOutput& out) const;

  const TrainConfig& config() const { return cfg_; }
  const std::vector<const SubjectRecord*>& pool() const { return pool_; }
  bool in_head_warmup(std::int64_t step) const {
    return step < static_cast<std::int64_t>(cfg_.head_warmup_epochs) * cfg_.steps_per_epoch;
  }

 private:
  const Model& model_;
  TrainConfig cfg_;
  MaskingPolicy masking_;
  ViewConfig views_;
  std::vector<const SubjectRecord*> pool_;
};

struct PretrainOptions {
  std::filesystem::path out_dir;  // empty: no metrics file, no checkpoints
  std::string config_text;        // stored in checkpoints
  std::int64_t max_steps = -1;    // stop after this many steps in this call
  bool checkpoint_each_epoch = true;
  std::function<void(const StepRecord&)> on_step;
};

// Runs from state.step to the end of the schedule (or max_steps). A
// producer thread prepares batches into a bounded queue; this thread owns
// all parameter state.
std::vector<StepRecord> pretrain(const Model& model, const TrainConfig& cfg, const MaskingPolicy& masking,
                                 const ViewConfig& views, const Dataset& dataset, TrainerState& state,
                                 const PretrainOptions& opts = {});

// Header of the per-step metrics CSV.
inline constexpr const char* kMetricsHeader = "step,image_loss,patch_loss,supervised_loss,total";

}  // namespace mmdino
