#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "mmdino/params.hpp"

namespace mmdino {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.04;  // decoupled; only tensors flagged `decay`
  double grad_clip = 3.0;      // global L2 norm; <= 0 disables
};

// First/second moments share the parameter layout. Step counters are kept
// per tensor so a group that starts updating late gets its own bias
// correction.
struct AdamWState {
  ParamVector m;
  ParamVector v;
  std::vector<std::int64_t> steps;

  static AdamWState zeros(const ParamLayout& layout);
};

struct UpdateStats {
  double grad_norm = 0;  // before clipping, over the updated tensors
  double clip_scale = 1;
};

// One AdamW step over the tensors whose group is enabled in `groups`
// (indexed by ParamGroup). Disabled tensors, and their moments, are left
// untouched bit for bit.
UpdateStats adamw_step(const ParamLayout& layout, std::span<Real> params, std::span<const Real> grads,
                       AdamWState& state, double lr, const AdamWConfig& cfg, const std::array<bool, 3>& groups);

double group_grad_norm(const ParamLayout& layout, std::span<const Real> grads, ParamGroup group);

// Linear warmup to base_lr over warmup_steps, then half-cosine decay to
// min_lr at total_steps:
//   t <  W: base * (t + 1) / W
//   t >= W: min + (base - min) * (1 + cos(pi * (t - W) / (T - W))) / 2
double lr_at(std::int64_t step, std::int64_t total_steps, std::int64_t warmup_steps, double base_lr, double min_lr);

// Teacher EMA momentum, cosine from m0 to m1 over the run.
double ema_momentum_at(std::int64_t step, std::int64_t total_steps, double m0, double m1);

// Teacher temperature, linear from t0 to t1 over warmup_steps, then t1.
double teacher_temp_at(std::int64_t step, std::int64_t warmup_steps, double t0, double t1);

}  // namespace mmdino
