#include "mmdino/optim.hpp"

#include <cmath>
#include <numbers>

namespace mmdino {

AdamWState AdamWState::zeros(const ParamLayout& layout) {
  return {ParamVector(layout.total(), 0), ParamVector(layout.total(), 0),
          std::vector<std::int64_t>(layout.tensors().size(), 0)};
}

double group_grad_norm(const ParamLayout& layout, std::span<const Real> grads, ParamGroup group) {
  double sq = 0;
  for (const auto& t : layout.tensors()) {
    if (t.group != group) continue;
    for (size_t i = 0; i < t.size; ++i) sq += static_cast<double>(grads[t.offset + i]) * grads[t.offset + i];
  }
  return std::sqrt(sq);
}

UpdateStats adamw_step(const ParamLayout& layout, std::span<Real> params, std::span<const Real> grads,
                       AdamWState& state, double lr, const AdamWConfig& cfg, const std::array<bool, 3>& groups) {
  layout.check(params);
  layout.check(grads);
  if (state.m.size() != layout.total() || state.v.size() != layout.total() ||
      state.steps.size() != layout.tensors().size())
    throw ShapeError("optimizer state does not match the parameter layout");

  auto enabled = [&](const TensorInfo& t) { return groups[static_cast<int>(t.group)]; };
  UpdateStats stats;
  double sq = 0;
  for (const auto& t : layout.tensors())
    if (enabled(t))
      for (size_t i = 0; i < t.size; ++i) sq += static_cast<double>(grads[t.offset + i]) * grads[t.offset + i];
  stats.grad_norm = std::sqrt(sq);
  if (cfg.grad_clip > 0 && stats.grad_norm > cfg.grad_clip) stats.clip_scale = cfg.grad_clip / stats.grad_norm;

  const double b1 = cfg.beta1, b2 = cfg.beta2;
  const auto& tensors = layout.tensors();
  for (size_t id = 0; id < tensors.size(); ++id) {
    const auto& t = tensors[id];
    if (!enabled(t)) continue;
    const std::int64_t n = ++state.steps[id];
    const double c1 = 1 - std::pow(b1, static_cast<double>(n));
    const double c2 = 1 - std::pow(b2, static_cast<double>(n));
    const double wd = t.decay ? cfg.weight_decay : 0.0;
    for (size_t i = t.offset; i < t.offset + t.size; ++i) {
      const double g = grads[i] * stats.clip_scale;
      const double m = b1 * state.m[i] + (1 - b1) * g;
      const double v = b2 * state.v[i] + (1 - b2) * g * g;
      state.m[i] = static_cast<Real>(m);
      state.v[i] = static_cast<Real>(v);
      const double p = params[i];
      params[i] = static_cast<Real>(p - lr * ((m / c1) / (std::sqrt(v / c2) + cfg.eps) + wd * p));
    }
  }
  return stats;
}

double lr_at(std::int64_t step, std::int64_t total, std::int64_t warmup, double base, double min_lr) {
  if (step < warmup) return base * static_cast<double>(step + 1) / static_cast<double>(warmup);
  if (total <= warmup) return base;
  const double progress = std::min(1.0, static_cast<double>(step - warmup) / static_cast<double>(total - warmup));
  return min_lr + (base - min_lr) * 0.5 * (1 + std::cos(std::numbers::pi * progress));
}

double ema_momentum_at(std::int64_t step, std::int64_t total, double m0, double m1) {
  if (total <= 0) return m0;
  const double progress = std::min(1.0, static_cast<double>(step) / static_cast<double>(total));
  return m1 - (m1 - m0) * 0.5 * (1 + std::cos(std::numbers::pi * progress));
}

double teacher_temp_at(std::int64_t step, std::int64_t warmup, double t0, double t1) {
  if (step >= warmup || warmup <= 0) return t1;
  return t0 + (t1 - t0) * static_cast<double>(step) / static_cast<double>(warmup);
}

}  // namespace mmdino
