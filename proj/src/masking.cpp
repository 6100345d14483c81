#include "mmdino/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mmdino {

std::string to_string(MaskKind k) {
  switch (k) {
    case MaskKind::none: return "none";
    case MaskKind::random_patch: return "random_patch";
    case MaskKind::full_modality: return "full_modality";
  }
  return "?";
}

int MaskPlan::count() const { return static_cast<int>(std::count(flags.begin(), flags.end(), std::uint8_t{1})); }

void MaskingPolicy::validate() const {
  auto prob = [](double p, const char* name) {
    if (!(p >= 0 && p <= 1)) throw ConfigError(std::string("masking.") + name + " must lie in [0, 1]");
  };
  prob(sample_fraction, "sample_fraction");
  prob(modality_mask_prob, "modality_mask_prob");
  if (!(ratio_min > 0 && ratio_max < 1 && ratio_min <= ratio_max))
    throw ConfigError("masking ratio range must be ordered and inside (0, 1)");
}

MaskPlan full_modality_plan(std::span<const TokenCoord> coords, int modality) {
  MaskPlan plan = MaskPlan::empty(static_cast<int>(coords.size()));
  bool any = false;
  for (size_t i = 0; i < coords.size(); ++i)
    if (coords[i].modality == modality) plan.flags[i] = 1, any = true;
  if (!any) throw PreconditionError("full_modality_plan: modality " + std::to_string(modality) + " not present");
  plan.kind = MaskKind::full_modality;
  plan.masked_modality = modality;
  return plan;
}

MaskPlan sample_plan(std::span<const TokenCoord> coords, const MaskingPolicy& policy, std::mt19937_64& rng) {
  const int T = static_cast<int>(coords.size());
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<int> present;
  for (const auto& c : coords)
    if (c.modality != kChannelStack && std::find(present.begin(), present.end(), c.modality) == present.end())
      present.push_back(c.modality);

  // Both draws happen unconditionally so one item's outcome never shifts the
  // random stream of the next.
  const double u_modality = unit(rng);
  const double u_random = unit(rng);
  // Masking a lone modality would leave nothing to predict it from.
  if (present.size() >= 2 && u_modality < policy.modality_mask_prob) {
    std::uniform_int_distribution<size_t> pick(0, present.size() - 1);
    return full_modality_plan(coords, present[pick(rng)]);
  }
  if (u_random < policy.sample_fraction && T > 0) {
    const double ratio = policy.ratio_min == policy.ratio_max
                             ? policy.ratio_min
                             : std::uniform_real_distribution<double>(policy.ratio_min, policy.ratio_max)(rng);
    const int n = static_cast<int>(std::lround(ratio * T));
    std::vector<int> order(T);
    std::iota(order.begin(), order.end(), 0);
    // Partial Fisher-Yates: the first n entries are a uniform n-subset.
    for (int i = 0; i < n; ++i) {
      std::uniform_int_distribution<int> j(i, T - 1);
      std::swap(order[i], order[j(rng)]);
    }
    MaskPlan plan = MaskPlan::empty(T);
    for (int i = 0; i < n; ++i) plan.flags[order[i]] = 1;
    plan.kind = n > 0 ? MaskKind::random_patch : MaskKind::none;
    return plan;
  }
  return MaskPlan::empty(T);
}

TokenizedCrop apply_plan(const TokenizedCrop& crop, const MaskPlan& plan, const Eigen::Ref<const Vec>& mask_token) {
  if (static_cast<int>(plan.flags.size()) != crop.tokens())
    throw ShapeError("mask plan has " + std::to_string(plan.flags.size()) + " flags for " +
                     std::to_string(crop.tokens()) + " tokens");
  if (mask_token.size() != crop.embeddings.cols()) throw ShapeError("mask token width mismatch");
  TokenizedCrop out = crop;
  for (int i = 0; i < crop.tokens(); ++i)
    if (plan.flags[i]) out.embeddings.row(i + 1) = mask_token.transpose() + crop.context.row(i + 1);
  return out;
}

TokenizedCrop drop_modality(const TokenizedCrop& crop, int modality) {
  auto it = std::find(crop.present_modalities.begin(), crop.present_modalities.end(), modality);
  if (it == crop.present_modalities.end())
    throw PreconditionError("drop_modality: modality " + std::to_string(modality) + " is not present");
  if (crop.present_modalities.size() == 1) throw PreconditionError("drop_modality: cannot drop the last modality");

  std::vector<int> keep;
  for (int i = 0; i < crop.tokens(); ++i)
    if (crop.coords[i].modality != modality) keep.push_back(i);

  TokenizedCrop out;
  out.grid = crop.grid;
  out.present_modalities = crop.present_modalities;
  out.present_modalities.erase(out.present_modalities.begin() + (it - crop.present_modalities.begin()));
  const auto n = static_cast<Eigen::Index>(keep.size());
  out.embeddings.resize(n + 1, crop.embeddings.cols());
  out.context.resize(n + 1, crop.context.cols());
  out.patches.resize(n, crop.patches.cols());
  out.embeddings.row(0) = crop.embeddings.row(0);
  out.context.row(0) = crop.context.row(0);
  for (Eigen::Index k = 0; k < n; ++k) {
    out.embeddings.row(k + 1) = crop.embeddings.row(keep[k] + 1);
    out.context.row(k + 1) = crop.context.row(keep[k] + 1);
    out.patches.row(k) = crop.patches.row(keep[k]);
    out.coords.push_back(crop.coords[keep[k]]);
  }
  return out;
}

}  // namespace mmdino
