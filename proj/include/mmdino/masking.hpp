#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mmdino/tokenizer.hpp"

namespace mmdino {

enum class MaskKind { none, random_patch, full_modality };

std::string to_string(MaskKind k);

// Which non-CLS tokens of one crop the student sees as mask tokens.
struct MaskPlan {
  std::vector<std::uint8_t> flags;
  MaskKind kind = MaskKind::none;
  std::optional<int> masked_modality;

  int count() const;
  static MaskPlan empty(int tokens) { return {std::vector<std::uint8_t>(tokens, 0), MaskKind::none, std::nullopt}; }
};

struct MaskingPolicy {
  double sample_fraction = 0.5;
  double ratio_min = 0.1;
  double ratio_max = 0.5;
  double modality_mask_prob = 0.2;

  void validate() const;
};

// Full-modality masking is tried first; items it hits get no random masking.
// Random plans flag exactly round(ratio * T) tokens.
MaskPlan sample_plan(std::span<const TokenCoord> coords, const MaskingPolicy& policy, std::mt19937_64& rng);

// Flagged rows become mask_token + that row's positional/modality context.
TokenizedCrop apply_plan(const TokenizedCrop& crop, const MaskPlan& plan, const Eigen::Ref<const Vec>& mask_token);

// Removes one modality's tokens (inference-time missingness).
TokenizedCrop drop_modality(const TokenizedCrop& crop, int modality);

// Plan that flags every token of `modality`.
MaskPlan full_modality_plan(std::span<const TokenCoord> coords, int modality);

}  // namespace mmdino
