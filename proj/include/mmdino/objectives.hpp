#pragma once

#include <optional>
#include <vector>

#include "mmdino/masking.hpp"
#include "mmdino/model.hpp"

namespace mmdino {

enum class TargetKind { pseudo, real };

// Image-level target for one target crop: teacher scores (pseudo) or a
// smoothed one-hot label (real).
struct ImageLevelTarget {
  TargetKind kind = TargetKind::pseudo;
  Vec probs;
  std::optional<int> label;
  int source_crop = -1;  // crop the target came from; -1 = not tied to a crop

  static ImageLevelTarget pseudo(Vec teacher_probs, int source_crop);
  // (1 - eps) * onehot(label) + eps / K
  static ImageLevelTarget real(int label, int prototypes, double label_smoothing);
};

// Scalar loss plus its gradient w.r.t. the student logits of each crop.
struct LossWithGrad {
  double loss = 0;
  std::vector<Vec> d_logits;  // image level: one per student crop
  Mat d_patch_logits;         // patch level: one row per token, zero on unflagged rows
};

double cross_entropy(const Vec& target, const Vec& probs);
void require_simplex(const Vec& probs, const char* what);

// Mean over (target, student crop) pairs, skipping pairs whose student crop is
// the target's own source crop.
double image_level_loss(const std::vector<Vec>& student_probs, const std::vector<ImageLevelTarget>& targets);
LossWithGrad image_level_loss_grad(const std::vector<Vec>& student_logits, double student_temp,
                                   const std::vector<ImageLevelTarget>& targets);

// Mean over flagged tokens of CE(teacher -> student); 0 when nothing is flagged.
double patch_level_loss(const Mat& student_probs, const Mat& teacher_probs, const MaskPlan& plan);
LossWithGrad patch_level_loss_grad(const Mat& student_logits, double student_temp, const Mat& teacher_probs,
                                   const MaskPlan& plan);

// Per-item loss values before batch weighting.
struct ItemLoss {
  bool labeled = false;
  double image = 0;       // pseudo-target term (unlabeled items)
  double supervised = 0;  // real-target term (labeled items)
  double patch = 0;
};

struct LossBreakdown {
  double image_loss = 0;       // (1/B) sum over unlabeled items
  double supervised_loss = 0;  // (1/B) sum over labeled items
  double patch_loss = 0;       // (1/B) sum over all items
  double supervised_weight = 2.0;
  double total = 0;

  bool finite() const;
};

// total = image + w_sup * supervised + patch
LossBreakdown total_loss(const std::vector<ItemLoss>& items, double supervised_weight = 2.0);

}  // namespace mmdino
