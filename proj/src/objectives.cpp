#include "mmdino/objectives.hpp"

#include <cmath>

namespace mmdino {

namespace {

constexpr double kSimplexTol = 1e-5;

// log of a probability, floored so a zero student probability gives a large
// finite loss rather than inf.
double safe_log(double p) { return std::log(std::max(p, 1e-30)); }

}  // namespace

ImageLevelTarget ImageLevelTarget::pseudo(Vec teacher_probs, int source_crop) {
  require_simplex(teacher_probs, "teacher target");
  return {TargetKind::pseudo, std::move(teacher_probs), std::nullopt, source_crop};
}

ImageLevelTarget ImageLevelTarget::real(int label, int prototypes, double eps) {
  if (label < 0 || label >= prototypes) throw PreconditionError("label outside the prototype range");
  if (!(eps >= 0 && eps < 1)) throw PreconditionError("label smoothing must lie in [0, 1)");
  Vec t = Vec::Constant(prototypes, static_cast<Real>(eps / prototypes));
  t(label) += static_cast<Real>(1 - eps);
  return {TargetKind::real, std::move(t), label, -1};
}

void require_simplex(const Vec& p, const char* what) {
  if (p.size() == 0) throw PreconditionError(std::string(what) + " is empty");
  double sum = 0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (!(p(i) >= 0)) throw PreconditionError(std::string(what) + " has a negative or non-finite entry");
    sum += p(i);
  }
  if (std::abs(sum - 1) > kSimplexTol) throw PreconditionError(std::string(what) + " does not sum to 1");
}

double cross_entropy(const Vec& target, const Vec& probs) {
  if (target.size() != probs.size()) throw ShapeError("cross_entropy width mismatch");
  double ce = 0;
  for (Eigen::Index k = 0; k < target.size(); ++k)
    if (target(k) > 0) ce -= target(k) * safe_log(probs(k));
  return ce;
}

double image_level_loss(const std::vector<Vec>& student_probs, const std::vector<ImageLevelTarget>& targets) {
  for (const auto& s : student_probs) require_simplex(s, "student scores");
  double sum = 0;
  int pairs = 0;
  for (const auto& t : targets) {
    require_simplex(t.probs, "target");
    for (int s = 0; s < static_cast<int>(student_probs.size()); ++s) {
      if (s == t.source_crop) continue;
      sum += cross_entropy(t.probs, student_probs[s]);
      ++pairs;
    }
  }
  return pairs ? sum / pairs : 0.0;
}

LossWithGrad image_level_loss_grad(const std::vector<Vec>& student_logits, double temp,
                                   const std::vector<ImageLevelTarget>& targets) {
  std::vector<Vec> probs;
  probs.reserve(student_logits.size());
  for (const auto& z : student_logits) probs.push_back(prototype_scores(z, temp).probs);

  LossWithGrad out;
  out.d_logits.reserve(student_logits.size());
  for (const auto& z : student_logits) out.d_logits.push_back(Vec::Zero(z.size()));
  int pairs = 0;
  for (const auto& t : targets)
    for (int s = 0; s < static_cast<int>(probs.size()); ++s)
      if (s != t.source_crop) ++pairs;
  if (pairs == 0) return out;

  // d CE(t, softmax(z / T)) / dz = (softmax(z / T) - t) / T   since sum(t) = 1
  const Real scale = static_cast<Real>(1.0 / (temp * pairs));
  for (const auto& t : targets) {
    require_simplex(t.probs, "target");
    for (int s = 0; s < static_cast<int>(probs.size()); ++s) {
      if (s == t.source_crop) continue;
      out.loss += cross_entropy(t.probs, probs[s]);
      out.d_logits[s] += scale * (probs[s] - t.probs);
    }
  }
  out.loss /= pairs;
  return out;
}

double patch_level_loss(const Mat& student, const Mat& teacher, const MaskPlan& plan) {
  if (student.rows() != teacher.rows() || student.cols() != teacher.cols() ||
      static_cast<Eigen::Index>(plan.flags.size()) != student.rows())
    throw ShapeError("patch loss: student, teacher and mask plan are misaligned");
  double sum = 0;
  int n = 0;
  for (Eigen::Index i = 0; i < student.rows(); ++i) {
    if (!plan.flags[i]) continue;
    sum += cross_entropy(teacher.row(i).transpose(), student.row(i).transpose());
    ++n;
  }
  return n ? sum / n : 0.0;
}

LossWithGrad patch_level_loss_grad(const Mat& student_logits, double temp, const Mat& teacher, const MaskPlan& plan) {
  if (student_logits.rows() != teacher.rows() || student_logits.cols() != teacher.cols() ||
      static_cast<Eigen::Index>(plan.flags.size()) != student_logits.rows())
    throw ShapeError("patch loss: student, teacher and mask plan are misaligned");
  LossWithGrad out;
  out.d_patch_logits = Mat::Zero(student_logits.rows(), student_logits.cols());
  const int n = plan.count();
  if (n == 0) return out;
  const Real scale = static_cast<Real>(1.0 / (temp * n));
  for (Eigen::Index i = 0; i < student_logits.rows(); ++i) {
    if (!plan.flags[i]) continue;
    const Vec p = prototype_scores(student_logits.row(i).transpose(), temp).probs;
    const Vec t = teacher.row(i).transpose();
    out.loss += cross_entropy(t, p);
    out.d_patch_logits.row(i) = (scale * (p - t)).transpose();
  }
  out.loss /= n;
  return out;
}

bool LossBreakdown::finite() const {
  return std::isfinite(image_loss) && std::isfinite(supervised_loss) && std::isfinite(patch_loss) && std::isfinite(total);
}

LossBreakdown total_loss(const std::vector<ItemLoss>& items, double w) {
  LossBreakdown b;
  b.supervised_weight = w;
  if (items.empty()) return b;
  const double inv = 1.0 / static_cast<double>(items.size());
  for (const auto& it : items) {
    if (it.labeled)
      b.supervised_loss += it.supervised * inv;
    else
      b.image_loss += it.image * inv;
    b.patch_loss += it.patch * inv;
  }
  b.total = b.image_loss + w * b.supervised_loss + b.patch_loss;
  return b;
}

}  // namespace mmdino
