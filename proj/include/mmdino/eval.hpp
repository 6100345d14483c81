#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mmdino/data.hpp"
#include "mmdino/model.hpp"

namespace mmdino {

using MatD = Eigen::MatrixXd;
using VecD = Eigen::VectorXd;
using Confusion = std::array<std::array<long, kNumClasses>, kNumClasses>;  // [true][pred]

Confusion confusion_matrix(std::span<const int> y_true, std::span<const int> y_pred);

// Multiclass MCC from the confusion matrix (Gorodkin's R_K). Returns 0 when
// either variance term vanishes, e.g. all predictions in one class.
double compute_mcc(std::span<const int> y_true, std::span<const int> y_pred);

struct F1 {
  double value = 0;
  bool defined = true;  // false: class absent from both y_true and y_pred (value 0)
};
F1 compute_f1(std::span<const int> y_true, std::span<const int> y_pred, int cls);

// One-vs-rest AUROC per class via the Mann-Whitney statistic with midranks,
// macro-averaged over classes that have both positives and negatives.
// scores: n x K. Returns NaN if no class qualifies.
double compute_auroc(std::span<const int> y_true, const MatD& scores);
double binary_auroc(std::span<const int> positive, std::span<const double> score);

struct ProbeConfig {
  double l2 = 1e-3;  // on weights, not biases; features are standardized first
  double tolerance = 1e-6;
  int max_iter = 200;
};

// Multinomial logistic regression on standardized features, fit by damped
// Newton iterations until the loss changes by less than the tolerance.
class LinearProbe {
 public:
  static LinearProbe fit(const MatD& features, std::span<const int> labels, const ProbeConfig& cfg = {},
                         int classes = kNumClasses);

  MatD predict_proba(const MatD& features) const;
  std::vector<int> predict(const MatD& features) const;

  const MatD& weights() const { return w_; }  // (d + 1) x K, last row = bias
  double final_loss() const { return loss_; }
  int iterations() const { return iterations_; }

 private:
  VecD mean_, scale_;
  MatD w_;
  double loss_ = 0;
  int iterations_ = 0;
};

struct EvalReport {
  std::string split;  // "internal" or "external"
  int n = 0;
  double mcc = 0;
  double auroc = 0;
  std::array<F1, kNumClasses> f1{};
  Confusion confusion{};
  std::string fingerprint;
  std::optional<std::uint64_t> missing_seed;  // set by missing-modality evaluation

  void validate() const;  // EvalReport invariants; throws Error
};

EvalReport make_report(std::string split, std::span<const int> y_true, const MatD& probs, std::string fingerprint);

enum class FeatureNetwork { teacher, student };
enum class MissingMode { remove, mask };

FeatureNetwork parse_feature_network(std::string_view s);
std::string to_string(FeatureNetwork n);
MissingMode parse_missing_mode(std::string_view s);
std::string to_string(MissingMode m);

struct MissingSpec {
  std::uint64_t seed = 0;
  MissingMode mode = MissingMode::remove;
};

// Modality dropped for a subject under `seed`: uniform over its present
// modalities, a function of (seed, subject id) only. nullopt when fewer than
// two modalities are present.
std::optional<int> dropped_modality(const SubjectRecord& record, std::uint64_t seed);

// CLS features of eval views, one row per subject.
MatD extract_features(const Model& model, std::span<const Real> params, std::span<const SubjectRecord* const> subjects,
                      const ViewConfig& views, const MissingSpec* missing = nullptr);

struct EvalConfig {
  FeatureNetwork network = FeatureNetwork::teacher;
  ProbeConfig probe;
  MissingMode missing_mode = MissingMode::remove;
};

struct ProbeEvaluation {
  LinearProbe probe;
  EvalReport internal;
  std::optional<EvalReport> external;  // absent when the dataset has no external split
};

// Fits the probe on labeled training subjects and scores both test splits.
// With `missing`, test subjects lose one modality each (the probe itself is
// always fit on complete inputs).
ProbeEvaluation evaluate_model(const Model& model, const ModelState& state, const Dataset& dataset,
                               const ViewConfig& views, const EvalConfig& cfg, const std::string& fingerprint,
                               const MissingSpec* missing = nullptr);

// Labeled subjects of a split and their labels.
std::vector<const SubjectRecord*> labeled(const Dataset& dataset, Split split);
std::vector<int> labels_of(std::span<const SubjectRecord* const> subjects);

}  // namespace mmdino
