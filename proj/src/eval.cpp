#include "mmdino/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <thread>

#include <Eigen/Cholesky>

namespace mmdino {

Confusion confusion_matrix(std::span<const int> y_true, std::span<const int> y_pred) {
  if (y_true.size() != y_pred.size()) throw ShapeError("label and prediction counts differ");
  Confusion c{};
  for (size_t i = 0; i < y_true.size(); ++i) {
    if (y_true[i] < 0 || y_true[i] >= kNumClasses || y_pred[i] < 0 || y_pred[i] >= kNumClasses)
      throw PreconditionError("class index out of range");
    ++c[y_true[i]][y_pred[i]];
  }
  return c;
}

double compute_mcc(std::span<const int> y_true, std::span<const int> y_pred) {
  const Confusion c = confusion_matrix(y_true, y_pred);
  double s = 0, correct = 0, pt = 0, pp = 0, tt = 0;
  std::array<double, kNumClasses> t{}, p{};
  for (int i = 0; i < kNumClasses; ++i)
    for (int j = 0; j < kNumClasses; ++j) {
      t[i] += c[i][j];
      p[j] += c[i][j];
      s += c[i][j];
    }
  for (int k = 0; k < kNumClasses; ++k) {
    correct += c[k][k];
    pt += p[k] * t[k];
    pp += p[k] * p[k];
    tt += t[k] * t[k];
  }
  const double den = (s * s - pp) * (s * s - tt);
  if (!(den > 0)) return 0.0;
  return (correct * s - pt) / std::sqrt(den);
}

F1 compute_f1(std::span<const int> y_true, std::span<const int> y_pred, int cls) {
  const Confusion c = confusion_matrix(y_true, y_pred);
  double tp = c[cls][cls], fn = 0, fp = 0;
  for (int k = 0; k < kNumClasses; ++k)
    if (k != cls) fn += c[cls][k], fp += c[k][cls];
  if (tp + fn + fp == 0) return {0.0, false};
  return {2 * tp / (2 * tp + fp + fn), true};
}

double binary_auroc(std::span<const int> positive, std::span<const double> score) {
  const size_t n = score.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return score[a] < score[b]; });
  std::vector<double> rank(n);
  for (size_t i = 0; i < n;) {
    size_t j = i;
    while (j + 1 < n && score[order[j + 1]] == score[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
    for (size_t k = i; k <= j; ++k) rank[order[k]] = mid;
    i = j + 1;
  }
  double n_pos = 0, rank_sum = 0;
  for (size_t i = 0; i < n; ++i)
    if (positive[i]) n_pos += 1, rank_sum += rank[i];
  const double n_neg = static_cast<double>(n) - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::numeric_limits<double>::quiet_NaN();
  return (rank_sum - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg);
}

double compute_auroc(std::span<const int> y_true, const MatD& scores) {
  if (static_cast<Eigen::Index>(y_true.size()) != scores.rows()) throw ShapeError("score rows must match labels");
  double sum = 0;
  int used = 0;
  std::vector<int> pos(y_true.size());
  std::vector<double> col(y_true.size());
  for (Eigen::Index k = 0; k < scores.cols(); ++k) {
    for (size_t i = 0; i < y_true.size(); ++i) {
      pos[i] = y_true[i] == k;
      col[i] = scores(static_cast<Eigen::Index>(i), k);
    }
    const double a = binary_auroc(pos, col);
    if (std::isnan(a)) continue;
    sum += a;
    ++used;
  }
  return used ? sum / used : std::numeric_limits<double>::quiet_NaN();
}

// ---------------------------------------------------------------- probe

namespace {

MatD softmax_rows_d(const MatD& z) {
  MatD p = z;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    p.row(i).array() -= p.row(i).maxCoeff();
    p.row(i) = p.row(i).array().exp().matrix();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

double probe_loss(const MatD& X, const MatD& Y, const MatD& W, double l2) {
  const MatD z = X * W;
  double ce = 0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double m = z.row(i).maxCoeff();
    const double lse = m + std::log((z.row(i).array() - m).exp().sum());
    ce += lse - (z.row(i).array() * Y.row(i).array()).sum();
  }
  const Eigen::Index d = W.rows() - 1;
  return ce / static_cast<double>(X.rows()) + 0.5 * l2 * W.topRows(d).squaredNorm();
}

}  // namespace

LinearProbe LinearProbe::fit(const MatD& features, std::span<const int> labels, const ProbeConfig& cfg, int K) {
  const Eigen::Index n = features.rows(), d = features.cols();
  if (static_cast<Eigen::Index>(labels.size()) != n) throw ShapeError("probe: one label per feature row");
  if (n == 0) throw PreconditionError("probe: no training rows");
  std::vector<int> seen(K, 0);
  for (int y : labels) {
    if (y < 0 || y >= K) throw PreconditionError("probe: label out of range");
    seen[y] = 1;
  }
  for (int k = 0; k < K; ++k)
    if (!seen[k]) throw PreconditionError("probe: class " + std::to_string(k) + " is absent from the training labels");

  LinearProbe probe;
  probe.mean_ = features.colwise().mean().transpose();
  probe.scale_ = VecD::Ones(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    const double sd = std::sqrt((features.col(j).array() - probe.mean_(j)).square().mean());
    if (sd > 1e-12) probe.scale_(j) = sd;
  }
  MatD X(n, d + 1);
  X.leftCols(d) = (features.rowwise() - probe.mean_.transpose()).array().rowwise() / probe.scale_.transpose().array();
  X.col(d).setOnes();
  MatD Y = MatD::Zero(n, K);
  for (Eigen::Index i = 0; i < n; ++i) Y(i, labels[i]) = 1;

  const Eigen::Index D = (d + 1) * K;  // parameters, class-major: index k * (d + 1) + a
  MatD W = MatD::Zero(d + 1, K);
  double loss = probe_loss(X, Y, W, cfg.l2);
  int it = 0;
  for (; it < cfg.max_iter; ++it) {
    const MatD P = softmax_rows_d(X * W);
    MatD G = X.transpose() * (P - Y) / static_cast<double>(n);
    G.topRows(d) += cfg.l2 * W.topRows(d);

    MatD H = MatD::Zero(D, D);
    for (int k = 0; k < K; ++k)
      for (int l = k; l < K; ++l) {
        VecD w = P.col(k).cwiseProduct((k == l ? VecD::Ones(n) : VecD::Zero(n)) - P.col(l)) / static_cast<double>(n);
        const MatD block = X.transpose() * w.asDiagonal() * X;
        H.block(k * (d + 1), l * (d + 1), d + 1, d + 1) = block;
        if (l != k) H.block(l * (d + 1), k * (d + 1), d + 1, d + 1) = block.transpose();
      }
    for (int k = 0; k < K; ++k)
      for (Eigen::Index a = 0; a < D / K; ++a) H(k * (d + 1) + a, k * (d + 1) + a) += (a < d ? cfg.l2 : 0.0) + 1e-9;

    VecD g(D);
    for (int k = 0; k < K; ++k) g.segment(k * (d + 1), d + 1) = G.col(k);
    const VecD step = H.ldlt().solve(g);

    // Backtracking until the loss does not increase.
    double t = 1.0, next = loss;
    MatD Wn = W;
    for (int h = 0; h < 40; ++h, t *= 0.5) {
      for (int k = 0; k < K; ++k) Wn.col(k) = W.col(k) - t * step.segment(k * (d + 1), d + 1);
      next = probe_loss(X, Y, Wn, cfg.l2);
      if (next <= loss) break;
    }
    if (!(next <= loss)) break;
    const double change = loss - next;
    W = Wn;
    loss = next;
    if (change < cfg.tolerance) {
      ++it;
      break;
    }
  }
  probe.w_ = W;
  probe.loss_ = loss;
  probe.iterations_ = it;
  return probe;
}

MatD LinearProbe::predict_proba(const MatD& features) const {
  const Eigen::Index d = mean_.size();
  if (features.cols() != d) throw ShapeError("probe: feature width mismatch");
  MatD X(features.rows(), d + 1);
  X.leftCols(d) = (features.rowwise() - mean_.transpose()).array().rowwise() / scale_.transpose().array();
  X.col(d).setOnes();
  return softmax_rows_d(X * w_);
}

std::vector<int> LinearProbe::predict(const MatD& features) const {
  const MatD p = predict_proba(features);
  std::vector<int> out(p.rows());
  for (Eigen::Index i = 0; i < p.rows(); ++i) p.row(i).maxCoeff(&out[i]);
  return out;
}

// ---------------------------------------------------------------- reports

void EvalReport::validate() const {
  if (!(mcc >= -1 - 1e-12 && mcc <= 1 + 1e-12)) throw Error(split + ": MCC outside [-1, 1]");
  if (!(auroc >= 0 && auroc <= 1)) throw Error(split + ": AUROC outside [0, 1]");
  long total = 0;
  for (int k = 0; k < kNumClasses; ++k) {
    if (!(f1[k].value >= 0 && f1[k].value <= 1)) throw Error(split + ": F1 outside [0, 1]");
    for (long v : confusion[k]) {
      if (v < 0) throw Error(split + ": negative confusion count");
      total += v;
    }
  }
  if (total != n) throw Error(split + ": confusion matrix does not sum to the subject count");
}

EvalReport make_report(std::string split, std::span<const int> y_true, const MatD& probs, std::string fingerprint) {
  std::vector<int> pred(probs.rows());
  for (Eigen::Index i = 0; i < probs.rows(); ++i) probs.row(i).maxCoeff(&pred[i]);
  EvalReport r;
  r.split = std::move(split);
  r.n = static_cast<int>(y_true.size());
  r.mcc = compute_mcc(y_true, pred);
  r.auroc = compute_auroc(y_true, probs);
  for (int k = 0; k < kNumClasses; ++k) r.f1[k] = compute_f1(y_true, pred, k);
  r.confusion = confusion_matrix(y_true, pred);
  r.fingerprint = std::move(fingerprint);
  return r;
}

FeatureNetwork parse_feature_network(std::string_view s) {
  if (s == "teacher") return FeatureNetwork::teacher;
  if (s == "student") return FeatureNetwork::student;
  throw ConfigError("feature network must be teacher or student, got " + std::string(s));
}
std::string to_string(FeatureNetwork n) { return n == FeatureNetwork::teacher ? "teacher" : "student"; }

MissingMode parse_missing_mode(std::string_view s) {
  if (s == "remove") return MissingMode::remove;
  if (s == "mask") return MissingMode::mask;
  throw ConfigError("missing-modality mode must be remove or mask, got " + std::string(s));
}
std::string to_string(MissingMode m) { return m == MissingMode::remove ? "remove" : "mask"; }

// ---------------------------------------------------------------- features

std::optional<int> dropped_modality(const SubjectRecord& record, std::uint64_t seed) {
  std::vector<int> present;
  for (int m = 0; m < static_cast<int>(record.modalities.size()); ++m)
    if (record.modalities[m]) present.push_back(m);
  if (present.size() < 2) return std::nullopt;
  const std::uint64_t h = fnv1a(record.id.data(), record.id.size());
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  std::mt19937_64 rng(seq);
  return present[std::uniform_int_distribution<size_t>(0, present.size() - 1)(rng)];
}

MatD extract_features(const Model& model, std::span<const Real> params, std::span<const SubjectRecord* const> subjects,
                      const ViewConfig& views, const MissingSpec* missing) {
  const int d = model.config().encoder.embed_dim;
  MatD out(static_cast<Eigen::Index>(subjects.size()), d);
  const EmbeddingTables tables = model.tables(params);
  const bool stacked = model.config().tokenizer.channel_stack;

  auto one = [&](size_t i) {
    const SubjectRecord& rec = *subjects[i];
    Crop crop = eval_view(rec, views);
    std::optional<int> drop = missing ? dropped_modality(rec, missing->seed) : std::nullopt;
    if (drop && stacked) {
      // No per-modality tokens to remove: the stacked channel reads as zeros.
      crop.images[*drop] = Image(views.global_size, views.global_size, 0.0f);
      drop.reset();
    }
    TokenizedCrop tokens = model.tokenizer().tokenize(crop.images, tables);
    if (drop) {
      if (missing->mode == MissingMode::remove) {
        tokens = drop_modality(tokens, *drop);
      } else {
        tokens = apply_plan(tokens, full_modality_plan(tokens.coords, *drop), tables.mask_token);
      }
    }
    const EncodedCrop enc = model.encode(tokens, params);
    out.row(static_cast<Eigen::Index>(i)) = enc.cls.cast<double>().transpose();
  };

  // Rows are independent; each worker owns a contiguous range.
  const size_t workers = std::max<size_t>(1, std::min<size_t>(std::thread::hardware_concurrency(), subjects.size()));
  if (workers <= 1) {
    for (size_t i = 0; i < subjects.size(); ++i) one(i);
    return out;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  const size_t chunk = (subjects.size() + workers - 1) / workers;
  for (size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        for (size_t i = w * chunk; i < std::min(subjects.size(), (w + 1) * chunk); ++i) one(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

std::vector<const SubjectRecord*> labeled(const Dataset& dataset, Split split) {
  std::vector<const SubjectRecord*> out;
  for (const auto* r : dataset.split(split))
    if (r->label) out.push_back(r);
  return out;
}

std::vector<int> labels_of(std::span<const SubjectRecord* const> subjects) {
  std::vector<int> y;
  y.reserve(subjects.size());
  for (const auto* r : subjects) y.push_back(r->label.value());
  return y;
}

ProbeEvaluation evaluate_model(const Model& model, const ModelState& state, const Dataset& dataset,
                               const ViewConfig& views, const EvalConfig& cfg, const std::string& fingerprint,
                               const MissingSpec* missing) {
  const std::span<const Real> params = cfg.network == FeatureNetwork::teacher ? std::span<const Real>(state.teacher)
                                                                              : std::span<const Real>(state.student);
  const auto train = labeled(dataset, Split::train);
  const MatD train_x = extract_features(model, params, train, views);
  const auto train_y = labels_of(train);
  ProbeEvaluation ev{LinearProbe::fit(train_x, train_y, cfg.probe), {}, std::nullopt};

  auto score = [&](Split split, const char* tag) {
    const auto subjects = labeled(dataset, split);
    if (subjects.empty()) throw PreconditionError(std::string("no labeled subjects in the ") + tag + " test split");
    const auto y = labels_of(subjects);
    EvalReport r = make_report(tag, y, ev.probe.predict_proba(extract_features(model, params, subjects, views, missing)),
                               fingerprint);
    if (missing) r.missing_seed = missing->seed;
    return r;
  };
  ev.internal = score(Split::test_internal, "internal");
  if (!labeled(dataset, Split::test_external).empty()) ev.external = score(Split::test_external, "external");
  return ev;
}

}  // namespace mmdino
