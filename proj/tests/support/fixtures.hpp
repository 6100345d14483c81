#pragma once

// Shared helpers for the test binaries: small configs, synthetic records and
// independent reference implementations used as oracles.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "mmdino/config.hpp"
#include "mmdino/data.hpp"
#include "mmdino/eval.hpp"
#include "mmdino/model.hpp"

namespace mmdino::testing {

// Keys cubic kernel, written out directly.
inline double keys_cubic(double x, double a = -0.75) {
  x = std::abs(x);
  if (x <= 1) return ((a + 2) * x - (a + 3)) * x * x + 1;
  if (x < 2) return ((a * x - 5 * a) * x + 8 * a) * x - 4 * a;
  return 0;
}

// Reference resize of the whole image to out_rows x out_cols: half-pixel
// centers, borders handled by replicating edge pixels into a padded copy.
inline std::vector<double> reference_bicubic(const Image& img, int out_rows, int out_cols) {
  const int pad = 4;
  const int H = img.rows + 2 * pad, W = img.cols + 2 * pad;
  std::vector<double> padded(static_cast<size_t>(H) * W);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const int sy = std::clamp(y - pad, 0, img.rows - 1), sx = std::clamp(x - pad, 0, img.cols - 1);
      padded[static_cast<size_t>(y) * W + x] = img.at(sy, sx);
    }
  std::vector<double> out(static_cast<size_t>(out_rows) * out_cols);
  for (int i = 0; i < out_rows; ++i)
    for (int j = 0; j < out_cols; ++j) {
      const double sy = (i + 0.5) * img.rows / out_rows - 0.5;
      const double sx = (j + 0.5) * img.cols / out_cols - 0.5;
      const int fy = static_cast<int>(std::floor(sy)), fx = static_cast<int>(std::floor(sx));
      double acc = 0;
      for (int dy = -1; dy <= 2; ++dy)
        for (int dx = -1; dx <= 2; ++dx) {
          const double w = keys_cubic(sy - (fy + dy)) * keys_cubic(sx - (fx + dx));
          acc += w * padded[static_cast<size_t>(fy + dy + pad) * W + (fx + dx + pad)];
        }
      out[static_cast<size_t>(i) * out_cols + j] = acc;
    }
  return out;
}

// Multiclass MCC as the Pearson correlation of the one-hot label and
// prediction matrices (a formula independent of the confusion-matrix one).
inline double reference_mcc(const std::vector<int>& y, const std::vector<int>& p, int K = kNumClasses) {
  const double n = static_cast<double>(y.size());
  double cov_xy = 0, cov_xx = 0, cov_yy = 0;
  for (int k = 0; k < K; ++k) {
    double mx = 0, my = 0;
    for (size_t i = 0; i < y.size(); ++i) mx += (y[i] == k), my += (p[i] == k);
    mx /= n, my /= n;
    for (size_t i = 0; i < y.size(); ++i) {
      const double a = (y[i] == k) - mx, b = (p[i] == k) - my;
      cov_xy += a * b, cov_xx += a * a, cov_yy += b * b;
    }
  }
  if (cov_xx == 0 || cov_yy == 0) return 0;
  return cov_xy / std::sqrt(cov_xx * cov_yy);
}

// Pairwise-count AUROC for one class (ties count one half).
inline double reference_auroc(const std::vector<int>& y, const std::vector<double>& s, int cls) {
  double wins = 0, pairs = 0;
  for (size_t i = 0; i < y.size(); ++i)
    for (size_t j = 0; j < y.size(); ++j)
      if (y[i] == cls && y[j] != cls) {
        pairs += 1;
        wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
      }
  return pairs ? wins / pairs : std::nan("");
}

inline double reference_f1(const std::vector<int>& y, const std::vector<int>& p, int cls) {
  double tp = 0, fp = 0, fn = 0;
  for (size_t i = 0; i < y.size(); ++i) {
    tp += y[i] == cls && p[i] == cls;
    fp += y[i] != cls && p[i] == cls;
    fn += y[i] == cls && p[i] != cls;
  }
  const double precision = tp + fp > 0 ? tp / (tp + fp) : 0, recall = tp + fn > 0 ? tp / (tp + fn) : 0;
  return precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0;
}

// Small but complete model: 4 modalities, 98-pixel globals, 2 blocks.
inline ModelConfig tiny_model_config(int embed_dim = 16, int depth = 1) {
  ModelConfig m;
  m.encoder.embed_dim = embed_dim;
  m.encoder.depth = depth;
  m.encoder.num_heads = 2;
  m.head.hidden = {16};
  return m;
}

// Run config for fast trainer tests: tiny model, 2 items per batch.
inline RunConfig tiny_run_config() {
  RunConfig c;
  c.model = tiny_model_config();
  c.views.n_local = 2;
  c.train.epochs = 3;
  c.train.steps_per_epoch = 2;
  c.train.batch_size = 2;
  c.train.head_warmup_epochs = 1;
  c.train.lr_warmup_epochs = 1;
  c.train.teacher_temp_warmup_epochs = 1;
  c.train.base_lr = 1e-3;
  return c;
}

inline SynthSpec small_synth(int n = 40, std::uint64_t seed = 7) {
  SynthSpec s;
  s.n_subjects = n;
  s.n_external = n / 5;
  s.seed = seed;
  s.prevalence = {0.4, 0.3, 0.3};
  return s;
}

// Record with an elliptical tumor and independent noise in each modality.
inline SubjectRecord blob_record(int size = 96, int radius = 16, std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.f, 1.f);
  SubjectRecord r;
  r.id = "blob";
  r.tumor_mask = BinaryMask(size, size);
  const double c = (size - 1) / 2.0;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) r.tumor_mask.at(y, x) = (y - c) * (y - c) + (x - c) * (x - c) <= radius * radius;
  r.modalities.resize(4);
  for (int m = 0; m < 4; ++m) {
    Image img(size, size);
    for (auto& v : img.data) v = n(rng);
    r.modalities[m] = img;
  }
  r.label = 0;
  return r;
}

// Pixel-space features: each modality of the eval view averaged over
// `block` x `block` cells.
inline MatD pooled_pixels(std::span<const SubjectRecord* const> subjects, const ViewConfig& views,
                          const std::vector<int>& modalities, int block = 14) {
  const int g = views.global_size / block;
  MatD X(static_cast<Eigen::Index>(subjects.size()), static_cast<Eigen::Index>(modalities.size()) * g * g);
  for (size_t i = 0; i < subjects.size(); ++i) {
    const Crop crop = eval_view(*subjects[i], views);
    Eigen::Index col = 0;
    for (int m : modalities) {
      const Image& img = *crop.images[m];
      for (int by = 0; by < g; ++by)
        for (int bx = 0; bx < g; ++bx, ++col) {
          double s = 0;
          for (int y = 0; y < block; ++y)
            for (int x = 0; x < block; ++x) s += img.at(by * block + y, bx * block + x);
          X(static_cast<Eigen::Index>(i), col) = s / (block * block);
        }
    }
  }
  return X;
}

}  // namespace mmdino::testing
