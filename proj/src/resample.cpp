#include "mmdino/resample.hpp"

#include <algorithm>
#include <cmath>

namespace mmdino {

namespace {

constexpr double kCubicA = -0.75;

double cubic_near(double t) { return ((kCubicA + 2) * t - (kCubicA + 3)) * t * t + 1; }             // |t| <= 1
double cubic_far(double t) { return ((kCubicA * t - 5 * kCubicA) * t + 8 * kCubicA) * t - 4 * kCubicA; }  // 1 < |t| < 2

}  // namespace

InterpolationKernel parse_kernel(std::string_view name) {
  if (name == "bicubic") return InterpolationKernel::bicubic;
  if (name == "bilinear") return InterpolationKernel::bilinear;
  throw ConfigError("unknown interpolation kernel: " + std::string(name));
}

std::string to_string(InterpolationKernel k) { return k == InterpolationKernel::bicubic ? "bicubic" : "bilinear"; }

Eigen::MatrixXd resample_weights(int in_len, double start, double extent, int out_len, InterpolationKernel kernel) {
  if (in_len < 1 || out_len < 1 || !(extent > 0)) throw ShapeError("resample_weights: degenerate axis");
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(out_len, in_len);
  const double scale = extent / out_len;
  auto tap = [&](int j, int idx, double weight) { w(j, std::clamp(idx, 0, in_len - 1)) += weight; };
  for (int j = 0; j < out_len; ++j) {
    const double x = start + (j + 0.5) * scale - 0.5;
    const double x0 = std::floor(x);
    const double t = x - x0;
    const int i0 = static_cast<int>(x0);
    if (kernel == InterpolationKernel::bilinear) {
      tap(j, i0, 1 - t);
      tap(j, i0 + 1, t);
    } else {
      tap(j, i0 - 1, cubic_far(t + 1));
      tap(j, i0, cubic_near(t));
      tap(j, i0 + 1, cubic_near(1 - t));
      tap(j, i0 + 2, cubic_far(2 - t));
    }
  }
  return w;
}

Image resample(const Image& src, double top, double left, double height, double width, int out_rows, int out_cols,
               InterpolationKernel kernel) {
  const Eigen::MatrixXf wr = resample_weights(src.rows, top, height, out_rows, kernel).cast<float>();
  const Eigen::MatrixXf wc = resample_weights(src.cols, left, width, out_cols, kernel).cast<float>();
  using RowMajorF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const RowMajorF> in(src.data.data(), src.rows, src.cols);
  Image out(out_rows, out_cols);
  Eigen::Map<RowMajorF> o(out.data.data(), out_rows, out_cols);
  o.noalias() = wr * (in * wc.transpose());
  return out;
}

Image resize(const Image& src, int out_rows, int out_cols, InterpolationKernel kernel) {
  return resample(src, 0, 0, src.rows, src.cols, out_rows, out_cols, kernel);
}

}  // namespace mmdino
