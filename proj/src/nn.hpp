#pragma once

// Dense building blocks with explicit backward passes. Row-major activations:
// one token per row.

#include <cmath>

#include "mmdino/model.hpp"

namespace mmdino::nn {

inline constexpr Real kLayerNormEps = static_cast<Real>(1e-6);

inline Mat layer_norm(const Mat& x, const Eigen::Ref<const Vec>& gamma, const Eigen::Ref<const Vec>& beta,
                      NormCache* cache) {
  const auto n = x.rows();
  const auto d = x.cols();
  Mat xhat(n, d);
  Vec rstd(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Real mean = x.row(i).mean();
    const Real var = (x.row(i).array() - mean).square().mean();
    rstd(i) = Real(1) / std::sqrt(var + kLayerNormEps);
    xhat.row(i) = (x.row(i).array() - mean) * rstd(i);
  }
  Mat y = (xhat.array().rowwise() * gamma.transpose().array()).rowwise() + beta.transpose().array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return y;
}

inline Mat layer_norm_backward(const Mat& dy, const NormCache& c, const Eigen::Ref<const Vec>& gamma,
                               Eigen::Ref<Vec> d_gamma, Eigen::Ref<Vec> d_beta) {
  d_gamma += (dy.array() * c.xhat.array()).colwise().sum().transpose().matrix();
  d_beta += dy.colwise().sum().transpose();
  const Mat dxhat = dy.array().rowwise() * gamma.transpose().array();
  Mat dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const Real m1 = dxhat.row(i).mean();
    const Real m2 = (dxhat.row(i).array() * c.xhat.row(i).array()).mean();
    dx.row(i) = c.rstd(i) * (dxhat.row(i).array() - m1 - c.xhat.row(i).array() * m2);
  }
  return dx;
}

// y = x W^T + b
inline Mat linear(const Mat& x, const Eigen::Ref<const Mat>& w, const Eigen::Ref<const Vec>& b) {
  Mat y(x.rows(), w.rows());
  y.noalias() = x * w.transpose();
  y.rowwise() += b.transpose();
  return y;
}

inline Mat linear_backward(const Mat& dy, const Mat& x, const Eigen::Ref<const Mat>& w, Eigen::Ref<Mat> d_w,
                           Eigen::Ref<Vec> d_b) {
  d_w.noalias() += dy.transpose() * x;
  d_b += dy.colwise().sum().transpose();
  Mat dx(dy.rows(), w.cols());
  dx.noalias() = dy * w;
  return dx;
}

// GELU, tanh approximation.
inline constexpr Real kGeluC = static_cast<Real>(0.7978845608028654);  // sqrt(2/pi)
inline constexpr Real kGeluK = static_cast<Real>(0.044715);

inline Mat gelu(const Mat& x) {
  const auto a = x.array();
  return (Real(0.5) * a * (Real(1) + (kGeluC * (a + kGeluK * a.cube())).tanh())).matrix();
}

inline Mat gelu_backward(const Mat& dy, const Mat& x) {
  const auto a = x.array();
  const auto t = (kGeluC * (a + kGeluK * a.cube())).tanh().eval();
  const auto dt = (kGeluC * (Real(1) + Real(3) * kGeluK * a.square())).eval();
  return (dy.array() * (Real(0.5) * (Real(1) + t) + Real(0.5) * a * (Real(1) - t.square()) * dt)).matrix();
}

inline void softmax_rows(Mat& s) {
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    auto r = s.row(i).array();
    r = (r - r.maxCoeff()).exp();
    r /= r.sum();
  }
}

}  // namespace mmdino::nn
