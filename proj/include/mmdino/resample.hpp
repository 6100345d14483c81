#pragma once

#include <string>
#include <string_view>

#include <Eigen/Core>

#include "mmdino/common.hpp"

namespace mmdino {

enum class InterpolationKernel { bicubic, bilinear };

InterpolationKernel parse_kernel(std::string_view name);
std::string to_string(InterpolationKernel k);

// 1-D resampling operator as an (out_len x in_len) matrix.
//
// Output sample j sits at input coordinate
//   x = start + (j + 0.5) * extent / out_len - 0.5
// i.e. half-pixel centers (align_corners = false), the convention used by
// torch.nn.functional.interpolate. Taps falling outside [0, in_len) are
// clamped to the border sample. The bicubic kernel uses a = -0.75.
Eigen::MatrixXd resample_weights(int in_len, double start, double extent, int out_len, InterpolationKernel kernel);

// Separable resample of the window [top, top+height) x [left, left+width)
// of `src` onto an out_rows x out_cols grid.
Image resample(const Image& src, double top, double left, double height, double width, int out_rows, int out_cols,
               InterpolationKernel kernel);

// Whole-image resize.
Image resize(const Image& src, int out_rows, int out_cols, InterpolationKernel kernel);

}  // namespace mmdino
