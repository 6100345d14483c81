#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace mmdino {

// Working precision of every learnable tensor. The gradient-check build
// defines MMDINO_REAL_DOUBLE; everything else trains in float.
#ifdef MMDINO_REAL_DOUBLE
using Real = double;
#else
using Real = float;
#endif

using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::Matrix<Real, Eigen::Dynamic, 1>;
using RowVec = Eigen::Matrix<Real, 1, Eigen::Dynamic>;

// Errors raised by the library. Callers that only care about "it failed"
// catch mmdino::Error.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

// Row-major 2D array. Images are float32 on disk and in memory regardless
// of the working precision; masks are 8-bit.
template <class T>
struct Grid2D {
  int rows = 0;
  int cols = 0;
  std::vector<T> data;

  Grid2D() = default;
  Grid2D(int r, int c, T fill = T{}) : rows(r), cols(c), data(static_cast<size_t>(r) * c, fill) {}

  T& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  const T& at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }
  size_t size() const { return data.size(); }
  bool same_shape(const Grid2D& o) const { return rows == o.rows && cols == o.cols; }

  friend bool operator==(const Grid2D&, const Grid2D&) = default;
};

using Image = Grid2D<float>;
using BinaryMask = Grid2D<std::uint8_t>;

// Glioma subtype labels. Order matters: it is the column order of every
// report and the index order of the prevalence vector.
enum class GliomaClass : int { astro = 0, gbm = 1, oligo = 2 };
inline constexpr int kNumClasses = 3;
inline constexpr const char* kClassNames[kNumClasses] = {"astro", "gbm", "oligo"};

// 64-bit FNV-1a, used for parameter fingerprints and config hashes.
inline std::uint64_t fnv1a(const void* bytes, size_t n, std::uint64_t h = 1469598103934665603ull) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex64(std::uint64_t v);

}  // namespace mmdino
