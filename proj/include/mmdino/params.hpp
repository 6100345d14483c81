#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "mmdino/common.hpp"

namespace mmdino {

// Which part of the network a tensor belongs to. The head warmup phase
// updates only `head` tensors.
enum class ParamGroup { embedding, encoder, head };

struct TensorInfo {
  std::string name;
  std::vector<int> shape;  // 1 or 2 dims
  size_t offset = 0;
  size_t size = 0;
  ParamGroup group = ParamGroup::encoder;
  bool decay = true;  // subject to weight decay

  int rows() const { return shape.size() == 2 ? shape[0] : 1; }
  int cols() const { return shape.size() == 2 ? shape[1] : shape[0]; }
};

// Flat parameter storage. The aligned allocator pins the buffer's alignment so
// Eigen's vectorized reductions peel the same way for every copy; with plain
// malloc alignment a restored checkpoint could drift from the original run in
// the last ulp.
using ParamVector = std::vector<Real, Eigen::aligned_allocator<Real>>;

// Maps hierarchical tensor names onto offsets in one flat buffer. Every
// parameter set (student, teacher, gradients, optimizer moments) is a
// ParamVector laid out by the same ParamLayout.
class ParamLayout {
 public:
  int add(std::string name, std::vector<int> shape, ParamGroup group, bool decay);

  int find(std::string_view name) const;  // throws ShapeError if absent
  bool contains(std::string_view name) const;
  const TensorInfo& info(int id) const { return tensors_[id]; }
  const std::vector<TensorInfo>& tensors() const { return tensors_; }
  size_t total() const { return total_; }

  Eigen::Map<const Mat> mat(std::span<const Real> buf, int id) const;
  Eigen::Map<Mat> mat(std::span<Real> buf, int id) const;
  Eigen::Map<const Vec> vec(std::span<const Real> buf, int id) const;
  Eigen::Map<Vec> vec(std::span<Real> buf, int id) const;

  std::span<const Real> slice(std::span<const Real> buf, int id) const;
  std::span<Real> slice(std::span<Real> buf, int id) const;

  void check(std::span<const Real> buf) const;  // size must match total()

 private:
  std::vector<TensorInfo> tensors_;
  std::unordered_map<std::string, int> index_;
  size_t total_ = 0;
};

// Hash of the raw bytes of a parameter buffer, optionally restricted to one
// group. Used to assert that a buffer did or did not change.
std::uint64_t hash_params(const ParamLayout& layout, std::span<const Real> buf);
std::uint64_t hash_group(const ParamLayout& layout, std::span<const Real> buf, ParamGroup group);

}  // namespace mmdino
