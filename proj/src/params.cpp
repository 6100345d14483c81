#include "mmdino/params.hpp"

#include <cstdio>

namespace mmdino {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

int ParamLayout::add(std::string name, std::vector<int> shape, ParamGroup group, bool decay) {
  if (index_.count(name)) throw ShapeError("duplicate parameter name: " + name);
  if (shape.empty() || shape.size() > 2) throw ShapeError("parameter " + name + " must be 1-D or 2-D");
  size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("parameter " + name + " has a non-positive dimension");
    n *= static_cast<size_t>(d);
  }
  TensorInfo t{std::move(name), std::move(shape), total_, n, group, decay};
  total_ += n;
  int id = static_cast<int>(tensors_.size());
  index_.emplace(t.name, id);
  tensors_.push_back(std::move(t));
  return id;
}

int ParamLayout::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ShapeError("unknown parameter: " + std::string(name));
  return it->second;
}

bool ParamLayout::contains(std::string_view name) const { return index_.count(std::string(name)) > 0; }

Eigen::Map<const Mat> ParamLayout::mat(std::span<const Real> buf, int id) const {
  const auto& t = tensors_[id];
  return {buf.data() + t.offset, t.rows(), t.cols()};
}

Eigen::Map<Mat> ParamLayout::mat(std::span<Real> buf, int id) const {
  const auto& t = tensors_[id];
  return {buf.data() + t.offset, t.rows(), t.cols()};
}

Eigen::Map<const Vec> ParamLayout::vec(std::span<const Real> buf, int id) const {
  const auto& t = tensors_[id];
  return {buf.data() + t.offset, static_cast<Eigen::Index>(t.size)};
}

Eigen::Map<Vec> ParamLayout::vec(std::span<Real> buf, int id) const {
  const auto& t = tensors_[id];
  return {buf.data() + t.offset, static_cast<Eigen::Index>(t.size)};
}

std::span<const Real> ParamLayout::slice(std::span<const Real> buf, int id) const {
  const auto& t = tensors_[id];
  return buf.subspan(t.offset, t.size);
}

std::span<Real> ParamLayout::slice(std::span<Real> buf, int id) const {
  const auto& t = tensors_[id];
  return buf.subspan(t.offset, t.size);
}

void ParamLayout::check(std::span<const Real> buf) const {
  if (buf.size() != total_) {
    throw ShapeError("parameter buffer has " + std::to_string(buf.size()) + " values, layout expects " +
                     std::to_string(total_));
  }
}

std::uint64_t hash_params(const ParamLayout& layout, std::span<const Real> buf) {
  layout.check(buf);
  return fnv1a(buf.data(), buf.size_bytes());
}

std::uint64_t hash_group(const ParamLayout& layout, std::span<const Real> buf, ParamGroup group) {
  layout.check(buf);
  std::uint64_t h = 1469598103934665603ull;
  for (int i = 0; i < static_cast<int>(layout.tensors().size()); ++i) {
    if (layout.info(i).group != group) continue;
    auto s = layout.slice(buf, i);
    h = fnv1a(s.data(), s.size_bytes(), h);
  }
  return h;
}

}  // namespace mmdino
