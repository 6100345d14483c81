#include "mmdino/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace mmdino {

void ModalityConfig::validate() const {
  if (names.empty()) throw ConfigError("modality list is empty");
  std::set<std::string> seen;
  for (const auto& n : names) {
    if (n.empty()) throw ConfigError("empty modality identifier");
    if (!seen.insert(n).second) throw ConfigError("duplicate modality identifier: " + n);
  }
}

int ModalityConfig::index_of(std::string_view name) const {
  for (int i = 0; i < size(); ++i)
    if (names[i] == name) return i;
  throw ConfigError("unknown modality identifier: " + std::string(name));
}

PatchGrid PatchGrid::for_image(int height, int width, int patch_size) {
  if (patch_size < 1) throw ShapeError("patch size must be positive");
  if (height < patch_size || width < patch_size || height % patch_size || width % patch_size) {
    throw ShapeError("image " + std::to_string(height) + "x" + std::to_string(width) +
                     " is not divisible into " + std::to_string(patch_size) + "-pixel patches");
  }
  return {patch_size, height / patch_size, width / patch_size};
}

PositionMode parse_position_mode(std::string_view s) {
  if (s == "global_concat") return PositionMode::global_concat;
  if (s == "per_modality") return PositionMode::per_modality;
  throw ConfigError("unknown position mode: " + std::string(s));
}

std::string to_string(PositionMode m) { return m == PositionMode::global_concat ? "global_concat" : "per_modality"; }

void TokenizerMode::validate(const ModalityConfig& modalities) const {
  if (!channel_stack) return;
  if (stack_modalities.size() != 3) throw ConfigError("channel_stack requires exactly 3 modalities");
  std::set<int> seen;
  for (int m : stack_modalities) {
    if (m < 0 || m >= modalities.size()) throw ConfigError("channel_stack modality index out of range");
    if (!seen.insert(m).second) throw ConfigError("channel_stack modalities must be distinct");
  }
  if (use_modality_embedding) throw ConfigError("channel_stack disables modality embeddings");
}

Mat patchify(const Image& image, const PatchGrid& grid) {
  const PatchGrid g = PatchGrid::for_image(image.rows, image.cols, grid.patch_size);
  if (g.rows != grid.rows || g.cols != grid.cols) throw ShapeError("patchify: image does not match the patch grid");
  const int ps = grid.patch_size;
  Mat out(grid.cells(), ps * ps);
  for (int r = 0; r < grid.rows; ++r)
    for (int c = 0; c < grid.cols; ++c) {
      Real* dst = out.row(r * grid.cols + c).data();
      for (int y = 0; y < ps; ++y)
        for (int x = 0; x < ps; ++x) dst[y * ps + x] = image.at(r * ps + y, c * ps + x);
    }
  return out;
}

Mat positional_interpolation_matrix(int base_grid, const PatchGrid& target, InterpolationKernel kernel) {
  if (base_grid < 1) throw ShapeError("positional base grid must be non-degenerate");
  const Eigen::MatrixXd wr = resample_weights(base_grid, 0, base_grid, target.rows, kernel);
  const Eigen::MatrixXd wc = resample_weights(base_grid, 0, base_grid, target.cols, kernel);
  Mat w(target.cells(), base_grid * base_grid);
  for (int r = 0; r < target.rows; ++r)
    for (int c = 0; c < target.cols; ++c)
      for (int i = 0; i < base_grid; ++i)
        for (int j = 0; j < base_grid; ++j) w(r * target.cols + c, i * base_grid + j) = static_cast<Real>(wr(r, i) * wc(c, j));
  return w;
}

Mat interpolate_positional(const Mat& base, int base_grid, const PatchGrid& target, InterpolationKernel kernel) {
  if (base.rows() != static_cast<Eigen::Index>(base_grid) * base_grid) {
    throw ShapeError("positional grid has " + std::to_string(base.rows()) + " cells, expected a square of side " +
                     std::to_string(base_grid));
  }
  if (target.rows == base_grid && target.cols == base_grid) return base;
  return positional_interpolation_matrix(base_grid, target, kernel) * base;
}

Tokenizer::Tokenizer(ModalityConfig modalities, TokenizerMode mode, int patch_size, int base_grid, int embed_dim,
                     InterpolationKernel kernel)
    : modalities_(std::move(modalities)),
      mode_(std::move(mode)),
      patch_size_(patch_size),
      base_grid_(base_grid),
      embed_dim_(embed_dim),
      kernel_(kernel) {
  modalities_.validate();
  mode_.validate(modalities_);
  if (patch_size_ < 1 || base_grid_ < 1 || embed_dim_ < 1) throw ConfigError("tokenizer dimensions must be positive");
}

int Tokenizer::positional_blocks() const {
  return (!mode_.channel_stack && mode_.pos_mode == PositionMode::global_concat) ? modalities_.size() : 1;
}

void Tokenizer::declare(ParamLayout& layout) {
  const int d = embed_dim_;
  id_patch_w_ = layout.add("embed.patch.weight", {d, channels() * patch_size_ * patch_size_}, ParamGroup::embedding, true);
  id_patch_b_ = layout.add("embed.patch.bias", {d}, ParamGroup::embedding, false);
  id_pos_ = layout.add("embed.pos", {positional_blocks() * base_grid_ * base_grid_, d}, ParamGroup::embedding, false);
  if (mode_.use_modality_embedding)
    id_modality_ = layout.add("embed.modality", {modalities_.size(), d}, ParamGroup::embedding, false);
  id_cls_ = layout.add("embed.cls", {d}, ParamGroup::embedding, false);
  id_mask_ = layout.add("embed.mask", {d}, ParamGroup::embedding, false);
}

EmbeddingTables Tokenizer::tables(const ParamLayout& layout, std::span<const Real> p) const {
  static const Mat kEmpty(0, 0);
  return EmbeddingTables{
      layout.mat(p, id_patch_w_),
      layout.vec(p, id_patch_b_),
      layout.mat(p, id_pos_),
      base_grid_,
      id_modality_ >= 0 ? Eigen::Ref<const Mat>(layout.mat(p, id_modality_)) : Eigen::Ref<const Mat>(kEmpty),
      layout.vec(p, id_cls_),
      layout.vec(p, id_mask_),
  };
}

std::vector<TokenCoord> Tokenizer::coords_for(const std::vector<int>& present, const PatchGrid& grid) const {
  std::vector<TokenCoord> coords;
  if (mode_.channel_stack) {
    for (int r = 0; r < grid.rows; ++r)
      for (int c = 0; c < grid.cols; ++c) coords.push_back({kChannelStack, r, c});
    return coords;
  }
  coords.reserve(present.size() * grid.cells());
  for (int m : present)
    for (int r = 0; r < grid.rows; ++r)
      for (int c = 0; c < grid.cols; ++c) coords.push_back({m, r, c});
  return coords;
}

TokenizedCrop Tokenizer::tokenize(const ModalityStack& crops, const EmbeddingTables& t) const {
  if (static_cast<int>(crops.size()) != modalities_.size())
    throw ShapeError("expected one crop slot per configured modality");
  const int d = embed_dim_;
  const int ps = patch_size_;
  if (t.patch_weight.rows() != d || t.patch_weight.cols() != channels() * ps * ps)
    throw ShapeError("patch projection shape does not match the tokenizer");
  if (t.positional.rows() != positional_blocks() * base_grid_ * base_grid_ || t.positional.cols() != d)
    throw ShapeError("positional table shape does not match the tokenizer");
  if (mode_.use_modality_embedding && !mode_.channel_stack && t.modality.rows() != modalities_.size())
    throw ShapeError("modality table must hold one vector per modality");

  TokenizedCrop out;
  const Image* first = nullptr;
  if (mode_.channel_stack) {
    for (int m : mode_.stack_modalities) {
      if (!crops[m]) throw PreconditionError("channel_stack needs modality " + modalities_.names[m]);
      out.present_modalities.push_back(m);
    }
  } else {
    for (int m = 0; m < modalities_.size(); ++m)
      if (crops[m]) out.present_modalities.push_back(m);
    if (out.present_modalities.empty()) throw PreconditionError("tokenize: no modality present");
  }
  for (int m : out.present_modalities) {
    if (!first) first = &*crops[m];
    if (!crops[m]->same_shape(*first)) throw ShapeError("inconsistent crop sizes across modalities");
  }
  out.grid = PatchGrid::for_image(first->rows, first->cols, ps);
  out.coords = coords_for(out.present_modalities, out.grid);
  const int cells = out.grid.cells();
  const int T = out.tokens();

  if (mode_.channel_stack) {
    out.patches.resize(cells, channels() * ps * ps);
    for (int ch = 0; ch < channels(); ++ch)
      out.patches.middleCols(ch * ps * ps, ps * ps) = patchify(*crops[mode_.stack_modalities[ch]], out.grid);
  } else {
    out.patches.resize(T, ps * ps);
    for (size_t b = 0; b < out.present_modalities.size(); ++b)
      out.patches.middleRows(b * cells, cells) = patchify(*crops[out.present_modalities[b]], out.grid);
  }

  const Mat interp = positional_interpolation_matrix(base_grid_, out.grid, kernel_);
  const bool identity = out.grid.rows == base_grid_ && out.grid.cols == base_grid_;
  const int g2 = base_grid_ * base_grid_;
  auto block_positions = [&](int block) -> Mat {
    if (identity) return t.positional.middleRows(block * g2, g2);
    return interp * t.positional.middleRows(block * g2, g2);
  };

  out.context = Mat::Zero(T + 1, d);
  if (positional_blocks() == 1) {
    const Mat pos = block_positions(0);
    for (int i = 0; i < T; ++i) out.context.row(i + 1) = pos.row(i % cells);
  } else {
    for (size_t b = 0; b < out.present_modalities.size(); ++b) {
      const Mat pos = block_positions(out.present_modalities[b]);
      out.context.middleRows(1 + b * cells, cells) = pos;
    }
  }
  if (mode_.use_modality_embedding && !mode_.channel_stack) {
    for (int i = 0; i < T; ++i) out.context.row(i + 1) += t.modality.row(out.coords[i].modality);
  }

  out.embeddings.resize(T + 1, d);
  out.embeddings.row(0) = t.cls_token.transpose();
  out.embeddings.bottomRows(T).noalias() = out.patches * t.patch_weight.transpose();
  out.embeddings.bottomRows(T).rowwise() += t.patch_bias.transpose();
  out.embeddings.bottomRows(T) += out.context.bottomRows(T);
  return out;
}

void Tokenizer::backward(const TokenizedCrop& crop, std::span<const std::uint8_t> flags, const Mat& dE,
                         const ParamLayout& layout, std::span<Real> g) const {
  const int T = crop.tokens();
  if (dE.rows() != T + 1 || dE.cols() != embed_dim_) throw ShapeError("tokenizer backward: gradient shape mismatch");
  if (!flags.empty() && static_cast<int>(flags.size()) != T) throw ShapeError("tokenizer backward: mask length mismatch");

  layout.vec(g, id_cls_) += dE.row(0).transpose();

  Mat d_patch = dE.bottomRows(T);
  if (!flags.empty()) {
    auto d_mask = layout.vec(g, id_mask_);
    for (int i = 0; i < T; ++i)
      if (flags[i]) {
        d_mask += d_patch.row(i).transpose();
        d_patch.row(i).setZero();
      }
  }
  layout.mat(g, id_patch_w_).noalias() += d_patch.transpose() * crop.patches;
  layout.vec(g, id_patch_b_) += d_patch.colwise().sum().transpose();

  if (mode_.use_modality_embedding && !mode_.channel_stack) {
    auto d_mod = layout.mat(g, id_modality_);
    for (int i = 0; i < T; ++i) d_mod.row(crop.coords[i].modality) += dE.row(i + 1);
  }

  const int cells = crop.grid.cells();
  const int g2 = base_grid_ * base_grid_;
  const bool identity = crop.grid.rows == base_grid_ && crop.grid.cols == base_grid_;
  const Mat interp = identity ? Mat() : positional_interpolation_matrix(base_grid_, crop.grid, kernel_);
  auto d_pos = layout.mat(g, id_pos_);
  const int blocks = positional_blocks();
  std::vector<Mat> d_target(blocks, Mat::Zero(cells, embed_dim_));
  for (int i = 0; i < T; ++i) {
    const auto& c = crop.coords[i];
    const int block = blocks == 1 ? 0 : c.modality;
    d_target[block].row(c.row * crop.grid.cols + c.col) += dE.row(i + 1);
  }
  for (int b = 0; b < blocks; ++b) {
    if (identity)
      d_pos.middleRows(b * g2, g2) += d_target[b];
    else
      d_pos.middleRows(b * g2, g2).noalias() += interp.transpose() * d_target[b];
  }
}

TokenizedCrop compose_sequence(const std::vector<std::pair<std::string, Image>>& crops, const EmbeddingTables& tables,
                               const ModalityConfig& modalities, const TokenizerMode& mode, InterpolationKernel kernel) {
  const int channels = mode.channel_stack ? static_cast<int>(mode.stack_modalities.size()) : 1;
  const int per_channel = static_cast<int>(tables.patch_weight.cols()) / channels;
  const int ps = static_cast<int>(std::lround(std::sqrt(static_cast<double>(per_channel))));
  if (ps * ps * channels != tables.patch_weight.cols()) throw ShapeError("patch projection width is not a square patch");
  Tokenizer tok(modalities, mode, ps, tables.base_grid, static_cast<int>(tables.patch_weight.rows()), kernel);
  ModalityStack stack(modalities.size());
  for (const auto& [name, image] : crops) {
    const int m = modalities.index_of(name);
    if (stack[m]) throw ConfigError("modality given twice: " + name);
    stack[m] = image;
  }
  return tok.tokenize(stack, tables);
}

}  // namespace mmdino
