#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mmdino/common.hpp"
#include "mmdino/params.hpp"
#include "mmdino/resample.hpp"

namespace mmdino {

// Ordered modality identifiers. The order fixes the token layout for a run.
struct ModalityConfig {
  std::vector<std::string> names{"T1w", "T1ce", "T2w", "FLAIR"};

  void validate() const;
  int size() const { return static_cast<int>(names.size()); }
  int index_of(std::string_view name) const;  // throws ConfigError for unknown names
};

struct PatchGrid {
  int patch_size = 14;
  int rows = 7;
  int cols = 7;

  int height() const { return rows * patch_size; }
  int width() const { return cols * patch_size; }
  int cells() const { return rows * cols; }

  // Grid covering an image; throws ShapeError unless both sides divide evenly.
  static PatchGrid for_image(int height, int width, int patch_size);
  friend bool operator==(const PatchGrid&, const PatchGrid&) = default;
};

enum class PositionMode { global_concat, per_modality };

PositionMode parse_position_mode(std::string_view s);
std::string to_string(PositionMode m);

struct TokenizerMode {
  PositionMode pos_mode = PositionMode::per_modality;
  bool use_modality_embedding = true;
  // RGB-style baseline: three modalities stacked as the channels of one image.
  bool channel_stack = false;
  std::vector<int> stack_modalities{1, 2, 3};  // T1ce, T2w, FLAIR

  void validate(const ModalityConfig& modalities) const;
};

// Per-modality crops indexed by modality; nullopt marks an absent modality.
using ModalityStack = std::vector<std::optional<Image>>;

// Modality index kChannelStack marks tokens of a channel-stacked crop.
inline constexpr int kChannelStack = -1;

struct TokenCoord {
  int modality = 0;
  int row = 0;
  int col = 0;
  friend bool operator==(const TokenCoord&, const TokenCoord&) = default;
};

// One crop as an embedded token sequence. Row 0 of `embeddings` is CLS; row
// t + 1 belongs to coords[t]. `context` holds the positional (+ modality)
// component of each row and `patches` the flattened pixels behind each
// non-CLS token, so masking and backpropagation need nothing else.
struct TokenizedCrop {
  Mat embeddings;
  Mat context;
  Mat patches;
  std::vector<TokenCoord> coords;
  std::vector<int> present_modalities;
  PatchGrid grid;

  int tokens() const { return static_cast<int>(coords.size()); }
  int length() const { return tokens() + 1; }
};

// Read-only views of the learnable embedding tables.
struct EmbeddingTables {
  Eigen::Ref<const Mat> patch_weight;  // embed_dim x (channels * patch_size^2)
  Eigen::Ref<const Vec> patch_bias;    // embed_dim
  Eigen::Ref<const Mat> positional;    // (blocks * base_grid^2) x embed_dim
  int base_grid;
  Eigen::Ref<const Mat> modality;  // |M| x embed_dim, 0 rows when disabled
  Eigen::Ref<const Vec> cls_token;
  Eigen::Ref<const Vec> mask_token;
};

// Row-major sequence of flattened patches: rows*cols rows of patch_size^2
// pixels, each patch itself flattened row-major.
Mat patchify(const Image& image, const PatchGrid& grid);

// Resize a square positional grid (base_grid^2 x dim, row-major cells) to
// target.rows x target.cols, channel by channel.
Mat interpolate_positional(const Mat& base, int base_grid, const PatchGrid& target,
                           InterpolationKernel kernel = InterpolationKernel::bicubic);

// Linear operator form of interpolate_positional: (rows*cols) x base_grid^2.
Mat positional_interpolation_matrix(int base_grid, const PatchGrid& target, InterpolationKernel kernel);

class Tokenizer {
 public:
  Tokenizer(ModalityConfig modalities, TokenizerMode mode, int patch_size, int base_grid, int embed_dim,
            InterpolationKernel kernel = InterpolationKernel::bicubic);

  // Registers the embed.* tensors.
  void declare(ParamLayout& layout);
  EmbeddingTables tables(const ParamLayout& layout, std::span<const Real> params) const;

  TokenizedCrop tokenize(const ModalityStack& crops, const EmbeddingTables& tables) const;

  // Accumulates d(loss)/d(params) given d(loss)/d(embeddings) for a crop that
  // was tokenized and then masked with `flags` (empty = unmasked).
  void backward(const TokenizedCrop& crop, std::span<const std::uint8_t> flags, const Mat& d_embeddings,
                const ParamLayout& layout, std::span<Real> grads) const;

  std::vector<TokenCoord> coords_for(const std::vector<int>& present, const PatchGrid& grid) const;

  const ModalityConfig& modalities() const { return modalities_; }
  const TokenizerMode& mode() const { return mode_; }
  int patch_size() const { return patch_size_; }
  int base_grid() const { return base_grid_; }
  int embed_dim() const { return embed_dim_; }
  int channels() const { return mode_.channel_stack ? static_cast<int>(mode_.stack_modalities.size()) : 1; }
  int positional_blocks() const;

 private:
  ModalityConfig modalities_;
  TokenizerMode mode_;
  int patch_size_;
  int base_grid_;
  int embed_dim_;
  InterpolationKernel kernel_;
  int id_patch_w_ = -1, id_patch_b_ = -1, id_pos_ = -1, id_modality_ = -1, id_cls_ = -1, id_mask_ = -1;
};

// Named-crop entry point: crops keyed by modality identifier.
TokenizedCrop compose_sequence(const std::vector<std::pair<std::string, Image>>& crops,
                               const EmbeddingTables& tables, const ModalityConfig& modalities,
                               const TokenizerMode& mode, InterpolationKernel kernel = InterpolationKernel::bicubic);

}  // namespace mmdino
