#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mmdino/masking.hpp"
#include "mmdino/params.hpp"
#include "mmdino/tokenizer.hpp"

namespace mmdino {

struct EncoderConfig {
  int embed_dim = 64;
  int depth = 4;
  int num_heads = 4;
  double mlp_ratio = 4.0;
  int patch_size = 14;

  // ViT-B/14 shape. Weights are not loaded; see README for the import hook.
  static EncoderConfig vit_b14() { return {768, 12, 12, 4.0, 14}; }

  void validate() const;
  int mlp_hidden() const { return static_cast<int>(embed_dim * mlp_ratio); }
  int head_dim() const { return embed_dim / num_heads; }
};

struct HeadConfig {
  int prototypes = 3;
  std::vector<int> hidden{128};
  double student_temp = 0.1;
  double teacher_temp = 0.07;  // final value of the teacher temperature schedule

  void validate() const;
};

// Saved statistics of a layer norm, enough to run its backward pass.
struct NormCache {
  Mat xhat;
  Vec rstd;
};

// Pre-norm transformer encoder. Returns final-norm features, one row per
// input token (row 0 = CLS).
class Encoder {
 public:
  struct BlockCache {
    NormCache norm1;
    Mat a;                   // norm1 output
    Mat qkv;                 // [q | k | v], heads contiguous inside each
    std::vector<Mat> probs;  // attention weights per head
    Mat attn;                // concatenated head outputs, before projection
    NormCache norm2;
    Mat b;      // norm2 output
    Mat h_pre;  // fc1 output, before GELU
    Mat h_act;
  };
  struct Cache {
    std::vector<BlockCache> blocks;
    NormCache final_norm;
  };

  explicit Encoder(EncoderConfig cfg);
  void declare(ParamLayout& layout);

  Mat forward(const Mat& tokens, const ParamLayout& layout, std::span<const Real> params, Cache* cache) const;
  Mat backward(const Cache& cache, const Mat& d_features, const ParamLayout& layout, std::span<const Real> params,
               std::span<Real> grads) const;

  const EncoderConfig& config() const { return cfg_; }

 private:
  struct BlockIds {
    int n1w, n1b, qkv_w, qkv_b, proj_w, proj_b, n2w, n2b, fc1_w, fc1_b, fc2_w, fc2_b;
  };
  EncoderConfig cfg_;
  std::vector<BlockIds> blocks_;
  int norm_w_ = -1, norm_b_ = -1;
};

// Non-linear projection to K prototype logits.
class ProjectionHead {
 public:
  struct Cache {
    std::vector<Mat> inputs;  // input to each linear layer
    std::vector<Mat> pre;     // pre-activation of each hidden layer
  };

  ProjectionHead(std::string prefix, int in_dim, std::vector<int> hidden, int out_dim);
  void declare(ParamLayout& layout);

  Mat forward(const Mat& x, const ParamLayout& layout, std::span<const Real> params, Cache* cache) const;
  Mat backward(const Cache& cache, const Mat& d_logits, const ParamLayout& layout, std::span<const Real> params,
               std::span<Real> grads) const;

 private:
  std::string prefix_;
  std::vector<int> dims_;
  std::vector<std::pair<int, int>> ids_;
};

struct ModelConfig {
  ModalityConfig modalities;
  TokenizerMode tokenizer;
  EncoderConfig encoder;
  HeadConfig head;
  int base_grid = 7;  // positional grid side; 98-pixel global crops / 14-pixel patches
  InterpolationKernel kernel = InterpolationKernel::bicubic;
};

struct EncodedCrop {
  Vec cls;
  Mat patches;  // one row per non-CLS token
};

// Student/teacher network definition. Holds no parameter values: every call
// takes a flat parameter buffer laid out by layout().
class Model {
 public:
  struct Pass;

  explicit Model(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }
  const ParamLayout& layout() const { return layout_; }
  const Tokenizer& tokenizer() const { return tokenizer_; }
  const Encoder& encoder() const { return encoder_; }
  int prototypes() const { return cfg_.head.prototypes; }

  ParamVector init_params(std::uint64_t seed) const;
  EmbeddingTables tables(std::span<const Real> params) const { return tokenizer_.tables(layout_, params); }

  // Full forward of one crop. `plan` masks the student input; pass nullptr
  // for teacher/eval passes. Patch logits are computed when `patch_logits`
  // is set. Caches are kept when `for_backward` is set.
  Pass forward(const ModalityStack& crops, const MaskPlan* plan, std::span<const Real> params, bool patch_logits,
               bool for_backward) const;
  Pass forward_tokens(TokenizedCrop tokens, const MaskPlan* plan, std::span<const Real> params, bool patch_logits,
                      bool for_backward) const;

  // Accumulates parameter gradients given d(loss)/d(logits). `d_patch_logits`
  // may be empty when no patch term touched this crop. With `heads_only`
  // the pass stops at the head inputs (encoder and tables get no gradient).
  void backward(const Pass& pass, const Vec& d_image_logits, const Mat& d_patch_logits, std::span<const Real> params,
                std::span<Real> grads, bool heads_only = false) const;

  EncodedCrop encode(const TokenizedCrop& crop, std::span<const Real> params) const;
  Vec image_logits(const Vec& cls_feature, std::span<const Real> params) const;
  Mat patch_logits(const Mat& patch_features, std::span<const Real> params) const;

 private:
  ModelConfig cfg_;
  ParamLayout layout_;
  Tokenizer tokenizer_;
  Encoder encoder_;
  ProjectionHead image_head_;
  ProjectionHead patch_head_;
};

struct Model::Pass {
  TokenizedCrop tokens;                // after masking
  std::vector<std::uint8_t> flags;     // empty when unmasked
  Encoder::Cache encoder_cache;
  ProjectionHead::Cache image_cache;
  ProjectionHead::Cache patch_cache;
  Mat features;                        // final-norm features, row 0 = CLS
  Vec image_logits;
  Mat patch_logits;                    // empty unless requested
};

// Probability vector on the K-simplex (p_t or p_s).
struct PrototypeScores {
  Vec probs;
};

// softmax((logits - center) / temperature); center may be null (student side).
PrototypeScores prototype_scores(const Vec& logits, double temperature, const Vec* center = nullptr);
Mat prototype_scores_rows(const Mat& logits, double temperature);

// Image head: projection of the CLS feature, then tempered softmax.
PrototypeScores image_head(const Model& model, const Vec& cls_feature, std::span<const Real> params, double temperature,
                           const Vec* center = nullptr);
// Patch head applied row by row; separate parameters from the image head.
Mat patch_head(const Model& model, const Mat& patch_features, std::span<const Real> params, double temperature);

struct ModelState {
  ParamVector student;
  ParamVector teacher;
  Vec center;
  double ema_momentum = 0.992;

  static ModelState initialize(const Model& model, std::uint64_t seed);
};

// teacher <- m * teacher + (1 - m) * student, elementwise.
void ema_update(ModelState& state, double momentum);
// center <- c * center + (1 - c) * mean over rows of teacher_logits.
Vec center_update(const Vec& center, const Mat& teacher_logits, double momentum);

}  // namespace mmdino
