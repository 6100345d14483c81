#include "mmdino/model.hpp"

#include <cmath>
#include <random>

#include "nn.hpp"

namespace mmdino {

void EncoderConfig::validate() const {
  if (embed_dim < 1 || num_heads < 1 || embed_dim % num_heads)
    throw ConfigError("embed_dim must be a positive multiple of num_heads");
  if (depth < 1) throw ConfigError("encoder depth must be at least 1");
  if (!(mlp_ratio > 0)) throw ConfigError("mlp_ratio must be positive");
  if (patch_size < 1) throw ConfigError("patch_size must be positive");
}

void HeadConfig::validate() const {
  if (prototypes < 2) throw ConfigError("head needs at least 2 prototypes");
  for (int h : hidden)
    if (h < 1) throw ConfigError("head hidden sizes must be positive");
  if (!(student_temp > 0) || !(teacher_temp > 0)) throw ConfigError("temperatures must be positive");
}

// ---------------------------------------------------------------- encoder

Encoder::Encoder(EncoderConfig cfg) : cfg_(cfg) { cfg_.validate(); }

void Encoder::declare(ParamLayout& layout) {
  const int d = cfg_.embed_dim;
  const int h = cfg_.mlp_hidden();
  const auto g = ParamGroup::encoder;
  blocks_.clear();
  for (int l = 0; l < cfg_.depth; ++l) {
    const std::string p = "blocks." + std::to_string(l) + ".";
    BlockIds b{};
    b.n1w = layout.add(p + "norm1.weight", {d}, g, false);
    b.n1b = layout.add(p + "norm1.bias", {d}, g, false);
    b.qkv_w = layout.add(p + "attn.qkv.weight", {3 * d, d}, g, true);
    b.qkv_b = layout.add(p + "attn.qkv.bias", {3 * d}, g, false);
    b.proj_w = layout.add(p + "attn.proj.weight", {d, d}, g, true);
    b.proj_b = layout.add(p + "attn.proj.bias", {d}, g, false);
    b.n2w = layout.add(p + "norm2.weight", {d}, g, false);
    b.n2b = layout.add(p + "norm2.bias", {d}, g, false);
    b.fc1_w = layout.add(p + "mlp.fc1.weight", {h, d}, g, true);
    b.fc1_b = layout.add(p + "mlp.fc1.bias", {h}, g, false);
    b.fc2_w = layout.add(p + "mlp.fc2.weight", {d, h}, g, true);
    b.fc2_b = layout.add(p + "mlp.fc2.bias", {d}, g, false);
    blocks_.push_back(b);
  }
  norm_w_ = layout.add("norm.weight", {d}, g, false);
  norm_b_ = layout.add("norm.bias", {d}, g, false);
}

Mat Encoder::forward(const Mat& tokens, const ParamLayout& L, std::span<const Real> p, Cache* cache) const {
  const int d = cfg_.embed_dim;
  const int heads = cfg_.num_heads;
  const int dh = cfg_.head_dim();
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(dh));
  if (tokens.cols() != d) throw ShapeError("encoder input width does not match embed_dim");
  if (tokens.rows() < 2) throw ShapeError("encoder needs CLS plus at least one token");

  Mat x = tokens;
  BlockCache scratch;
  if (cache) cache->blocks.assign(blocks_.size(), BlockCache{});
  for (size_t l = 0; l < blocks_.size(); ++l) {
    const BlockIds& id = blocks_[l];
    BlockCache& c = cache ? cache->blocks[l] : scratch;
    c.a = nn::layer_norm(x, L.vec(p, id.n1w), L.vec(p, id.n1b), &c.norm1);
    c.qkv = nn::linear(c.a, L.mat(p, id.qkv_w), L.vec(p, id.qkv_b));
    c.attn.resize(x.rows(), d);
    c.probs.resize(heads);
    for (int h = 0; h < heads; ++h) {
      const auto q = c.qkv.middleCols(h * dh, dh);
      const auto k = c.qkv.middleCols(d + h * dh, dh);
      const auto v = c.qkv.middleCols(2 * d + h * dh, dh);
      Mat s(x.rows(), x.rows());
      s.noalias() = (q * k.transpose()) * scale;
      nn::softmax_rows(s);
      c.attn.middleCols(h * dh, dh).noalias() = s * v;
      c.probs[h] = std::move(s);
    }
    x += nn::linear(c.attn, L.mat(p, id.proj_w), L.vec(p, id.proj_b));
    c.b = nn::layer_norm(x, L.vec(p, id.n2w), L.vec(p, id.n2b), &c.norm2);
    c.h_pre = nn::linear(c.b, L.mat(p, id.fc1_w), L.vec(p, id.fc1_b));
    c.h_act = nn::gelu(c.h_pre);
    x += nn::linear(c.h_act, L.mat(p, id.fc2_w), L.vec(p, id.fc2_b));
  }
  return nn::layer_norm(x, L.vec(p, norm_w_), L.vec(p, norm_b_), cache ? &cache->final_norm : nullptr);
}

Mat Encoder::backward(const Cache& cache, const Mat& d_features, const ParamLayout& L, std::span<const Real> p,
                      std::span<Real> g) const {
  const int d = cfg_.embed_dim;
  const int dh = cfg_.head_dim();
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(dh));
  if (cache.blocks.size() != blocks_.size()) throw ShapeError("encoder backward without a forward cache");

  Mat dx = nn::layer_norm_backward(d_features, cache.final_norm, L.vec(p, norm_w_), L.vec(g, norm_w_), L.vec(g, norm_b_));
  for (size_t li = blocks_.size(); li-- > 0;) {
    const BlockIds& id = blocks_[li];
    const BlockCache& c = cache.blocks[li];

    Mat dh_act = nn::linear_backward(dx, c.h_act, L.mat(p, id.fc2_w), L.mat(g, id.fc2_w), L.vec(g, id.fc2_b));
    Mat d_pre = nn::gelu_backward(dh_act, c.h_pre);
    Mat db = nn::linear_backward(d_pre, c.b, L.mat(p, id.fc1_w), L.mat(g, id.fc1_w), L.vec(g, id.fc1_b));
    dx += nn::layer_norm_backward(db, c.norm2, L.vec(p, id.n2w), L.vec(g, id.n2w), L.vec(g, id.n2b));

    Mat d_attn = nn::linear_backward(dx, c.attn, L.mat(p, id.proj_w), L.mat(g, id.proj_w), L.vec(g, id.proj_b));
    Mat d_qkv(dx.rows(), 3 * d);
    for (int h = 0; h < cfg_.num_heads; ++h) {
      const Mat& prob = c.probs[h];
      const auto q = c.qkv.middleCols(h * dh, dh);
      const auto k = c.qkv.middleCols(d + h * dh, dh);
      const auto v = c.qkv.middleCols(2 * d + h * dh, dh);
      const auto d_out = d_attn.middleCols(h * dh, dh);
      d_qkv.middleCols(2 * d + h * dh, dh).noalias() = prob.transpose() * d_out;
      Mat d_prob(prob.rows(), prob.cols());
      d_prob.noalias() = d_out * v.transpose();
      const Vec row_dot = (d_prob.array() * prob.array()).rowwise().sum();
      Mat d_score = (prob.array() * (d_prob.colwise() - row_dot).array()).matrix() * scale;
      d_qkv.middleCols(h * dh, dh).noalias() = d_score * k;
      d_qkv.middleCols(d + h * dh, dh).noalias() = d_score.transpose() * q;
    }
    Mat da = nn::linear_backward(d_qkv, c.a, L.mat(p, id.qkv_w), L.mat(g, id.qkv_w), L.vec(g, id.qkv_b));
    dx += nn::layer_norm_backward(da, c.norm1, L.vec(p, id.n1w), L.vec(g, id.n1w), L.vec(g, id.n1b));
  }
  return dx;
}

// ---------------------------------------------------------------- heads

ProjectionHead::ProjectionHead(std::string prefix, int in_dim, std::vector<int> hidden, int out_dim)
    : prefix_(std::move(prefix)) {
  dims_.push_back(in_dim);
  for (int h : hidden) dims_.push_back(h);
  dims_.push_back(out_dim);
}

void ProjectionHead::declare(ParamLayout& layout) {
  ids_.clear();
  for (size_t i = 0; i + 1 < dims_.size(); ++i) {
    const std::string p = prefix_ + ".fc" + std::to_string(i);
    int w = layout.add(p + ".weight", {dims_[i + 1], dims_[i]}, ParamGroup::head, true);
    int b = layout.add(p + ".bias", {dims_[i + 1]}, ParamGroup::head, false);
    ids_.emplace_back(w, b);
  }
}

Mat ProjectionHead::forward(const Mat& x, const ParamLayout& L, std::span<const Real> p, Cache* cache) const {
  Mat h = x;
  if (cache) {
    cache->inputs.clear();
    cache->pre.clear();
  }
  for (size_t i = 0; i < ids_.size(); ++i) {
    if (cache) cache->inputs.push_back(h);
    Mat z = nn::linear(h, L.mat(p, ids_[i].first), L.vec(p, ids_[i].second));
    if (i + 1 < ids_.size()) {
      h = nn::gelu(z);
      if (cache) cache->pre.push_back(std::move(z));
    } else {
      h = std::move(z);
    }
  }
  return h;
}

Mat ProjectionHead::backward(const Cache& cache, const Mat& d_logits, const ParamLayout& L, std::span<const Real> p,
                             std::span<Real> g) const {
  Mat d = d_logits;
  for (size_t i = ids_.size(); i-- > 0;) {
    if (i + 1 < ids_.size()) d = nn::gelu_backward(d, cache.pre[i]);
    d = nn::linear_backward(d, cache.inputs[i], L.mat(p, ids_[i].first), L.mat(g, ids_[i].first),
                            L.vec(g, ids_[i].second));
  }
  return d;
}

// ---------------------------------------------------------------- model

Model::Model(ModelConfig cfg)
    : cfg_(std::move(cfg)),
      tokenizer_(cfg_.modalities, cfg_.tokenizer, cfg_.encoder.patch_size, cfg_.base_grid, cfg_.encoder.embed_dim,
                 cfg_.kernel),
      encoder_(cfg_.encoder),
      image_head_("image_head", cfg_.encoder.embed_dim, cfg_.head.hidden, cfg_.head.prototypes),
      patch_head_("patch_head", cfg_.encoder.embed_dim, cfg_.head.hidden, cfg_.head.prototypes) {
  cfg_.head.validate();
  tokenizer_.declare(layout_);
  encoder_.declare(layout_);
  image_head_.declare(layout_);
  patch_head_.declare(layout_);
}

ParamVector Model::init_params(std::uint64_t seed) const {
  ParamVector p(layout_.total(), Real(0));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto trunc_normal = [&](double std) {
    for (;;) {
      const double z = normal(rng);
      if (std::abs(z) <= 2.0) return z * std;
    }
  };
  for (const auto& t : layout_.tensors()) {
    auto s = layout_.slice(std::span<Real>(p), layout_.find(t.name));
    const auto& n = t.name;
    const bool is_norm = n.find("norm") != std::string::npos;
    if (n == "embed.modality") {
      for (auto& v : s) v = static_cast<Real>(normal(rng));  // z_m ~ N(0, I)
    } else if (n == "embed.patch.weight") {
      const double bound = 1.0 / std::sqrt(static_cast<double>(t.cols()));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (auto& v : s) v = static_cast<Real>(u(rng));
    } else if (n == "embed.pos") {
      for (auto& v : s) v = static_cast<Real>(trunc_normal(0.02));
    } else if (n == "embed.cls") {
      for (auto& v : s) v = static_cast<Real>(normal(rng) * 1e-6);
    } else if (is_norm && n.ends_with(".weight")) {
      for (auto& v : s) v = Real(1);
    } else if (t.shape.size() == 2) {
      for (auto& v : s) v = static_cast<Real>(trunc_normal(0.02));
    }
    // biases and the mask token start at zero
  }
  return p;
}

Model::Pass Model::forward(const ModalityStack& crops, const MaskPlan* plan, std::span<const Real> params,
                           bool patch_logits, bool for_backward) const {
  return forward_tokens(tokenizer_.tokenize(crops, tables(params)), plan, params, patch_logits, for_backward);
}

Model::Pass Model::forward_tokens(TokenizedCrop tokens, const MaskPlan* plan, std::span<const Real> params,
                                  bool want_patch_logits, bool for_backward) const {
  layout_.check(params);
  Pass pass;
  if (plan && plan->kind != MaskKind::none) {
    pass.tokens = apply_plan(tokens, *plan, tables(params).mask_token);
    pass.flags = plan->flags;
  } else {
    if (plan && static_cast<int>(plan->flags.size()) != tokens.tokens()) throw ShapeError("mask plan length mismatch");
    pass.tokens = std::move(tokens);
  }
  pass.features = encoder_.forward(pass.tokens.embeddings, layout_, params, for_backward ? &pass.encoder_cache : nullptr);
  const Mat cls = pass.features.topRows(1);
  pass.image_logits = image_head_.forward(cls, layout_, params, for_backward ? &pass.image_cache : nullptr).row(0).transpose();
  if (want_patch_logits) {
    pass.patch_logits = patch_head_.forward(pass.features.bottomRows(pass.tokens.tokens()), layout_, params,
                                            for_backward ? &pass.patch_cache : nullptr);
  }
  return pass;
}

void Model::backward(const Pass& pass, const Vec& d_image_logits, const Mat& d_patch_logits,
                     std::span<const Real> params, std::span<Real> grads, bool heads_only) const {
  layout_.check(params);
  layout_.check(grads);
  const int T = pass.tokens.tokens();
  Mat d_features = Mat::Zero(T + 1, cfg_.encoder.embed_dim);
  d_features.row(0) = image_head_.backward(pass.image_cache, d_image_logits.transpose(), layout_, params, grads);
  if (d_patch_logits.size() > 0) {
    if (d_patch_logits.rows() != T || pass.patch_cache.inputs.empty())
      throw ShapeError("patch gradient without matching patch logits");
    d_features.bottomRows(T) = patch_head_.backward(pass.patch_cache, d_patch_logits, layout_, params, grads);
  }
  if (heads_only) return;
  const Mat d_tokens = encoder_.backward(pass.encoder_cache, d_features, layout_, params, grads);
  tokenizer_.backward(pass.tokens, pass.flags, d_tokens, layout_, grads);
}

EncodedCrop Model::encode(const TokenizedCrop& crop, std::span<const Real> params) const {
  const Mat f = encoder_.forward(crop.embeddings, layout_, params, nullptr);
  return {f.row(0).transpose(), f.bottomRows(f.rows() - 1)};
}

Vec Model::image_logits(const Vec& cls_feature, std::span<const Real> params) const {
  return image_head_.forward(cls_feature.transpose(), layout_, params, nullptr).row(0).transpose();
}

Mat Model::patch_logits(const Mat& patch_features, std::span<const Real> params) const {
  return patch_head_.forward(patch_features, layout_, params, nullptr);
}

// ---------------------------------------------------------------- scores, EMA, centering

PrototypeScores prototype_scores(const Vec& logits, double temperature, const Vec* center) {
  if (!(temperature > 0)) throw PreconditionError("temperature must be positive");
  Vec z = logits;
  if (center) {
    if (center->size() != logits.size()) throw ShapeError("center width mismatch");
    z -= *center;
  }
  z /= static_cast<Real>(temperature);
  z.array() -= z.maxCoeff();
  z = z.array().exp();
  z /= z.sum();
  return {z};
}

Mat prototype_scores_rows(const Mat& logits, double temperature) {
  if (!(temperature > 0)) throw PreconditionError("temperature must be positive");
  Mat s = logits / static_cast<Real>(temperature);
  nn::softmax_rows(s);
  return s;
}

PrototypeScores image_head(const Model& model, const Vec& cls_feature, std::span<const Real> params, double temperature,
                           const Vec* center) {
  return prototype_scores(model.image_logits(cls_feature, params), temperature, center);
}

Mat patch_head(const Model& model, const Mat& patch_features, std::span<const Real> params, double temperature) {
  return prototype_scores_rows(model.patch_logits(patch_features, params), temperature);
}

ModelState ModelState::initialize(const Model& model, std::uint64_t seed) {
  ModelState s;
  s.student = model.init_params(seed);
  s.teacher = s.student;
  s.center = Vec::Zero(model.prototypes());
  return s;
}

void ema_update(ModelState& state, double momentum) {
  if (!(momentum >= 0 && momentum <= 1)) throw PreconditionError("EMA momentum must lie in [0, 1]");
  if (state.student.size() != state.teacher.size()) throw ShapeError("student and teacher differ in structure");
  state.ema_momentum = momentum;
  if (momentum == 0) {
    state.teacher = state.student;
    return;
  }
  // t + (1 - m)(s - t): exact fixed point when s == t, exact no-op at m == 1.
  const Real w = static_cast<Real>(1.0 - momentum);
  Eigen::Map<Vec> t(state.teacher.data(), static_cast<Eigen::Index>(state.teacher.size()));
  Eigen::Map<const Vec> s(state.student.data(), static_cast<Eigen::Index>(state.student.size()));
  t += w * (s - t);
}

Vec center_update(const Vec& center, const Mat& teacher_logits, double momentum) {
  if (teacher_logits.cols() != center.size()) throw ShapeError("center width mismatch");
  if (teacher_logits.rows() == 0) return center;
  const Vec mean = teacher_logits.colwise().mean().transpose();
  const Real c = static_cast<Real>(momentum);
  return c * center + (Real(1) - c) * mean;
}

}  // namespace mmdino
