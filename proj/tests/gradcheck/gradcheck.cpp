// Central finite differences against the analytic gradients, in double
// precision. Prints one line per check and exits non-zero on any failure.

#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mmdino/model.hpp"
#include "mmdino/objectives.hpp"

using namespace mmdino;

static_assert(sizeof(Real) == 8, "gradcheck must link the double-precision library");

namespace {

constexpr double kStep = 1e-4;
constexpr double kTol = 1e-3;
int failures = 0;

// ||a - f|| / max(||a||, ||f||), with a floor so an all-zero gradient
// compares absolutely.
double rel_error(const std::vector<double>& a, const std::vector<double>& f) {
  double d = 0, na = 0, nf = 0;
  for (size_t i = 0; i < a.size(); ++i) d += (a[i] - f[i]) * (a[i] - f[i]), na += a[i] * a[i], nf += f[i] * f[i];
  return std::sqrt(d) / std::max({std::sqrt(na), std::sqrt(nf), 1e-8});
}

void report(const std::string& name, double err, size_t n) {
  const bool ok = err <= kTol;
  failures += !ok;
  std::printf("%-48s %6zu coords  rel err %.3e  %s\n", name.c_str(), n, err, ok ? "ok" : "FAIL");
}

// Finite differences of f over every coordinate of x.
std::vector<double> numeric(std::span<double> x, const std::function<double()>& f) {
  std::vector<double> g(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + kStep;
    const double up = f();
    x[i] = keep - kStep;
    const double dn = f();
    x[i] = keep;
    g[i] = (up - dn) / (2 * kStep);
  }
  return g;
}

Vec random_simplex(std::mt19937_64& rng, int k) {
  std::gamma_distribution<double> g(1.0, 1.0);
  Vec v(k);
  for (int i = 0; i < k; ++i) v(i) = g(rng) + 0.05;
  return v / v.sum();
}

void check_image_loss(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0, 1);
  const int crops = 4, K = 5;
  const double T = 0.1;
  std::vector<double> flat(crops * K);
  for (auto& v : flat) v = n(rng);
  const std::vector<ImageLevelTarget> targets = {ImageLevelTarget::pseudo(random_simplex(rng, K), 0),
                                                 ImageLevelTarget::pseudo(random_simplex(rng, K), 1),
                                                 ImageLevelTarget::real(3, K, 0.1)};
  auto logits = [&] {
    std::vector<Vec> z(crops, Vec(K));
    for (int c = 0; c < crops; ++c)
      for (int k = 0; k < K; ++k) z[c](k) = flat[c * K + k];
    return z;
  };
  const LossWithGrad lg = image_level_loss_grad(logits(), T, targets);
  std::vector<double> analytic;
  for (const auto& d : lg.d_logits)
    for (int k = 0; k < K; ++k) analytic.push_back(d(k));
  const auto fd = numeric(flat, [&] { return image_level_loss_grad(logits(), T, targets).loss; });
  report("image-level loss / student logits", rel_error(analytic, fd), flat.size());
}

void check_patch_loss(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0, 1);
  const int rows = 12, K = 3;
  const double T = 0.1;
  Mat teacher(rows, K);
  for (int i = 0; i < rows; ++i) teacher.row(i) = random_simplex(rng, K).transpose();
  MaskPlan plan = MaskPlan::empty(rows);
  for (int i = 0; i < rows; i += 3) plan.flags[i] = plan.flags[i + 1] = 1;
  plan.kind = MaskKind::random_patch;
  std::vector<double> flat(rows * K);
  for (auto& v : flat) v = n(rng);
  auto logits = [&] { return Eigen::Map<const Mat>(flat.data(), rows, K).eval(); };
  const LossWithGrad lg = patch_level_loss_grad(logits(), T, teacher, plan);
  const std::vector<double> analytic(lg.d_patch_logits.data(), lg.d_patch_logits.data() + flat.size());
  const auto fd = numeric(flat, [&] { return patch_level_loss_grad(logits(), T, teacher, plan).loss; });
  report("patch-level loss / student logits", rel_error(analytic, fd), flat.size());
}

// Image + patch loss through the whole model (tokenizer, one encoder block,
// both heads) with respect to every parameter.
void check_model(std::mt19937_64& rng, const std::string& name, TokenizerMode mode, int crop_size, bool heads_only) {
  ModelConfig cfg;
  cfg.tokenizer = mode;
  cfg.encoder.embed_dim = 8;
  cfg.encoder.depth = 1;
  cfg.encoder.num_heads = 2;
  cfg.encoder.patch_size = 2;
  cfg.base_grid = 2;
  cfg.head.hidden = {8};
  const Model model(cfg);
  ParamVector params = model.init_params(rng());
  // perturb so no parameter sits at its (often zero or one) initial value
  std::normal_distribution<double> n(0, 0.2);
  for (auto& p : params) p += n(rng);

  ModalityStack crops(4);
  std::normal_distribution<double> px(0, 1);
  for (auto& c : crops) {
    Image img(crop_size, crop_size);
    for (auto& v : img.data) v = static_cast<float>(px(rng));
    c = img;
  }
  const double T = 0.1;
  const auto probe = model.forward(crops, nullptr, params, true, false);
  const int tokens = static_cast<int>(probe.patch_logits.rows());
  MaskPlan plan = MaskPlan::empty(tokens);
  for (int i = 0; i < tokens; i += 3) plan.flags[i] = 1;
  plan.kind = MaskKind::random_patch;
  Mat teacher(tokens, cfg.head.prototypes);
  for (int i = 0; i < tokens; ++i) teacher.row(i) = random_simplex(rng, cfg.head.prototypes).transpose();
  const std::vector<ImageLevelTarget> target = {ImageLevelTarget::pseudo(random_simplex(rng, cfg.head.prototypes), -1)};

  auto loss = [&] {
    const auto pass = model.forward(crops, &plan, params, true, false);
    return image_level_loss_grad({pass.image_logits}, T, target).loss +
           patch_level_loss_grad(pass.patch_logits, T, teacher, plan).loss;
  };
  const auto pass = model.forward(crops, &plan, params, true, true);
  const auto img = image_level_loss_grad({pass.image_logits}, T, target);
  const auto pat = patch_level_loss_grad(pass.patch_logits, T, teacher, plan);
  ParamVector grads(params.size(), 0);
  model.backward(pass, img.d_logits[0], pat.d_patch_logits, params, grads, heads_only);

  const auto& L = model.layout();
  const auto fd = numeric(params, loss);
  std::vector<double> all_a, all_f;
  double worst = 0;
  std::string worst_name;
  for (const auto& t : L.tensors()) {
    std::vector<double> a, f;
    for (size_t i = t.offset; i < t.offset + t.size; ++i) {
      a.push_back(grads[i]);
      f.push_back(heads_only && t.group != ParamGroup::head ? 0.0 : fd[i]);
    }
    const double e = rel_error(a, f);
    if (e > worst) worst = e, worst_name = t.name;
    all_a.insert(all_a.end(), a.begin(), a.end());
    all_f.insert(all_f.end(), f.begin(), f.end());
  }
  report(name, rel_error(all_a, all_f), params.size());
  std::printf("    worst tensor %s: %.3e\n", worst_name.c_str(), worst);
  failures += worst > kTol;
}

}  // namespace

int main() {
  std::setvbuf(stdout, nullptr, _IOLBF, 0);
  std::mt19937_64 rng(20240611);
  check_image_loss(rng);
  check_patch_loss(rng);

  TokenizerMode per;  // per-modality positions + modality embedding
  check_model(rng, "model, per-modality, 4x4 crops", per, 4, false);
  check_model(rng, "model, per-modality, 6x6 crops (interpolated pos)", per, 6, false);
  TokenizerMode concat;
  concat.pos_mode = PositionMode::global_concat;
  concat.use_modality_embedding = false;
  check_model(rng, "model, concatenated positions", concat, 4, false);
  TokenizerMode stack;
  stack.channel_stack = true;
  stack.use_modality_embedding = false;
  check_model(rng, "model, channel stack", stack, 4, false);
  check_model(rng, "model, heads only", per, 4, true);

  std::printf("%s\n", failures ? "gradient check FAILED" : "gradient check passed");
  return failures ? 1 : 0;
}
