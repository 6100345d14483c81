#include "mmdino/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>

#ifndef MMDINO_GIT_DESCRIBE
#define MMDINO_GIT_DESCRIBE "unknown"
#endif

namespace mmdino {

namespace fs = std::filesystem;

const char* git_describe() { return MMDINO_GIT_DESCRIBE; }

void write_provenance(const fs::path& dir, const RunConfig& cfg) {
  fs::create_directories(dir);
  std::ofstream(dir / "config.txt") << serialize_config(cfg);
  std::ofstream(dir / "provenance.txt") << "seed = " << cfg.train.seed << "\nsynth_seed = " << cfg.synth.seed
                                        << "\nfingerprint = " << config_fingerprint(cfg)
                                        << "\ngit_describe = " << git_describe() << "\n";
}

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

RunOutcome train_and_evaluate(const RunConfig& cfg, const Dataset& dataset, const fs::path& out_dir,
                              std::uint64_t missing_seed, const RunHooks& hooks) {
  const auto t0 = std::chrono::steady_clock::now();
  const Model model = build_model(cfg);
  const std::string fp = config_fingerprint(cfg);
  if (!out_dir.empty()) write_provenance(out_dir, cfg);

  TrainerState state = TrainerState::initialize(model, cfg.train.seed);
  PretrainOptions opts;
  opts.out_dir = out_dir;
  opts.config_text = serialize_config(cfg);
  opts.on_step = hooks.on_step;
  RunOutcome out;
  out.seed = cfg.train.seed;
  out.fingerprint = fp;
  out.steps = pretrain(model, cfg.train, cfg.masking, cfg.views, dataset, state, opts);

  const ProbeEvaluation full = evaluate_model(model, state.model, dataset, cfg.views, cfg.eval, fp);
  const MissingSpec missing{missing_seed, cfg.eval.missing_mode};
  const ProbeEvaluation dropped = evaluate_model(model, state.model, dataset, cfg.views, cfg.eval, fp, &missing);
  out.internal = full.internal;
  out.external = full.external;
  out.missing_internal = dropped.internal;
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (hooks.log) {
    char buf[200];
    std::snprintf(buf, sizeof(buf), "seed %llu: internal MCC %.3f, external MCC %.3f, drop-one MCC %.3f (%.0f s)",
                  static_cast<unsigned long long>(out.seed), out.internal.mcc, out.external ? out.external->mcc : 0.0,
                  out.missing_internal.mcc, out.seconds);
    hooks.log(buf);
  }
  return out;
}

std::array<RunConfig, 4> ablation_configs(const RunConfig& base) {
  std::array<RunConfig, 4> rows{base, base, base, base};
  const double full_prob = base.masking.modality_mask_prob > 0 ? base.masking.modality_mask_prob : 0.2;
  for (auto& r : rows) {
    r.model.tokenizer.channel_stack = false;
    r.model.tokenizer.use_modality_embedding = false;
    r.model.tokenizer.pos_mode = PositionMode::per_modality;
    r.masking.modality_mask_prob = 0.0;
  }
  rows[0].model.tokenizer.pos_mode = PositionMode::global_concat;
  rows[2].model.tokenizer.use_modality_embedding = true;
  rows[3].model.tokenizer.use_modality_embedding = true;
  rows[3].masking.modality_mask_prob = full_prob;
  return rows;
}

namespace {

template <class F>
double median_of(const std::vector<RunOutcome>& runs, F f) {
  std::vector<double> v;
  for (const auto& r : runs) v.push_back(f(r));
  return median(v);
}

}  // namespace

double AblationRow::median_internal_mcc() const {
  return median_of(runs, [](const RunOutcome& r) { return r.internal.mcc; });
}
double AblationRow::median_external_mcc() const {
  return median_of(runs, [](const RunOutcome& r) { return r.external ? r.external->mcc : std::nan(""); });
}
double AblationRow::median_missing_mcc() const {
  return median_of(runs, [](const RunOutcome& r) { return r.missing_internal.mcc; });
}
double AblationRow::median_degradation() const {
  return median_of(runs, [](const RunOutcome& r) { return r.internal.mcc - r.missing_internal.mcc; });
}

EvalReport AblationRow::median_report(bool external) const {
  EvalReport m;
  m.split = external ? "external" : "internal";
  m.fingerprint = fingerprint;
  auto pick = [&](const RunOutcome& r) -> const EvalReport* { return external ? (r.external ? &*r.external : nullptr) : &r.internal; };
  std::vector<const EvalReport*> reps;
  for (const auto& r : runs)
    if (const auto* p = pick(r)) reps.push_back(p);
  if (reps.empty()) return m;
  auto med = [&](auto f) {
    std::vector<double> v;
    for (const auto* p : reps) v.push_back(f(*p));
    return median(v);
  };
  m.n = reps[0]->n;
  m.mcc = med([](const EvalReport& e) { return e.mcc; });
  m.auroc = med([](const EvalReport& e) { return e.auroc; });
  for (int k = 0; k < kNumClasses; ++k) {
    m.f1[k].value = med([k](const EvalReport& e) { return e.f1[k].value; });
    m.f1[k].defined = reps[0]->f1[k].defined;
  }
  m.confusion = reps[0]->confusion;  // first seed; medians of counts need not sum to n
  return m;
}

AblationResult run_ablation(const RunConfig& base, const Dataset& dataset, const std::vector<std::uint64_t>& seeds,
                            const fs::path& out_dir, std::vector<int> rows, const RunHooks& hooks) {
  if (seeds.empty()) throw ConfigError("ablation needs at least one seed");
  if (rows.empty()) rows = {0, 1, 2, 3};
  const auto configs = ablation_configs(base);
  AblationResult result;
  result.seeds = seeds;
  for (int idx : rows) {
    if (idx < 0 || idx > 3) throw ConfigError("ablation rows are numbered 0..3");
    AblationRow row;
    row.name = kAblationRows[idx];
    row.fingerprint = config_fingerprint(configs[idx]);
    for (auto seed : seeds) {
      RunConfig cfg = configs[idx];
      cfg.train.seed = seed;
      if (hooks.log) hooks.log("row " + std::to_string(idx + 1) + " (" + row.name + "), seed " + std::to_string(seed));
      const fs::path dir = out_dir.empty() ? fs::path() : out_dir / ("row" + std::to_string(idx + 1)) / ("seed" + std::to_string(seed));
      row.runs.push_back(train_and_evaluate(cfg, dataset, dir, seed, hooks));
    }
    result.rows.push_back(std::move(row));
  }
  return result;
}

}  // namespace mmdino
