#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mmdino/config.hpp"
#include "mmdino/eval.hpp"

namespace mmdino {

// One pretrain + probe run.
struct RunOutcome {
  std::uint64_t seed = 0;
  std::string fingerprint;
  EvalReport internal;
  std::optional<EvalReport> external;
  EvalReport missing_internal;  // drop-one-modality, same probe
  std::vector<StepRecord> steps;
  double seconds = 0;
};

struct RunHooks {
  std::function<void(const std::string&)> log;
  std::function<void(const StepRecord&)> on_step;
};

// Trains from scratch with cfg.train.seed, then evaluates. Writes run files
// under out_dir when it is non-empty.
RunOutcome train_and_evaluate(const RunConfig& cfg, const Dataset& dataset, const std::filesystem::path& out_dir,
                              std::uint64_t missing_seed, const RunHooks& hooks = {});

inline constexpr std::array<const char*, 4> kAblationRows = {
    "Concat Tokens", "+ Per-Image Pos Embedding", "+ MRI Sequence Embedding", "+ Full Sequence Masking"};

// The four cumulative configurations, derived from `base`.
std::array<RunConfig, 4> ablation_configs(const RunConfig& base);

struct AblationRow {
  std::string name;
  std::string fingerprint;
  std::vector<RunOutcome> runs;  // one per seed

  // Median over seeds.
  double median_internal_mcc() const;
  double median_external_mcc() const;
  double median_missing_mcc() const;
  double median_degradation() const;  // internal MCC minus drop-one-modality MCC, per seed
  EvalReport median_report(bool external) const;  // element-wise medians
};

struct AblationResult {
  std::vector<AblationRow> rows;
  std::vector<std::uint64_t> seeds;
};

// rows: subset of {0,1,2,3}; empty = all four.
AblationResult run_ablation(const RunConfig& base, const Dataset& dataset, const std::vector<std::uint64_t>& seeds,
                            const std::filesystem::path& out_dir, std::vector<int> rows = {},
                            const RunHooks& hooks = {});

double median(std::vector<double> v);

// Writes config.txt, seed and the build's git-describe string into `dir`.
void write_provenance(const std::filesystem::path& dir, const RunConfig& cfg);
const char* git_describe();

}  // namespace mmdino
