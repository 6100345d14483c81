#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmdino/eval.hpp"
#include "mmdino/experiment.hpp"

namespace mmdino {

nlohmann::json to_json(const EvalReport& r);
EvalReport eval_report_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunOutcome& r);
RunOutcome run_outcome_from_json(const nlohmann::json& j);
nlohmann::json to_json(const AblationResult& r);
AblationResult ablation_from_json(const nlohmann::json& j);

// Ablation table: one row per configuration, MCC / AUC / per-class F1, each
// as internal and external columns (seed medians).
std::string ablation_markdown(const AblationResult& r);
std::string ablation_csv(const AblationResult& r);

std::string reports_markdown(const std::vector<EvalReport>& reports);
std::string reports_csv(const std::vector<EvalReport>& reports);

struct Series {
  std::string name;
  std::vector<double> x, y;
};

// Minimal standalone SVG charts.
std::string svg_line_chart(const std::string& title, const std::string& x_label, const std::vector<Series>& series);
std::string svg_bar_chart(const std::string& title, const std::vector<std::string>& labels,
                          const std::vector<Series>& groups);

// Loss curves from a metrics.csv file: one series per loss column.
std::vector<Series> read_metrics_csv(const std::filesystem::path& path);

}  // namespace mmdino
