#include "mmdino/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace mmdino {

using json = nlohmann::json;

namespace {

// JSON has no NaN; store it as null.
json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
double num(const json& j) { return j.is_null() ? std::nan("") : j.get<double>(); }

std::string f2(double v) {
  if (!std::isfinite(v)) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string f4(double v) {
  if (!std::isfinite(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

json to_json(const EvalReport& r) {
  json f1 = json::object();
  json defined = json::object();
  for (int k = 0; k < kNumClasses; ++k) {
    f1[kClassNames[k]] = r.f1[k].value;
    defined[kClassNames[k]] = r.f1[k].defined;
  }
  json j = {{"split", r.split}, {"n", r.n},          {"mcc", num(r.mcc)},          {"auroc_macro_ovr", num(r.auroc)},
            {"f1", f1},         {"f1_defined", defined}, {"confusion_matrix", r.confusion}, {"fingerprint", r.fingerprint}};
  if (r.missing_seed) j["missing_modality_seed"] = *r.missing_seed;
  return j;
}

EvalReport eval_report_from_json(const json& j) {
  EvalReport r;
  r.split = j.at("split").get<std::string>();
  r.n = j.at("n").get<int>();
  r.mcc = num(j.at("mcc"));
  r.auroc = num(j.at("auroc_macro_ovr"));
  for (int k = 0; k < kNumClasses; ++k) {
    r.f1[k].value = j.at("f1").at(kClassNames[k]).get<double>();
    r.f1[k].defined = j.at("f1_defined").at(kClassNames[k]).get<bool>();
  }
  r.confusion = j.at("confusion_matrix").get<Confusion>();
  r.fingerprint = j.at("fingerprint").get<std::string>();
  if (j.contains("missing_modality_seed")) r.missing_seed = j.at("missing_modality_seed").get<std::uint64_t>();
  return r;
}

json to_json(const RunOutcome& r) {
  json losses = json::array();
  for (const auto& s : r.steps) losses.push_back(num(s.loss.total));
  json j = {{"seed", r.seed},
            {"fingerprint", r.fingerprint},
            {"internal", to_json(r.internal)},
            {"missing_internal", to_json(r.missing_internal)},
            {"total_loss", losses},
            {"seconds", r.seconds}};
  if (r.external) j["external"] = to_json(*r.external);
  return j;
}

RunOutcome run_outcome_from_json(const json& j) {
  RunOutcome r;
  r.seed = j.at("seed").get<std::uint64_t>();
  r.fingerprint = j.at("fingerprint").get<std::string>();
  r.internal = eval_report_from_json(j.at("internal"));
  r.missing_internal = eval_report_from_json(j.at("missing_internal"));
  if (j.contains("external")) r.external = eval_report_from_json(j.at("external"));
  std::int64_t step = 0;
  for (const auto& v : j.value("total_loss", json::array())) {
    StepRecord s;
    s.step = step++;
    s.loss.total = num(v);
    r.steps.push_back(s);
  }
  r.seconds = j.value("seconds", 0.0);
  return r;
}

json to_json(const AblationResult& r) {
  json rows = json::array();
  for (const auto& row : r.rows) {
    json runs = json::array();
    for (const auto& run : row.runs) runs.push_back(to_json(run));
    rows.push_back({{"name", row.name},
                    {"fingerprint", row.fingerprint},
                    {"median_internal_mcc", num(row.median_internal_mcc())},
                    {"median_external_mcc", num(row.median_external_mcc())},
                    {"median_missing_mcc", num(row.median_missing_mcc())},
                    {"median_degradation", num(row.median_degradation())},
                    {"runs", runs}});
  }
  return {{"seeds", r.seeds}, {"rows", rows}};
}

AblationResult ablation_from_json(const json& j) {
  AblationResult r;
  r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  for (const auto& jr : j.at("rows")) {
    AblationRow row;
    row.name = jr.at("name").get<std::string>();
    row.fingerprint = jr.at("fingerprint").get<std::string>();
    for (const auto& run : jr.at("runs")) row.runs.push_back(run_outcome_from_json(run));
    r.rows.push_back(std::move(row));
  }
  return r;
}

std::string ablation_markdown(const AblationResult& r) {
  std::ostringstream md;
  md << "| Semi-supervised | MCC Int. | MCC Ext. | AUC Int. | AUC Ext. | F1 Astro Int. | F1 Astro Ext. "
        "| F1 GBM Int. | F1 GBM Ext. | F1 Oligo Int. | F1 Oligo Ext. |\n";
  md << "|---|" << std::string("---:|") + "---:|---:|---:|---:|---:|---:|---:|---:|---:|\n";
  for (const auto& row : r.rows) {
    const EvalReport in = row.median_report(false);
    const EvalReport ex = row.median_report(true);
    const bool has_ex = std::any_of(row.runs.begin(), row.runs.end(), [](const RunOutcome& o) { return o.external.has_value(); });
    auto ext = [&](double v) { return has_ex ? f2(v) : std::string("n/a"); };
    md << "| " << row.name << " | " << f2(in.mcc) << " | " << ext(ex.mcc) << " | " << f2(in.auroc) << " | "
       << ext(ex.auroc);
    for (int k = 0; k < kNumClasses; ++k) md << " | " << f2(in.f1[k].value) << " | " << ext(ex.f1[k].value);
    md << " |\n";
  }
  md << "\nMedians over seeds";
  for (size_t i = 0; i < r.seeds.size(); ++i) md << (i ? ", " : " ") << r.seeds[i];
  md << ".\n";
  return md.str();
}

std::string ablation_csv(const AblationResult& r) {
  std::ostringstream csv;
  csv << "row,name,seed,split,mcc,auroc,f1_astro,f1_gbm,f1_oligo,missing_mcc,fingerprint\n";
  for (size_t i = 0; i < r.rows.size(); ++i)
    for (const auto& run : r.rows[i].runs) {
      auto line = [&](const EvalReport& e, double missing) {
        csv << i + 1 << ",\"" << r.rows[i].name << "\"," << run.seed << ',' << e.split << ',' << f4(e.mcc) << ','
            << f4(e.auroc) << ',' << f4(e.f1[0].value) << ',' << f4(e.f1[1].value) << ',' << f4(e.f1[2].value) << ','
            << f4(missing) << ',' << r.rows[i].fingerprint << '\n';
      };
      line(run.internal, run.missing_internal.mcc);
      if (run.external) line(*run.external, std::nan(""));
    }
  return csv.str();
}

std::string reports_markdown(const std::vector<EvalReport>& reports) {
  std::ostringstream md;
  md << "| Split | n | MCC | AUROC | F1 Astro | F1 GBM | F1 Oligo |\n|---|---:|---:|---:|---:|---:|---:|\n";
  for (const auto& e : reports) {
    md << "| " << e.split << (e.missing_seed ? " (one modality dropped)" : "") << " | " << e.n << " | " << f2(e.mcc)
       << " | " << f2(e.auroc);
    for (int k = 0; k < kNumClasses; ++k) md << " | " << f2(e.f1[k].value) << (e.f1[k].defined ? "" : "*");
    md << " |\n";
  }
  md << "\nConfusion matrices (rows = true astro/gbm/oligo, columns = predicted):\n\n";
  for (const auto& e : reports) {
    md << "- " << e.split << ":";
    for (const auto& row : e.confusion) md << " [" << row[0] << ", " << row[1] << ", " << row[2] << "]";
    md << "\n";
  }
  return md.str();
}

std::string reports_csv(const std::vector<EvalReport>& reports) {
  std::ostringstream csv;
  csv << "split,missing_seed,n,mcc,auroc,f1_astro,f1_gbm,f1_oligo,fingerprint\n";
  for (const auto& e : reports)
    csv << e.split << ',' << (e.missing_seed ? std::to_string(*e.missing_seed) : "") << ',' << e.n << ',' << f4(e.mcc)
        << ',' << f4(e.auroc) << ',' << f4(e.f1[0].value) << ',' << f4(e.f1[1].value) << ',' << f4(e.f1[2].value)
        << ',' << e.fingerprint << '\n';
  return csv.str();
}

// ---------------------------------------------------------------- SVG

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
constexpr double kW = 640, kH = 400, kL = 60, kR = 160, kT = 40, kB = 50;

std::string svg_open(const std::string& title) {
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << xml_escape(title) << "</text>\n";
  return s.str();
}

}  // namespace

std::string svg_line_chart(const std::string& title, const std::string& x_label, const std::vector<Series>& series) {
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto& s : series)
    for (size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]), x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]), y1 = std::max(y1, s.y[i]);
    }
  if (x0 > x1) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  const double pw = kW - kL - kR, ph = kH - kT - kB;
  auto px = [&](double x) { return kL + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return kT + ph - (y - y0) / (y1 - y0) * ph; };

  std::ostringstream s;
  s << svg_open(title);
  s << "<rect x=\"" << kL << "\" y=\"" << kT << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double yv = y0 + (y1 - y0) * t / 4, xv = x0 + (x1 - x0) * t / 4;
    s << "<text x=\"" << kL - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << f2(yv) << "</text>\n";
    s << "<text x=\"" << px(xv) << "\" y=\"" << kT + ph + 16 << "\" text-anchor=\"middle\">" << static_cast<long>(xv)
      << "</text>\n";
  }
  s << "<text x=\"" << kL + pw / 2 << "\" y=\"" << kH - 12 << "\" text-anchor=\"middle\">" << xml_escape(x_label)
    << "</text>\n";
  for (size_t k = 0; k < series.size(); ++k) {
    const char* color = kPalette[k % 6];
    s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (size_t i = 0; i < series[k].x.size(); ++i)
      if (std::isfinite(series[k].y[i])) s << px(series[k].x[i]) << ',' << py(series[k].y[i]) << ' ';
    s << "\"/>\n";
    const double ly = kT + 14 + 18.0 * k;
    s << "<line x1=\"" << kW - kR + 12 << "\" y1=\"" << ly << "\" x2=\"" << kW - kR + 32 << "\" y2=\"" << ly
      << "\" stroke=\"" << color << "\" stroke-width=\"2\"/><text x=\"" << kW - kR + 38 << "\" y=\"" << ly + 4 << "\">"
      << xml_escape(series[k].name) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::string svg_bar_chart(const std::string& title, const std::vector<std::string>& labels, const std::vector<Series>& groups) {
  double y0 = 0, y1 = 1;
  for (const auto& g : groups)
    for (double v : g.y)
      if (std::isfinite(v)) y0 = std::min(y0, v), y1 = std::max(y1, v);
  const double pw = kW - kL - kR, ph = kH - kT - kB;
  auto py = [&](double y) { return kT + ph - (y - y0) / (y1 - y0) * ph; };
  const double slot = pw / std::max<size_t>(1, labels.size());
  const double bar = slot * 0.8 / std::max<size_t>(1, groups.size());

  std::ostringstream s;
  s << svg_open(title);
  s << "<line x1=\"" << kL << "\" y1=\"" << py(0) << "\" x2=\"" << kL + pw << "\" y2=\"" << py(0) << "\" stroke=\"#444\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double yv = y0 + (y1 - y0) * t / 4;
    s << "<text x=\"" << kL - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << f2(yv) << "</text>\n";
  }
  for (size_t i = 0; i < labels.size(); ++i) {
    s << "<text x=\"" << kL + slot * (i + 0.5) << "\" y=\"" << kT + ph + 16 << "\" text-anchor=\"middle\">"
      << xml_escape(labels[i]) << "</text>\n";
    for (size_t g = 0; g < groups.size(); ++g) {
      const double v = i < groups[g].y.size() && std::isfinite(groups[g].y[i]) ? groups[g].y[i] : 0.0;
      const double x = kL + slot * i + slot * 0.1 + bar * g;
      const double top = std::min(py(v), py(0)), h = std::abs(py(v) - py(0));
      s << "<rect x=\"" << x << "\" y=\"" << top << "\" width=\"" << bar * 0.95 << "\" height=\"" << h << "\" fill=\""
        << kPalette[g % 6] << "\"/>\n";
    }
  }
  for (size_t g = 0; g < groups.size(); ++g) {
    const double ly = kT + 14 + 18.0 * g;
    s << "<rect x=\"" << kW - kR + 12 << "\" y=\"" << ly - 6 << "\" width=\"12\" height=\"12\" fill=\"" << kPalette[g % 6]
      << "\"/><text x=\"" << kW - kR + 30 << "\" y=\"" << ly + 4 << "\">" << xml_escape(groups[g].name) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::vector<Series> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != kMetricsHeader) throw DataError(path.string() + ": unexpected metrics header");
  std::vector<Series> s(4);
  s[0].name = "image", s[1].name = "patch", s[2].name = "supervised", s[3].name = "total";
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    std::vector<double> v;
    while (std::getline(row, cell, ',')) v.push_back(std::stod(cell));
    if (v.size() != 5) throw DataError(path.string() + ": malformed row");
    for (int c = 0; c < 4; ++c) {
      s[c].x.push_back(v[0]);
      s[c].y.push_back(v[c + 1]);
    }
  }
  return s;
}

}  // namespace mmdino
