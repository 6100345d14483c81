// mmdino command line: synth, pretrain, probe, eval, ablate, report.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mmdino/checkpoint.hpp"
#include "mmdino/config.hpp"
#include "mmdino/experiment.hpp"
#include "mmdino/report.hpp"

namespace fs = std::filesystem;
using namespace mmdino;
using json = nlohmann::json;

namespace {

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw Error("cannot write " + p.string());
  out << text;
}

void log_line(const std::string& msg) { std::cerr << "[mmdino] " << msg << std::endl; }

std::string data_root(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("MMDINO_DATA")) return env;
  throw CLI::RequiredError("--data (or MMDINO_DATA)");
}

RunConfig load_config(const std::string& path, bool desk, const std::vector<std::string>& overrides) {
  std::string text = path.empty() ? std::string() : read_text(path);
  for (const auto& o : overrides) {
    if (o.find('=') == std::string::npos) throw ConfigError("--set expects key=value, got " + o);
    text += "\n" + o;
  }
  return parse_config(text, desk);
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(std::stoull(tok));
  if (out.empty()) throw ConfigError("no seeds given");
  return out;
}

struct LoadedRun {
  RunConfig cfg;
  TrainerState state;
};

LoadedRun load_run(const fs::path& ckpt) {
  const std::string text = checkpoint_config(ckpt);
  LoadedRun run{parse_config(text), {}};
  const Model model = build_model(run.cfg);
  run.state = load_checkpoint(ckpt, model.layout()).state;
  return run;
}

fs::path checkpoint_path(const std::string& run_or_ckpt) {
  const fs::path p(run_or_ckpt);
  return fs::is_directory(p) ? p / "checkpoint.safetensors" : p;
}

void write_reports(const fs::path& out, const std::vector<EvalReport>& reports, const std::string& stem) {
  json j = json::array();
  for (const auto& r : reports) {
    r.validate();
    j.push_back(to_json(r));
  }
  write_text(out / (stem + ".json"), j.dump(2) + "\n");
  write_text(out / (stem + ".csv"), reports_csv(reports));
  write_text(out / (stem + ".md"), reports_markdown(reports));
  std::cout << reports_markdown(reports);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-modal self-distillation pretraining for glioma subtyping"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("mmdino ") + git_describe());

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic multi-modal cohort");
  SynthSpec spec;
  std::string synth_out, prevalence = "0.8,0.1,0.1", splits = "0.7,0.1,0.2", evidence = "none";
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--subjects", spec.n_subjects, "Internal subjects (train + val + internal test)")->capture_default_str();
  synth->add_option("--external", spec.n_external, "External test subjects (-1: 20% of --subjects)")->capture_default_str();
  synth->add_option("--labeled-frac", spec.labeled_fraction, "Labeled share of training subjects")->capture_default_str();
  synth->add_option("--prevalence", prevalence, "Class prevalence astro,gbm,oligo")->capture_default_str();
  synth->add_option("--splits", splits, "Train,val,internal-test fractions")->capture_default_str();
  synth->add_option("--redundancy", spec.redundancy, "Cross-modality duplication of class evidence in [0,1]")->capture_default_str();
  synth->add_option("--evidence-modality", evidence, "Render all class evidence in this modality (or none)")->capture_default_str();
  synth->add_option("--image-size", spec.image_size, "Slice side in pixels")->capture_default_str();
  synth->add_option("--noise", spec.noise, "Gaussian noise level")->capture_default_str();
  synth->add_option("--seed", spec.seed, "Generator seed")->capture_default_str();

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "Semi-supervised pretraining");
  std::string data_dir, config_path, out_dir, resume;
  bool desk = false;
  std::int64_t max_steps = -1;
  std::vector<std::string> overrides;
  pre->add_option("--data", data_dir, "Dataset root (default $MMDINO_DATA)");
  pre->add_option("--config", config_path, "Config file (key = value)");
  pre->add_option("--out", out_dir, "Run directory")->required();
  pre->add_flag("--desk-scale", desk, "Use the small single-machine preset");
  pre->add_option("--resume", resume, "Continue from a checkpoint file or run directory");
  pre->add_option("--max-steps", max_steps, "Stop after this many steps");
  pre->add_option("--set", overrides, "Override one config key (key=value), repeatable");

  // probe / eval
  auto* probe = app.add_subcommand("probe", "Fit the linear probe on a trained run and score the test splits");
  auto* eval = app.add_subcommand("eval", "Evaluate a trained run, optionally with one modality missing");
  std::string run_dir, eval_out, missing, missing_mode;
  std::uint64_t missing_seed = 0;
  for (auto* sc : {probe, eval}) {
    sc->add_option("--data", data_dir, "Dataset root (default $MMDINO_DATA)");
    sc->add_option("--run", run_dir, "Run directory or checkpoint file")->required();
    sc->add_option("--out", eval_out, "Output directory (default: the run directory)");
  }
  eval->add_option("--missing-modality", missing, "Drop one modality per subject")->check(CLI::IsMember({"random"}));
  eval->add_option("--seed", missing_seed, "Seed for the per-subject modality choice")->capture_default_str();
  eval->add_option("--missing-mode", missing_mode, "remove tokens or substitute mask tokens")
      ->check(CLI::IsMember({"remove", "mask"}));

  // ablate
  auto* ablate = app.add_subcommand("ablate", "Run the four-configuration ablation");
  std::string seeds_arg = "0,1,2", rows_arg;
  ablate->add_option("--data", data_dir, "Dataset root (default $MMDINO_DATA)");
  ablate->add_option("--config", config_path, "Base config file");
  ablate->add_option("--out", out_dir, "Output directory")->required();
  ablate->add_flag("--desk-scale", desk, "Use the small single-machine preset");
  ablate->add_option("--seeds", seeds_arg, "Comma-separated seeds")->capture_default_str();
  ablate->add_option("--rows", rows_arg, "Subset of rows 1-4, comma separated");
  ablate->add_option("--set", overrides, "Override one config key (key=value), repeatable");

  // report
  auto* report = app.add_subcommand("report", "Render results of a run, eval or ablation directory");
  std::string report_in, format = "md", plots, report_out;
  report->add_option("--in", report_in, "Directory holding ablation.json, eval.json or metrics.csv")->required();
  report->add_option("--format", format, "Output format")->check(CLI::IsMember({"csv", "json", "md"}))->capture_default_str();
  report->add_option("--plots", plots, "Write SVG charts into this directory");
  report->add_option("--out", report_out, "Write the report to a file instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*synth) {
      spec.prevalence = {};
      {
        RunConfig tmp;
        set_config_value(tmp, "synth.prevalence", prevalence);
        set_config_value(tmp, "synth.split_fractions", splits);
        set_config_value(tmp, "synth.evidence_modality", evidence);
        spec.prevalence = tmp.synth.prevalence;
        spec.split_fractions = tmp.synth.split_fractions;
        spec.evidence_modality = tmp.synth.evidence_modality;
      }
      const Dataset ds = synth_generate(spec, synth_out);
      RunConfig cfg;
      cfg.synth = spec;
      write_provenance(synth_out, cfg);
      log_line("wrote " + std::to_string(ds.subjects.size()) + " subjects to " + synth_out);
      return 0;
    }

    if (*pre) {
      const Dataset ds = load_dataset(data_root(data_dir));
      RunConfig cfg;
      TrainerState state;
      if (!resume.empty()) {
        auto run = load_run(checkpoint_path(resume));
        cfg = run.cfg;
        state = std::move(run.state);
        log_line("resuming at step " + std::to_string(state.step));
      } else {
        cfg = load_config(config_path, desk, overrides);
      }
      const Model model = build_model(cfg);
      if (resume.empty()) state = TrainerState::initialize(model, cfg.train.seed);
      write_provenance(out_dir, cfg);
      PretrainOptions opts;
      opts.out_dir = out_dir;
      opts.config_text = serialize_config(cfg);
      opts.max_steps = max_steps;
      const std::int64_t spe = cfg.train.steps_per_epoch;
      opts.on_step = [&](const StepRecord& r) {
        if ((r.step + 1) % spe == 0) {
          char buf[160];
          std::snprintf(buf, sizeof(buf), "epoch %lld step %lld  total %.4f  image %.4f  sup %.4f  patch %.4f  lr %.2e",
                        static_cast<long long>((r.step + 1) / spe), static_cast<long long>(r.step + 1), r.loss.total,
                        r.loss.image_loss, r.loss.supervised_loss, r.loss.patch_loss, r.lr);
          log_line(buf);
        }
      };
      pretrain(model, cfg.train, cfg.masking, cfg.views, ds, state, opts);
      log_line("checkpoint: " + (fs::path(out_dir) / "checkpoint.safetensors").string());
      return 0;
    }

    if (*probe || *eval) {
      const Dataset ds = load_dataset(data_root(data_dir));
      const fs::path ckpt = checkpoint_path(run_dir);
      const LoadedRun run = load_run(ckpt);
      const Model model = build_model(run.cfg);
      const fs::path out = eval_out.empty() ? ckpt.parent_path() : fs::path(eval_out);
      EvalConfig ecfg = run.cfg.eval;
      if (!missing_mode.empty()) ecfg.missing_mode = parse_missing_mode(missing_mode);
      const std::string fp = config_fingerprint(run.cfg);
      std::optional<MissingSpec> ms;
      if (!missing.empty()) ms = MissingSpec{missing_seed, ecfg.missing_mode};
      const ProbeEvaluation ev = evaluate_model(model, run.state.model, ds, run.cfg.views, ecfg, fp, ms ? &*ms : nullptr);
      std::vector<EvalReport> reports{ev.internal};
      if (ev.external) reports.push_back(*ev.external);
      write_provenance(out, run.cfg);
      write_reports(out, reports, *probe ? "probe" : (ms ? "eval_missing" : "eval"));
      return 0;
    }

    if (*ablate) {
      const Dataset ds = load_dataset(data_root(data_dir));
      const RunConfig base = load_config(config_path, desk, overrides);
      std::vector<int> rows;
      if (!rows_arg.empty())
        for (auto r : parse_seeds(rows_arg)) rows.push_back(static_cast<int>(r) - 1);
      write_provenance(out_dir, base);
      RunHooks hooks;
      hooks.log = log_line;
      const AblationResult res = run_ablation(base, ds, parse_seeds(seeds_arg), out_dir, rows, hooks);
      for (const auto& row : res.rows)
        for (const auto& run : row.runs) {
          run.internal.validate();
          if (run.external) run.external->validate();
        }
      write_text(fs::path(out_dir) / "ablation.json", to_json(res).dump(2) + "\n");
      write_text(fs::path(out_dir) / "ablation.md", ablation_markdown(res));
      write_text(fs::path(out_dir) / "ablation.csv", ablation_csv(res));
      std::cout << ablation_markdown(res);
      return 0;
    }

    if (*report) {
      const fs::path in(report_in);
      std::string text;
      if (fs::exists(in / "ablation.json")) {
        const AblationResult res = ablation_from_json(json::parse(read_text(in / "ablation.json")));
        text = format == "md" ? ablation_markdown(res) : format == "csv" ? ablation_csv(res) : to_json(res).dump(2) + "\n";
        if (!plots.empty()) {
          std::vector<Series> curves, bars;
          for (const auto& row : res.rows) {
            if (row.runs.empty()) continue;
            Series s{row.name, {}, {}};
            for (const auto& st : row.runs[0].steps) s.x.push_back(static_cast<double>(st.step)), s.y.push_back(st.loss.total);
            curves.push_back(s);
            const EvalReport i = row.median_report(false), e = row.median_report(true);
            bars.push_back({row.name, {}, {i.mcc, e.mcc, i.auroc, e.auroc, row.median_missing_mcc()}});
          }
          write_text(fs::path(plots) / "loss_curves.svg", svg_line_chart("Total loss (first seed)", "step", curves));
          write_text(fs::path(plots) / "metrics.svg",
                     svg_bar_chart("Ablation (seed medians)", {"MCC int", "MCC ext", "AUC int", "AUC ext", "MCC drop-one"}, bars));
        }
      } else if (fs::exists(in / "eval.json") || fs::exists(in / "probe.json")) {
        std::vector<EvalReport> reports;
        for (const char* stem : {"probe.json", "eval.json", "eval_missing.json"})
          if (fs::exists(in / stem))
            for (const auto& j : json::parse(read_text(in / stem))) reports.push_back(eval_report_from_json(j));
        json arr = json::array();
        for (const auto& r : reports) arr.push_back(to_json(r));
        text = format == "md" ? reports_markdown(reports) : format == "csv" ? reports_csv(reports) : arr.dump(2) + "\n";
        if (!plots.empty()) {
          std::vector<Series> bars;
          for (const auto& r : reports)
            bars.push_back({r.split + (r.missing_seed ? " (drop-one)" : ""), {}, {r.mcc, r.auroc, r.f1[0].value, r.f1[1].value, r.f1[2].value}});
          write_text(fs::path(plots) / "metrics.svg",
                     svg_bar_chart("Evaluation", {"MCC", "AUROC", "F1 astro", "F1 gbm", "F1 oligo"}, bars));
        }
      } else if (!fs::exists(in / "metrics.csv")) {
        throw Error(in.string() + " holds no ablation.json, eval.json, probe.json or metrics.csv");
      }
      if (fs::exists(in / "metrics.csv") && !plots.empty())
        write_text(fs::path(plots) / "training_loss.svg", svg_line_chart("Training loss", "step", read_metrics_csv(in / "metrics.csv")));
      if (text.empty()) text = read_text(in / "metrics.csv");
      if (report_out.empty())
        std::cout << text;
      else
        write_text(report_out, text);
      return 0;
    }
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
