#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "mmdino/checkpoint.hpp"
#include "mmdino/config.hpp"
#include "mmdino/experiment.hpp"
#include "mmdino/report.hpp"

namespace py = pybind11;
using namespace mmdino;

namespace {

using IntArray = py::array_t<int, py::array::c_style | py::array::forcecast>;
using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using F32Array = py::array_t<float, py::array::c_style | py::array::forcecast>;

std::vector<int> ints(const IntArray& a) { return {a.data(), a.data() + a.size()}; }

MatD matrix(const F64Array& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-D score array");
  MatD m(a.shape(0), a.shape(1));
  auto r = a.unchecked<2>();
  for (py::ssize_t i = 0; i < a.shape(0); ++i)
    for (py::ssize_t j = 0; j < a.shape(1); ++j) m(i, j) = r(i, j);
  return m;
}

Image image(const F32Array& a) {
  if (a.ndim() != 2) throw ShapeError("images must be 2-D");
  Image img(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), img.data.begin());
  return img;
}

template <class T>
py::array_t<T> array2(const Grid2D<T>& g) {
  py::array_t<T> out({g.rows, g.cols});
  std::copy(g.data.begin(), g.data.end(), out.mutable_data());
  return out;
}

py::array_t<double> to_numpy(const Mat& m) {
  py::array_t<double> out({m.rows(), m.cols()});
  auto w = out.mutable_unchecked<2>();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) w(i, j) = m(i, j);
  return out;
}

py::array_t<double> to_numpy(const Vec& v) {
  py::array_t<double> out(v.size());
  std::copy(v.data(), v.data() + v.size(), out.mutable_data());
  return out;
}

ParamVector params_from(const Model& model, const py::array_t<double, py::array::c_style | py::array::forcecast>& p) {
  if (static_cast<size_t>(p.size()) != model.layout().total()) throw ShapeError("parameter vector has the wrong length");
  return ParamVector(p.data(), p.data() + p.size());
}

ModalityStack stack_from(const std::vector<std::optional<F32Array>>& images) {
  ModalityStack s(images.size());
  for (size_t i = 0; i < images.size(); ++i)
    if (images[i]) s[i] = image(*images[i]);
  return s;
}

py::dict step_dict(const StepRecord& r) {
  py::dict d;
  d["step"] = r.step;
  d["image_loss"] = r.loss.image_loss;
  d["patch_loss"] = r.loss.patch_loss;
  d["supervised_loss"] = r.loss.supervised_loss;
  d["total"] = r.loss.total;
  d["lr"] = r.lr;
  d["grad_norm"] = r.grad_norm;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "C++ core of mmdino";

  // Translators run newest first, so the base class goes in before its subclasses.
  const auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<PreconditionError>(m, "PreconditionError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());

  py::class_<RunConfig>(m, "Config")
      .def(py::init([](const std::string& text, bool desk) { return parse_config(text, desk); }), py::arg("text") = "",
           py::arg("desk_scale") = false)
      .def("get", [](const RunConfig& c, const std::string& k) { return get_config_value(c, k); })
      .def("set",
           [](RunConfig& c, const std::string& k, const std::string& v) {
             set_config_value(c, k, v);
             c.validate();
           })
      .def("text", &serialize_config)
      .def("fingerprint", &config_fingerprint)
      .def_static("keys", &config_keys)
      .def("__repr__", [](const RunConfig& c) { return "<mmdino.Config " + config_fingerprint(c) + ">"; });

  m.def(
      "synth",
      [](const std::filesystem::path& out, int subjects, int external, double labeled_fraction,
         std::array<double, 3> prevalence, std::array<double, 3> splits, double redundancy,
         std::optional<int> evidence_modality, int image_size, double noise, std::uint64_t seed) {
        SynthSpec s;
        s.n_subjects = subjects;
        s.n_external = external;
        s.labeled_fraction = labeled_fraction;
        s.prevalence = prevalence;
        s.split_fractions = splits;
        s.redundancy = redundancy;
        s.evidence_modality = evidence_modality;
        s.image_size = image_size;
        s.noise = noise;
        s.seed = seed;
        py::gil_scoped_release release;
        return synth_generate(s, out).subjects.size();
      },
      py::arg("out"), py::arg("subjects") = 500, py::arg("external") = -1, py::arg("labeled_fraction") = 0.5,
      py::arg("prevalence") = std::array<double, 3>{0.8, 0.1, 0.1},
      py::arg("splits") = std::array<double, 3>{0.7, 0.1, 0.2}, py::arg("redundancy") = 1.0,
      py::arg("evidence_modality") = py::none(), py::arg("image_size") = 96, py::arg("noise") = 0.15,
      py::arg("seed") = 0, "Writes a synthetic cohort; returns the number of subjects.");

  py::class_<Dataset>(m, "Dataset")
      .def(py::init(&load_dataset), py::arg("root"))
      .def("__len__", [](const Dataset& d) { return d.subjects.size(); })
      .def_property_readonly("modalities", [](const Dataset& d) { return d.modalities.names; })
      .def("split_counts",
           [](const Dataset& d) {
             py::dict out;
             for (Split s : {Split::train, Split::val, Split::test_internal, Split::test_external})
               out[py::str(to_string(s))] = d.split(s).size();
             return out;
           })
      .def("subject", [](const Dataset& d, size_t i) {
        if (i >= d.subjects.size()) throw py::index_error();
        const auto& r = d.subjects[i];
        py::dict out;
        out["id"] = r.id;
        out["split"] = to_string(r.split);
        out["label"] = r.label ? py::object(py::int_(*r.label)) : py::object(py::none());
        out["mask"] = array2(r.tumor_mask);
        py::list imgs;
        for (const auto& img : r.modalities) imgs.append(img ? py::object(array2(*img)) : py::object(py::none()));
        out["images"] = imgs;
        return out;
      });

  m.def("mcc", [](const IntArray& y, const IntArray& p) { return compute_mcc(ints(y), ints(p)); });
  m.def("f1", [](const IntArray& y, const IntArray& p, int cls) {
    const F1 f = compute_f1(ints(y), ints(p), cls);
    return py::make_tuple(f.value, f.defined);
  });
  m.def("auroc", [](const IntArray& y, const F64Array& scores) { return compute_auroc(ints(y), matrix(scores)); },
        "Macro one-vs-rest AUROC; scores is n x 3.");

  m.def("lr_at", &lr_at, py::arg("step"), py::arg("total_steps"), py::arg("warmup_steps"), py::arg("base_lr"),
        py::arg("min_lr"));
  m.def("ema_momentum_at", &ema_momentum_at, py::arg("step"), py::arg("total_steps"), py::arg("m0"), py::arg("m1"));
  m.def("teacher_temp_at", &teacher_temp_at, py::arg("step"), py::arg("warmup_steps"), py::arg("t0"), py::arg("t1"));

  py::class_<Model>(m, "Model")
      .def(py::init([](const RunConfig& c) { return build_model(c); }), py::arg("config"))
      .def_property_readonly("num_params", [](const Model& md) { return md.layout().total(); })
      .def("tensor_names",
           [](const Model& md) {
             std::vector<std::string> names;
             for (const auto& t : md.layout().tensors()) names.push_back(t.name);
             return names;
           })
      .def("init_params",
           [](const Model& md, std::uint64_t seed) {
             const auto p = md.init_params(seed);
             py::array_t<double> out(p.size());
             std::copy(p.begin(), p.end(), out.mutable_data());
             return out;
           },
           py::arg("seed") = 0)
      .def("forward",
           [](const Model& md, const std::vector<std::optional<F32Array>>& images,
              const py::array_t<double, py::array::c_style | py::array::forcecast>& params, double temperature) {
             const auto p = params_from(md, params);
             const auto pass = md.forward(stack_from(images), nullptr, p, true, false);
             py::dict out;
             out["tokens"] = pass.features.rows();
             out["cls"] = to_numpy(Vec(pass.features.row(0).transpose()));
             out["image_logits"] = to_numpy(pass.image_logits);
             out["image_probs"] = to_numpy(prototype_scores(pass.image_logits, temperature).probs);
             out["patch_logits"] = to_numpy(pass.patch_logits);
             return out;
           },
           py::arg("images"), py::arg("params"), py::arg("temperature") = 0.1,
           "One crop per modality (None = absent); returns features and head outputs.");

  m.def(
      "pretrain",
      [](const RunConfig& cfg, const std::filesystem::path& data, const std::filesystem::path& out, std::int64_t max_steps,
         bool resume) {
        const Dataset ds = load_dataset(data);
        const Model model = build_model(cfg);
        TrainerState state = TrainerState::initialize(model, cfg.train.seed);
        const auto ckpt = out / "checkpoint.safetensors";
        if (resume && std::filesystem::exists(ckpt)) state = load_checkpoint(ckpt, model.layout()).state;
        if (!out.empty()) write_provenance(out, cfg);
        PretrainOptions opts;
        opts.out_dir = out;
        opts.config_text = serialize_config(cfg);
        opts.max_steps = max_steps;
        std::vector<StepRecord> recs;
        {
          py::gil_scoped_release release;
          recs = pretrain(model, cfg.train, cfg.masking, cfg.views, ds, state, opts);
        }
        py::list steps;
        for (const auto& r : recs) steps.append(step_dict(r));
        return steps;
      },
      py::arg("config"), py::arg("data"), py::arg("out"), py::arg("max_steps") = -1, py::arg("resume") = false,
      "Pretrains from scratch (or resumes from out/checkpoint.safetensors); returns per-step losses.");

  m.def(
      "evaluate_json",
      [](const std::filesystem::path& run, const std::filesystem::path& data, std::optional<std::uint64_t> missing_seed,
         const std::string& missing_mode) {
        const auto ckpt = std::filesystem::is_directory(run) ? run / "checkpoint.safetensors" : run;
        const RunConfig cfg = parse_config(checkpoint_config(ckpt));
        const Model model = build_model(cfg);
        const TrainerState state = load_checkpoint(ckpt, model.layout()).state;
        const Dataset ds = load_dataset(data);
        std::optional<MissingSpec> ms;
        if (missing_seed) ms = MissingSpec{*missing_seed, parse_missing_mode(missing_mode)};
        std::optional<ProbeEvaluation> ev;
        {
          py::gil_scoped_release release;
          ev = evaluate_model(model, state.model, ds, cfg.views, cfg.eval, config_fingerprint(cfg), ms ? &*ms : nullptr);
        }
        nlohmann::json j = {{"internal", to_json(ev->internal)}};
        if (ev->external) j["external"] = to_json(*ev->external);
        return j.dump();
      },
      py::arg("run"), py::arg("data"), py::arg("missing_seed") = py::none(), py::arg("missing_mode") = "remove");

  m.attr("git_describe") = git_describe();
}
