#include "mmdino/config.hpp"

#include <charconv>
#include <cstdio>
#include <functional>
#include <sstream>

namespace mmdino {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  size_t start = 0;
  for (;;) {
    const size_t comma = s.find(',', start);
    out.push_back(trim(s.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

template <class T>
T parse_number(std::string_view s) {
  const std::string t = trim(s);
  T v{};
  const auto [end, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || end != t.data() + t.size() || t.empty()) throw ConfigError("not a number: '" + t + "'");
  return v;
}

bool parse_bool(std::string_view s) {
  const std::string t = trim(s);
  if (t == "true" || t == "1" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "no") return false;
  throw ConfigError("not a boolean: '" + t + "'");
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  // Prefer the shortest representation that reads back exactly.
  for (int p = 1; p <= 17; ++p) {
    char s[64];
    std::snprintf(s, sizeof(s), "%.*g", p, v);
    if (std::strtod(s, nullptr) == v) return s;
  }
  return buf;
}
std::string fmt(int v) { return std::to_string(v); }
std::string fmt(std::uint64_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }

template <class It>
std::string join(It begin, It end) {
  std::string out;
  for (It it = begin; it != end; ++it) out += (it == begin ? "" : ",") + fmt(*it);
  return out;
}

struct Key {
  const char* name;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, std::string_view)> set;
};

template <class T, class F>
Key scalar(const char* name, F field) {
  return {name, [field](const RunConfig& c) { return fmt(field(const_cast<RunConfig&>(c))); },
          [field](RunConfig& c, std::string_view v) {
            if constexpr (std::is_same_v<T, bool>)
              field(c) = parse_bool(v);
            else
              field(c) = parse_number<T>(v);
          }};
}

template <class F>
Key int_list(const char* name, F field) {
  return {name, [field](const RunConfig& c) {
            const auto& v = field(const_cast<RunConfig&>(c));
            return join(v.begin(), v.end());
          },
          [field](RunConfig& c, std::string_view v) {
            auto& dst = field(c);
            dst.clear();
            for (const auto& item : split_list(v)) dst.push_back(parse_number<int>(item));
          }};
}

template <size_t N, class F>
Key double_array(const char* name, F field) {
  return {name, [field](const RunConfig& c) {
            const auto& v = field(const_cast<RunConfig&>(c));
            return join(v.begin(), v.end());
          },
          [field](RunConfig& c, std::string_view v) {
            const auto items = split_list(v);
            if (items.size() != N) throw ConfigError("expected " + std::to_string(N) + " comma-separated values");
            for (size_t i = 0; i < N; ++i) field(c)[i] = parse_number<double>(items[i]);
          }};
}

const std::vector<Key>& keys() {
  static const std::vector<Key> table = [] {
    std::vector<Key> k;
    // model
    k.push_back({"model.modalities",
                 [](const RunConfig& c) {
                   std::string s;
                   for (size_t i = 0; i < c.model.modalities.names.size(); ++i) s += (i ? "," : "") + c.model.modalities.names[i];
                   return s;
                 },
                 [](RunConfig& c, std::string_view v) { c.model.modalities.names = split_list(v); }});
    k.push_back({"model.pos_mode", [](const RunConfig& c) { return to_string(c.model.tokenizer.pos_mode); },
                 [](RunConfig& c, std::string_view v) { c.model.tokenizer.pos_mode = parse_position_mode(trim(v)); }});
    k.push_back(scalar<bool>("model.modality_embedding", [](RunConfig& c) -> bool& { return c.model.tokenizer.use_modality_embedding; }));
    k.push_back(scalar<bool>("model.channel_stack", [](RunConfig& c) -> bool& { return c.model.tokenizer.channel_stack; }));
    k.push_back(int_list("model.stack_modalities", [](RunConfig& c) -> std::vector<int>& { return c.model.tokenizer.stack_modalities; }));
    k.push_back(scalar<int>("model.embed_dim", [](RunConfig& c) -> int& { return c.model.encoder.embed_dim; }));
    k.push_back(scalar<int>("model.depth", [](RunConfig& c) -> int& { return c.model.encoder.depth; }));
    k.push_back(scalar<int>("model.num_heads", [](RunConfig& c) -> int& { return c.model.encoder.num_heads; }));
    k.push_back(scalar<double>("model.mlp_ratio", [](RunConfig& c) -> double& { return c.model.encoder.mlp_ratio; }));
    k.push_back(scalar<int>("model.patch_size", [](RunConfig& c) -> int& { return c.model.encoder.patch_size; }));
    k.push_back(scalar<int>("model.base_grid", [](RunConfig& c) -> int& { return c.model.base_grid; }));
    k.push_back({"model.pos_kernel", [](const RunConfig& c) { return to_string(c.model.kernel); },
                 [](RunConfig& c, std::string_view v) { c.model.kernel = parse_kernel(trim(v)); }});
    // heads
    k.push_back(scalar<int>("head.prototypes", [](RunConfig& c) -> int& { return c.model.head.prototypes; }));
    k.push_back(int_list("head.hidden", [](RunConfig& c) -> std::vector<int>& { return c.model.head.hidden; }));
    k.push_back(scalar<double>("head.student_temp", [](RunConfig& c) -> double& { return c.model.head.student_temp; }));
    k.push_back(scalar<double>("head.teacher_temp", [](RunConfig& c) -> double& { return c.model.head.teacher_temp; }));
    // masking
    k.push_back(scalar<double>("mask.sample_fraction", [](RunConfig& c) -> double& { return c.masking.sample_fraction; }));
    k.push_back(scalar<double>("mask.ratio_min", [](RunConfig& c) -> double& { return c.masking.ratio_min; }));
    k.push_back(scalar<double>("mask.ratio_max", [](RunConfig& c) -> double& { return c.masking.ratio_max; }));
    k.push_back(scalar<double>("mask.modality_prob", [](RunConfig& c) -> double& { return c.masking.modality_mask_prob; }));
    // views
    k.push_back(scalar<int>("view.window", [](RunConfig& c) -> int& { return c.views.window; }));
    k.push_back(scalar<int>("view.global_size", [](RunConfig& c) -> int& { return c.views.global_size; }));
    k.push_back(scalar<int>("view.local_size", [](RunConfig& c) -> int& { return c.views.local_size; }));
    k.push_back(scalar<int>("view.n_global", [](RunConfig& c) -> int& { return c.views.n_global; }));
    k.push_back(scalar<int>("view.n_local", [](RunConfig& c) -> int& { return c.views.n_local; }));
    k.push_back(scalar<double>("view.global_scale_min", [](RunConfig& c) -> double& { return c.views.global_scale_min; }));
    k.push_back(scalar<double>("view.global_scale_max", [](RunConfig& c) -> double& { return c.views.global_scale_max; }));
    k.push_back(scalar<double>("view.local_scale_min", [](RunConfig& c) -> double& { return c.views.local_scale_min; }));
    k.push_back(scalar<double>("view.local_scale_max", [](RunConfig& c) -> double& { return c.views.local_scale_max; }));
    k.push_back(scalar<int>("view.min_tumor_pixels", [](RunConfig& c) -> int& { return c.views.min_tumor_pixels; }));
    k.push_back({"view.kernel", [](const RunConfig& c) { return to_string(c.views.kernel); },
                 [](RunConfig& c, std::string_view v) { c.views.kernel = parse_kernel(trim(v)); }});
    // training
    k.push_back(scalar<int>("train.epochs", [](RunConfig& c) -> int& { return c.train.epochs; }));
    k.push_back(scalar<int>("train.steps_per_epoch", [](RunConfig& c) -> int& { return c.train.steps_per_epoch; }));
    k.push_back(scalar<int>("train.batch_size", [](RunConfig& c) -> int& { return c.train.batch_size; }));
    k.push_back(scalar<double>("train.base_lr", [](RunConfig& c) -> double& { return c.train.base_lr; }));
    k.push_back(scalar<double>("train.min_lr", [](RunConfig& c) -> double& { return c.train.min_lr; }));
    k.push_back(scalar<int>("train.lr_warmup_epochs", [](RunConfig& c) -> int& { return c.train.lr_warmup_epochs; }));
    k.push_back(scalar<int>("train.head_warmup_epochs", [](RunConfig& c) -> int& { return c.train.head_warmup_epochs; }));
    k.push_back(scalar<double>("train.beta1", [](RunConfig& c) -> double& { return c.train.optim.beta1; }));
    k.push_back(scalar<double>("train.beta2", [](RunConfig& c) -> double& { return c.train.optim.beta2; }));
    k.push_back(scalar<double>("train.adam_eps", [](RunConfig& c) -> double& { return c.train.optim.eps; }));
    k.push_back(scalar<double>("train.weight_decay", [](RunConfig& c) -> double& { return c.train.optim.weight_decay; }));
    k.push_back(scalar<double>("train.grad_clip", [](RunConfig& c) -> double& { return c.train.optim.grad_clip; }));
    k.push_back(scalar<double>("train.ema_start", [](RunConfig& c) -> double& { return c.train.ema_start; }));
    k.push_back(scalar<double>("train.ema_end", [](RunConfig& c) -> double& { return c.train.ema_end; }));
    k.push_back(scalar<double>("train.teacher_temp_start", [](RunConfig& c) -> double& { return c.train.teacher_temp_start; }));
    k.push_back(scalar<int>("train.teacher_temp_warmup_epochs", [](RunConfig& c) -> int& { return c.train.teacher_temp_warmup_epochs; }));
    k.push_back(scalar<double>("train.center_momentum", [](RunConfig& c) -> double& { return c.train.center_momentum; }));
    k.push_back(scalar<double>("train.supervised_weight", [](RunConfig& c) -> double& { return c.train.supervised_weight; }));
    k.push_back(scalar<double>("train.label_smoothing", [](RunConfig& c) -> double& { return c.train.label_smoothing; }));
    k.push_back(scalar<int>("train.queue_capacity", [](RunConfig& c) -> int& { return c.train.queue_capacity; }));
    k.push_back(scalar<std::uint64_t>("train.seed", [](RunConfig& c) -> std::uint64_t& { return c.train.seed; }));
    k.push_back(scalar<bool>("train.desk_scale", [](RunConfig& c) -> bool& { return c.train.desk_scale; }));
    // synthetic data
    k.push_back(scalar<int>("synth.n_subjects", [](RunConfig& c) -> int& { return c.synth.n_subjects; }));
    k.push_back(scalar<int>("synth.n_external", [](RunConfig& c) -> int& { return c.synth.n_external; }));
    k.push_back(scalar<double>("synth.labeled_fraction", [](RunConfig& c) -> double& { return c.synth.labeled_fraction; }));
    k.push_back(double_array<kNumClasses>("synth.prevalence", [](RunConfig& c) -> auto& { return c.synth.prevalence; }));
    k.push_back(double_array<3>("synth.split_fractions", [](RunConfig& c) -> auto& { return c.synth.split_fractions; }));
    k.push_back(scalar<int>("synth.image_size", [](RunConfig& c) -> int& { return c.synth.image_size; }));
    k.push_back(scalar<double>("synth.redundancy", [](RunConfig& c) -> double& { return c.synth.redundancy; }));
    k.push_back({"synth.evidence_modality",
                 [](const RunConfig& c) { return c.synth.evidence_modality ? c.model.modalities.names.at(*c.synth.evidence_modality) : std::string("none"); },
                 [](RunConfig& c, std::string_view v) {
                   const std::string t = trim(v);
                   if (t == "none") c.synth.evidence_modality.reset();
                   else c.synth.evidence_modality = ModalityConfig{}.index_of(t);
                 }});
    k.push_back(scalar<double>("synth.noise", [](RunConfig& c) -> double& { return c.synth.noise; }));
    k.push_back(scalar<std::uint64_t>("synth.seed", [](RunConfig& c) -> std::uint64_t& { return c.synth.seed; }));
    // evaluation
    k.push_back({"eval.network", [](const RunConfig& c) { return to_string(c.eval.network); },
                 [](RunConfig& c, std::string_view v) { c.eval.network = parse_feature_network(trim(v)); }});
    k.push_back(scalar<double>("eval.probe_l2", [](RunConfig& c) -> double& { return c.eval.probe.l2; }));
    k.push_back(scalar<double>("eval.probe_tolerance", [](RunConfig& c) -> double& { return c.eval.probe.tolerance; }));
    k.push_back(scalar<int>("eval.probe_max_iter", [](RunConfig& c) -> int& { return c.eval.probe.max_iter; }));
    k.push_back({"eval.missing_mode", [](const RunConfig& c) { return to_string(c.eval.missing_mode); },
                 [](RunConfig& c, std::string_view v) { c.eval.missing_mode = parse_missing_mode(trim(v)); }});
    return k;
  }();
  return table;
}

const Key& find_key(std::string_view name) {
  for (const auto& k : keys())
    if (name == k.name) return k;
  throw ConfigError("unknown config key: " + std::string(name));
}

}  // namespace

void RunConfig::validate() const {
  model.modalities.validate();
  model.tokenizer.validate(model.modalities);
  model.encoder.validate();
  model.head.validate();
  if (model.base_grid < 1) throw ConfigError("model.base_grid must be positive");
  masking.validate();
  const int p = model.encoder.patch_size;
  if (views.global_size % p || views.local_size % p) throw ConfigError("crop sizes must be multiples of the patch size");
  if (views.window < 1 || views.n_global < 1 || views.n_local < 0) throw ConfigError("bad view counts");
  if (!(views.global_scale_min > 0 && views.global_scale_min <= views.global_scale_max && views.global_scale_max <= 1) ||
      !(views.local_scale_min > 0 && views.local_scale_min <= views.local_scale_max && views.local_scale_max <= 1))
    throw ConfigError("crop scale ranges must be ordered inside (0, 1]");
  train.validate();
  synth.validate();
  if (!(eval.probe.l2 >= 0) || !(eval.probe.tolerance > 0) || eval.probe.max_iter < 1)
    throw ConfigError("bad probe settings");
}

void apply_desk_preset(RunConfig& c) {
  c.train.desk_scale = true;
  c.train.epochs = 30;
  c.train.batch_size = 32;
  c.views.n_local = 4;
  // Sized for one CPU core; see README for the budget.
  c.train.steps_per_epoch = 6;
  c.train.base_lr = 1e-3;
  c.train.min_lr = 1e-5;
  c.train.lr_warmup_epochs = 3;
  c.train.head_warmup_epochs = 1;
  c.train.teacher_temp_warmup_epochs = 10;
  c.model.encoder.embed_dim = 32;
  c.model.encoder.depth = 2;
  c.model.encoder.num_heads = 4;
  c.model.head.hidden = {64};
}

RunConfig parse_config(std::string_view text, bool desk_scale) {
  std::vector<std::tuple<int, std::string, std::string>> entries;
  std::istringstream in{std::string(text)};
  std::string line;
  for (int no = 1; std::getline(in, line); ++no) {
    const auto hash = line.find('#');
    const std::string body = trim(std::string_view(line).substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(no) + ": expected key = value");
    std::string key = trim(std::string_view(body).substr(0, eq));
    std::string value = trim(std::string_view(body).substr(eq + 1));
    try {
      find_key(key);  // reject unknown keys up front
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(no) + ": " + e.what());
    }
    if (key == "train.desk_scale" && parse_bool(value)) desk_scale = true;
    entries.emplace_back(no, std::move(key), std::move(value));
  }
  RunConfig cfg;
  if (desk_scale) apply_desk_preset(cfg);
  for (const auto& [no, key, value] : entries) {
    try {
      find_key(key).set(cfg, value);
    } catch (const Error& e) {
      throw ConfigError("line " + std::to_string(no) + " (" + key + "): " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

std::string serialize_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& k : keys()) out += std::string(k.name) + " = " + k.get(cfg) + "\n";
  return out;
}

std::string config_fingerprint(const RunConfig& cfg) {
  const std::string s = serialize_config(cfg);
  return hex64(fnv1a(s.data(), s.size()));
}

void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value) { find_key(key).set(cfg, value); }
std::string get_config_value(const RunConfig& cfg, std::string_view key) { return find_key(key).get(cfg); }

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& k : keys()) out.emplace_back(k.name);
  return out;
}

Model build_model(const RunConfig& cfg) {
  cfg.validate();
  ModelConfig m = cfg.model;
  if (cfg.views.global_size != m.base_grid * m.encoder.patch_size)
    throw ConfigError("global crops must cover exactly base_grid x base_grid patches");
  return Model(m);
}

}  // namespace mmdino
