#include "mmdino/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace mmdino {

namespace fs = std::filesystem;
using json = nlohmann::json;

Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test_internal") return Split::test_internal;
  if (s == "test_external") return Split::test_external;
  throw DataError("unknown split: " + std::string(s));
}

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test_internal: return "test_internal";
    case Split::test_external: return "test_external";
  }
  return "?";
}

void SubjectRecord::validate(int n_modalities) const {
  if (static_cast<int>(modalities.size()) != n_modalities)
    throw DataError(id + ": expected " + std::to_string(n_modalities) + " modality slots");
  for (const auto& m : modalities)
    if (m && !m->same_shape(Image(tumor_mask.rows, tumor_mask.cols)))
      throw DataError(id + ": modality and mask dimensions differ");
  for (auto v : tumor_mask.data)
    if (v > 1) throw DataError(id + ": tumor mask is not binary");
  if (label && (*label < 0 || *label >= kNumClasses)) throw DataError(id + ": unknown label " + std::to_string(*label));
}

int SubjectRecord::tumor_pixels() const {
  return static_cast<int>(std::count(tumor_mask.data.begin(), tumor_mask.data.end(), std::uint8_t{1}));
}

std::vector<const SubjectRecord*> Dataset::split(Split s) const {
  std::vector<const SubjectRecord*> out;
  for (const auto& r : subjects)
    if (r.split == s) out.push_back(&r);
  return out;
}

// ---------------------------------------------------------------- raw arrays

namespace {

template <class T>
std::vector<T> read_array(const fs::path& path, size_t count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open array file " + path.string());
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<size_t>(in.tellg());
  if (bytes != count * sizeof(T))
    throw DataError(path.string() + ": holds " + std::to_string(bytes) + " bytes, manifest shape needs " +
                    std::to_string(count * sizeof(T)));
  in.seekg(0);
  std::vector<T> v(count);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(bytes));
  if constexpr (sizeof(T) > 1 && std::endian::native == std::endian::big) {
    for (auto& x : v) {
      auto* b = reinterpret_cast<unsigned char*>(&x);
      std::reverse(b, b + sizeof(T));
    }
  }
  return v;
}

template <class T>
void write_array(const fs::path& path, const std::vector<T>& v) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  if constexpr (sizeof(T) > 1 && std::endian::native == std::endian::big) {
    std::vector<T> copy = v;
    for (auto& x : copy) {
      auto* b = reinterpret_cast<unsigned char*>(&x);
      std::reverse(b, b + sizeof(T));
    }
    out.write(reinterpret_cast<const char*>(copy.data()), static_cast<std::streamsize>(copy.size() * sizeof(T)));
  } else {
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(T)));
  }
}

}  // namespace

Dataset load_dataset(const fs::path& root) {
  const fs::path manifest_path = root / "manifest";
  std::ifstream in(manifest_path);
  if (!in) throw DataError("missing manifest: " + manifest_path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  Dataset ds;
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) return ds;  // empty manifest

  json m;
  try {
    m = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError("manifest is not valid JSON: " + std::string(e.what()));
  }
  try {
    if (m.contains("modalities")) ds.modalities.names = m.at("modalities").get<std::vector<std::string>>();
    ds.modalities.validate();
    for (const auto& s : m.value("subjects", json::array())) {
      SubjectRecord r;
      r.id = s.at("id").get<std::string>();
      r.split = parse_split(s.at("split").get<std::string>());
      if (s.contains("label") && !s.at("label").is_null()) {
        const int label = s.at("label").get<int>();
        if (label < 0 || label >= kNumClasses) throw DataError(r.id + ": unknown label " + std::to_string(label));
        r.label = label;
      }
      const int rows = s.at("rows").get<int>();
      const int cols = s.at("cols").get<int>();
      if (rows < 1 || cols < 1) throw DataError(r.id + ": non-positive shape");
      const size_t n = static_cast<size_t>(rows) * cols;
      r.modalities.resize(ds.modalities.size());
      for (const auto& [name, rel] : s.at("modalities").items()) {
        int idx = -1;
        try {
          idx = ds.modalities.index_of(name);
        } catch (const ConfigError&) {
          throw DataError(r.id + ": unknown modality " + name);
        }
        Image img(rows, cols);
        img.data = read_array<float>(root / rel.get<std::string>(), n);
        r.modalities[idx] = std::move(img);
      }
      r.tumor_mask = BinaryMask(rows, cols);
      r.tumor_mask.data = read_array<std::uint8_t>(root / s.at("mask").get<std::string>(), n);
      r.validate(ds.modalities.size());
      ds.subjects.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw DataError("malformed manifest entry: " + std::string(e.what()));
  }
  return ds;
}

void write_dataset(const fs::path& root, const Dataset& ds) {
  fs::create_directories(root / "subjects");
  json subjects = json::array();
  for (const auto& r : ds.subjects) {
    r.validate(ds.modalities.size());
    const fs::path dir = fs::path("subjects") / r.id;
    fs::create_directories(root / dir);
    json mods = json::object();
    for (int m = 0; m < ds.modalities.size(); ++m) {
      if (!r.modalities[m]) continue;
      const fs::path rel = dir / (ds.modalities.names[m] + ".f32");
      write_array(root / rel, r.modalities[m]->data);
      mods[ds.modalities.names[m]] = rel.generic_string();
    }
    const fs::path mask_rel = dir / "mask.u8";
    write_array(root / mask_rel, r.tumor_mask.data);
    subjects.push_back({{"id", r.id},
                        {"split", to_string(r.split)},
                        {"label", r.label ? json(*r.label) : json(nullptr)},
                        {"rows", r.tumor_mask.rows},
                        {"cols", r.tumor_mask.cols},
                        {"modalities", mods},
                        {"mask", mask_rel.generic_string()}});
  }
  json manifest = {{"format", "mmdino-dataset"}, {"version", 1}, {"modalities", ds.modalities.names}, {"subjects", subjects}};
  std::ofstream out(root / "manifest");
  if (!out) throw DataError("cannot write manifest under " + root.string());
  out << manifest.dump(1) << '\n';
}

// ---------------------------------------------------------------- synthetic cohort

void SynthSpec::validate() const {
  if (n_subjects < 0 || n_external < -1) throw ConfigError("subject counts must be non-negative");
  if (!(labeled_fraction >= 0 && labeled_fraction <= 1)) throw ConfigError("labeled fraction must lie in [0, 1]");
  double sum = 0;
  for (double p : prevalence) {
    if (!(p >= 0)) throw ConfigError("prevalence entries must be non-negative");
    sum += p;
  }
  if (std::abs(sum - 1) > 1e-6) throw ConfigError("prevalence must sum to 1");
  double fsum = 0;
  for (double f : split_fractions) {
    if (!(f >= 0)) throw ConfigError("split fractions must be non-negative");
    fsum += f;
  }
  if (std::abs(fsum - 1) > 1e-6) throw ConfigError("split fractions must sum to 1");
  if (!(redundancy >= 0 && redundancy <= 1)) throw ConfigError("redundancy must lie in [0, 1]");
  if (evidence_modality && (*evidence_modality < 0 || *evidence_modality > 3))
    throw ConfigError("evidence modality must index one of the 4 modalities");
  if (!(noise >= 0)) throw ConfigError("noise must be non-negative");
  // A tumor of radius 13 (about 530 pixels) plus its placement jitter must fit.
  if (image_size < 48) throw DataError("image_size " + std::to_string(image_size) + " is too small for a 500-pixel tumor");
}

namespace {

constexpr int kT1w = 0, kT1ce = 1, kT2w = 2, kFlair = 3;

// Largest-remainder rounding of n * weights.
std::vector<int> apportion(int n, const std::vector<double>& w) {
  std::vector<int> counts(w.size());
  std::vector<std::pair<double, size_t>> rem;
  int used = 0;
  for (size_t i = 0; i < w.size(); ++i) {
    const double exact = n * w[i];
    counts[i] = static_cast<int>(std::floor(exact));
    used += counts[i];
    rem.emplace_back(exact - counts[i], i);
  }
  std::stable_sort(rem.begin(), rem.end(), [](auto a, auto b) { return a.first > b.first; });
  for (int k = 0; used < n; ++k, ++used) counts[rem[k % rem.size()].second] += 1;
  return counts;
}

struct Feature {
  int primary;
  int secondary;
};

// Class evidence: enhancing rim (gbm), bright textured core (oligo), and
// edema extent (wide for gbm).
constexpr Feature kRing{kT1ce, kFlair};
constexpr Feature kCore{kT2w, kT1w};
constexpr Feature kEdema{kFlair, kT2w};

struct SubjectPlan {
  int cls;
  Split split;
  bool labeled;
};

SubjectRecord render_subject(const SynthSpec& spec, const SubjectPlan& plan, const std::string& id, std::mt19937_64& rng) {
  const int S = spec.image_size;
  const bool external = plan.split == Split::test_external;
  std::uniform_real_distribution<double> U(0.0, 1.0);
  std::normal_distribution<double> N(0.0, 1.0);
  auto uni = [&](double a, double b) { return a + (b - a) * U(rng); };

  const double c = (S - 1) / 2.0;
  const double brain_ry = 0.46 * S, brain_rx = 0.40 * S;
  const std::array<double, 4> tissue{1.0, 0.8, 0.6, 0.7};
  const std::array<double, 4> tumor_base{-0.3, 0.1, 0.5, 0.4};

  // Low-frequency bias field per modality; the external site gets a
  // different spectrum, more noise and an intensity gain.
  struct Wave {
    double fy, fx, phase, amp;
  };
  std::array<std::vector<Wave>, 4> field;
  for (auto& f : field)
    for (int k = 0; k < 3; ++k) {
      const double lo = external ? 1.5 : 0.5, hi = external ? 3.0 : 1.5;
      f.push_back({uni(lo, hi) * (U(rng) < 0.5 ? -1 : 1), uni(lo, hi), uni(0, 2 * M_PI), uni(0.04, 0.1)});
    }
  const double gain = external ? 1.3 : 1.0;
  const double offset = external ? 0.2 : 0.0;
  const double noise = spec.noise * (external ? 1.5 : 1.0);

  // Tumor geometry; the centroid stays within 8 px of the image center.
  const double ty = c + uni(-8, 8), tx = c + uni(-8, 8);
  double ra = uni(14, 18), rb = uni(14, 18);
  const double theta = uni(0, M_PI);
  const double ct = std::cos(theta), st = std::sin(theta);
  auto rho = [&](int y, int x) {
    const double u = (y - ty) * ct + (x - tx) * st;
    const double v = -(y - ty) * st + (x - tx) * ct;
    return std::sqrt((u / ra) * (u / ra) + (v / rb) * (v / rb));
  };

  SubjectRecord r;
  r.id = id;
  r.split = plan.split;
  if (plan.labeled) r.label = plan.cls;
  r.tumor_mask = BinaryMask(S, S);
  for (;;) {
    int count = 0;
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x) count += (r.tumor_mask.at(y, x) = rho(y, x) <= 1.0 ? 1 : 0);
    if (count >= 500) break;
    ra *= 1.05;
    rb *= 1.05;
  }

  // Feature amplitudes: class strength times per-subject jitter.
  const bool gbm = plan.cls == static_cast<int>(GliomaClass::gbm);
  const bool oligo = plan.cls == static_cast<int>(GliomaClass::oligo);
  const double ring_amp = gbm ? uni(0.5, 1.5) : 0.0;
  const double core_amp = oligo ? uni(0.5, 1.5) : 0.0;
  const double edema_width = gbm ? uni(7, 12) : uni(1, 4);
  const double edema_amp = uni(0.4, 0.8);
  const double stripe_period = uni(3.5, 5.0);
  const double r_mean = 0.5 * (ra + rb);

  // weight[m][feature]: how strongly modality m renders each feature.
  std::array<std::array<double, 3>, 4> weight{};
  const Feature features[3] = {kRing, kCore, kEdema};
  for (int f = 0; f < 3; ++f) {
    const int primary = spec.evidence_modality ? *spec.evidence_modality : features[f].primary;
    weight[primary][f] = 1.0;
    if (features[f].secondary != primary)
      weight[features[f].secondary][f] = std::max(weight[features[f].secondary][f], spec.redundancy);
  }
  // Edema of a baseline width is class independent; only the gbm excess is
  // evidence, so non-evidence modalities draw a class-independent width.
  const double neutral_edema_width = uni(1, 4);

  r.modalities.assign(4, std::nullopt);
  for (int m = 0; m < 4; ++m) {
    Image img(S, S);
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x) {
        const double by = (y - c) / brain_ry, bx = (x - c) / brain_rx;
        const double brain = std::clamp((1.08 - std::sqrt(by * by + bx * bx)) / 0.08, 0.0, 1.0);
        double v = tissue[m] * brain;
        for (const auto& w : field[m]) v += w.amp * std::cos(2 * M_PI * (w.fy * y + w.fx * x) / S + w.phase);
        const double p = rho(y, x);
        if (p <= 1.0) {
          v += tumor_base[m];
          if (p > 0.7) v += weight[m][0] * ring_amp;
          if (p <= 0.45) v -= 0.5 * weight[m][0] * ring_amp;
          if (p <= 0.8) {
            const double u = (y - ty) * ct + (x - tx) * st;
            v += weight[m][1] * core_amp * (0.8 + 0.3 * std::sin(2 * M_PI * u / stripe_period));
          }
        } else {
          const double width = weight[m][2] > 0 ? weight[m][2] * edema_width + (1 - weight[m][2]) * neutral_edema_width
                                                : neutral_edema_width;
          const double reach = width / r_mean;
          if (p <= 1.0 + reach) v += edema_amp * (1.0 - (p - 1.0) / reach);
        }
        img.at(y, x) = static_cast<float>(gain * v + offset + noise * N(rng));
      }
    r.modalities[m] = std::move(img);
  }
  return r;
}

std::vector<SubjectPlan> plan_cohort(const SynthSpec& spec, std::mt19937_64& rng) {
  std::vector<SubjectPlan> plans;
  const std::vector<double> prev(spec.prevalence.begin(), spec.prevalence.end());
  const std::vector<double> fractions(spec.split_fractions.begin(), spec.split_fractions.end());
  const Split splits[3] = {Split::train, Split::val, Split::test_internal};

  // Internal cohort, stratified by class within each split; labels withheld
  // on a stratified (1 - labeled_fraction) share of training subjects.
  const auto class_counts = apportion(spec.n_subjects, prev);
  for (int cls = 0; cls < kNumClasses; ++cls) {
    const auto per_split = apportion(class_counts[cls], fractions);
    for (int s = 0; s < 3; ++s) {
      const int labeled = s == 0 ? static_cast<int>(std::lround(spec.labeled_fraction * per_split[s])) : per_split[s];
      for (int i = 0; i < per_split[s]; ++i) plans.push_back({cls, splits[s], i < labeled});
    }
  }
  const auto ext_counts = apportion(spec.external_count(), prev);
  for (int cls = 0; cls < kNumClasses; ++cls)
    for (int i = 0; i < ext_counts[cls]; ++i) plans.push_back({cls, Split::test_external, true});
  std::shuffle(plans.begin(), plans.end(), rng);
  return plans;
}

}  // namespace

Dataset synth_dataset(const SynthSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  const auto plans = plan_cohort(spec, rng);
  Dataset ds;
  ds.subjects.reserve(plans.size());
  int internal = 0, external = 0;
  for (size_t i = 0; i < plans.size(); ++i) {
    const bool ext = plans[i].split == Split::test_external;
    char id[16];
    std::snprintf(id, sizeof(id), "%s%05d", ext ? "x" : "s", ext ? external++ : internal++);
    std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                      static_cast<std::uint32_t>(i), 0x5eedu};
    std::mt19937_64 subject_rng(seq);
    ds.subjects.push_back(render_subject(spec, plans[i], id, subject_rng));
  }
  return ds;
}

Dataset synth_generate(const SynthSpec& spec, const fs::path& out) {
  Dataset ds = synth_dataset(spec);
  write_dataset(out, ds);
  return ds;
}

// ---------------------------------------------------------------- views

Image zscore(const Image& image) {
  double sum = 0, sq = 0;
  for (float v : image.data) sum += v;
  const double n = static_cast<double>(image.size());
  const double mean = n > 0 ? sum / n : 0.0;
  for (float v : image.data) sq += (v - mean) * (v - mean);
  double sd = n > 0 ? std::sqrt(sq / n) : 0.0;
  if (!(sd > 1e-12)) sd = 1.0;
  Image out(image.rows, image.cols);
  for (size_t i = 0; i < image.size(); ++i) out.data[i] = static_cast<float>((image.data[i] - mean) / sd);
  return out;
}

namespace {

ModalityStack zscored(const SubjectRecord& r) {
  ModalityStack z(r.modalities.size());
  for (size_t m = 0; m < r.modalities.size(); ++m)
    if (r.modalities[m]) z[m] = zscore(*r.modalities[m]);
  return z;
}

// Square crop of side `side` centered on pixel (cy, cx), resampled to out x out.
Crop render_crop(const ModalityStack& slices, int cy, int cx, double side, int out, InterpolationKernel kernel) {
  Crop crop;
  crop.center_row = cy;
  crop.center_col = cx;
  crop.images.resize(slices.size());
  const double top = cy - side / 2 + 0.5;
  const double left = cx - side / 2 + 0.5;
  for (size_t m = 0; m < slices.size(); ++m)
    if (slices[m]) crop.images[m] = resample(*slices[m], top, left, side, side, out, out, kernel);
  return crop;
}

int window_origin(int anchor, int size, int window, std::mt19937_64& rng) {
  if (size <= window) return -(window - size) / 2;
  const int lo = std::max(0, anchor - window + 1);
  const int hi = std::min(anchor, size - window);
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

}  // namespace

CropSet sample_training_view(const SubjectRecord& record, const ViewConfig& cfg, std::mt19937_64& rng) {
  const int tumor = record.tumor_pixels();
  if (tumor < cfg.min_tumor_pixels)
    throw PreconditionError(record.id + ": tumor mask has " + std::to_string(tumor) + " pixels, need at least " +
                            std::to_string(cfg.min_tumor_pixels));
  const auto& mask = record.tumor_mask;
  std::vector<std::pair<int, int>> positives;
  positives.reserve(tumor);
  for (int y = 0; y < mask.rows; ++y)
    for (int x = 0; x < mask.cols; ++x)
      if (mask.at(y, x)) positives.emplace_back(y, x);

  // Tumor-containing window, then tumor pixels inside it.
  const auto anchor = positives[std::uniform_int_distribution<size_t>(0, positives.size() - 1)(rng)];
  const int wy = window_origin(anchor.first, mask.rows, cfg.window, rng);
  const int wx = window_origin(anchor.second, mask.cols, cfg.window, rng);
  std::vector<std::pair<int, int>> centers;
  for (const auto& p : positives)
    if (p.first >= wy && p.first < wy + cfg.window && p.second >= wx && p.second < wx + cfg.window) centers.push_back(p);

  const ModalityStack slices = zscored(record);
  auto make = [&](double smin, double smax, int out, bool global) {
    const double scale = std::uniform_real_distribution<double>(smin, smax)(rng);
    const auto [cy, cx] = centers[std::uniform_int_distribution<size_t>(0, centers.size() - 1)(rng)];
    Crop crop = render_crop(slices, cy, cx, std::sqrt(scale) * cfg.window, out, cfg.kernel);
    crop.scale = scale;
    crop.global = global;
    return crop;
  };
  CropSet set;
  for (int i = 0; i < cfg.n_global; ++i)
    set.global_crops.push_back(make(cfg.global_scale_min, cfg.global_scale_max, cfg.global_size, true));
  for (int i = 0; i < cfg.n_local; ++i)
    set.local_crops.push_back(make(cfg.local_scale_min, cfg.local_scale_max, cfg.local_size, false));
  return set;
}

Crop eval_view(const SubjectRecord& record, const ViewConfig& cfg) {
  const auto& mask = record.tumor_mask;
  double sy = 0, sx = 0;
  int n = 0;
  for (int y = 0; y < mask.rows; ++y)
    for (int x = 0; x < mask.cols; ++x)
      if (mask.at(y, x)) sy += y, sx += x, ++n;
  if (n == 0) throw PreconditionError(record.id + ": empty tumor mask");
  sy /= n;
  sx /= n;
  int cy = 0, cx = 0;
  double best = 1e300;
  for (int y = 0; y < mask.rows; ++y)
    for (int x = 0; x < mask.cols; ++x)
      if (mask.at(y, x)) {
        const double d = (y - sy) * (y - sy) + (x - sx) * (x - sx);
        if (d < best) best = d, cy = y, cx = x;
      }

  // Integer window around the center, clamped into the image when it fits.
  auto origin = [&](int center, int size) {
    if (size <= cfg.window) return -(cfg.window - size) / 2;
    return std::clamp(center - cfg.window / 2, 0, size - cfg.window);
  };
  const int top = origin(cy, mask.rows);
  const int left = origin(cx, mask.cols);
  const ModalityStack slices = zscored(record);
  Crop crop;
  crop.center_row = cy;
  crop.center_col = cx;
  crop.images.resize(slices.size());
  for (size_t m = 0; m < slices.size(); ++m)
    if (slices[m])
      crop.images[m] = resample(*slices[m], top, left, cfg.window, cfg.window, cfg.global_size, cfg.global_size, cfg.kernel);
  return crop;
}

}  // namespace mmdino
