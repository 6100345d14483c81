#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mmdino/common.hpp"
#include "mmdino/resample.hpp"
#include "mmdino/tokenizer.hpp"

namespace mmdino {

enum class Split { train, val, test_internal, test_external };

Split parse_split(std::string_view s);
std::string to_string(Split s);

struct SubjectRecord {
  std::string id;
  ModalityStack modalities;  // one slot per configured modality; nullopt = absent
  BinaryMask tumor_mask;
  std::optional<int> label;
  Split split = Split::train;

  void validate(int n_modalities) const;
  int tumor_pixels() const;
};

struct Dataset {
  ModalityConfig modalities;
  std::vector<SubjectRecord> subjects;

  std::vector<const SubjectRecord*> split(Split s) const;
};

// On-disk layout:
//   root/manifest                     UTF-8 JSON (see README)
//   root/subjects/<id>/<modality>.f32 row-major little-endian float32
//   root/subjects/<id>/mask.u8        row-major uint8, values 0/1
Dataset load_dataset(const std::filesystem::path& root);
void write_dataset(const std::filesystem::path& root, const Dataset& dataset);

struct SynthSpec {
  int n_subjects = 500;  // internal cohort (train + val + internal test)
  int n_external = -1;   // distribution-shifted external test set; -1 = 20% of n_subjects
  double labeled_fraction = 0.5;
  std::array<double, kNumClasses> prevalence{0.8, 0.1, 0.1};
  std::array<double, 3> split_fractions{0.7, 0.1, 0.2};  // train / val / internal test
  int image_size = 96;
  // 0: every class feature is rendered in one modality only; 1: each feature
  // also appears at full strength in a second modality.
  double redundancy = 1.0;
  // Route every class feature's primary rendering to this modality.
  std::optional<int> evidence_modality;
  double noise = 0.15;
  std::uint64_t seed = 0;

  void validate() const;
  int external_count() const { return n_external >= 0 ? n_external : (n_subjects + 2) / 5; }
};

// Generator for a BraTS-like stand-in cohort with the default four modalities.
Dataset synth_dataset(const SynthSpec& spec);
Dataset synth_generate(const SynthSpec& spec, const std::filesystem::path& out);

// Per-slice z-score (zero mean, unit variance over all pixels).
Image zscore(const Image& image);

struct ViewConfig {
  int window = 96;  // tumor-containing window the crops are drawn from
  int global_size = 98;
  int local_size = 56;
  int n_global = 2;
  int n_local = 8;
  double global_scale_min = 0.5, global_scale_max = 1.0;
  double local_scale_min = 0.2, local_scale_max = 0.5;
  int min_tumor_pixels = 500;
  InterpolationKernel kernel = InterpolationKernel::bicubic;
};

struct Crop {
  ModalityStack images;
  double scale = 1.0;  // fraction of the window area
  int center_row = 0;  // source pixel the crop is centered on
  int center_col = 0;
  bool global = true;
};

struct CropSet {
  std::vector<Crop> global_crops;
  std::vector<Crop> local_crops;
};

// Multi-crop training view. Every crop is centered on a tumor pixel and uses
// the same geometry for all modalities.
CropSet sample_training_view(const SubjectRecord& record, const ViewConfig& cfg, std::mt19937_64& rng);

// Deterministic evaluation view: a window around the tumor pixel nearest to
// the tumor centroid, resized to the global crop size.
Crop eval_view(const SubjectRecord& record, const ViewConfig& cfg);

}  // namespace mmdino
