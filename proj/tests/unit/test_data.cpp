#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "fixtures.hpp"
#include "mmdino/data.hpp"
#include "mmdino/eval.hpp"

using namespace mmdino;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("mmdino_test_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// Probe on pooled pixels of the given modalities; internal-test MCC.
double pixel_probe_mcc(const Dataset& ds, const ViewConfig& views, const std::vector<int>& modalities) {
  const auto train = labeled(ds, Split::train), test = labeled(ds, Split::test_internal);
  const auto probe = LinearProbe::fit(testing::pooled_pixels(train, views, modalities), labels_of(train));
  return compute_mcc(labels_of(test), probe.predict(testing::pooled_pixels(test, views, modalities)));
}

}  // namespace

TEST_SUITE("data") {
  TEST_CASE("empty manifest loads as an empty dataset") {
    TempDir dir("empty");
    std::ofstream(dir.path / "manifest") << "  \n";
    CHECK(load_dataset(dir.path).subjects.empty());
  }

  TEST_CASE("missing files are reported by name") {
    TempDir dir("missing");
    CHECK_THROWS_AS(load_dataset(dir.path), DataError);
    auto spec = testing::small_synth(10);
    synth_generate(spec, dir.path);
    const fs::path victim = dir.path / "subjects" / "s00003" / "T2w.f32";
    REQUIRE(fs::exists(victim));
    fs::remove(victim);
    try {
      load_dataset(dir.path);
      FAIL("expected a DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("T2w.f32") != std::string::npos);
    }
    // truncated array
    std::ofstream(victim, std::ios::binary) << "abc";
    CHECK_THROWS_WITH_AS(load_dataset(dir.path), doctest::Contains("T2w.f32"), DataError);
  }

  TEST_CASE("write and load round trip") {
    TempDir dir("roundtrip");
    const Dataset a = synth_generate(testing::small_synth(20), dir.path);
    const Dataset b = load_dataset(dir.path);
    REQUIRE(a.subjects.size() == b.subjects.size());
    CHECK(a.modalities.names == b.modalities.names);
    for (size_t i = 0; i < a.subjects.size(); ++i) {
      const auto &x = a.subjects[i], &y = b.subjects[i];
      CHECK(x.id == y.id);
      CHECK(x.label == y.label);
      CHECK(x.split == y.split);
      CHECK(x.tumor_mask == y.tumor_mask);
      CHECK(x.modalities == y.modalities);
    }
  }

  TEST_CASE("generator invariants") {
    auto spec = testing::small_synth(200, 3);
    spec.prevalence = {0.5, 0.3, 0.2};
    spec.labeled_fraction = 0.5;
    const Dataset ds = synth_dataset(spec);
    CHECK(ds.subjects.size() == 240);

    std::set<std::string> ids;
    std::array<int, 3> counts{};
    int internal = 0, train = 0, train_labeled = 0;
    for (const auto& r : ds.subjects) {
      CHECK(ids.insert(r.id).second);  // disjoint splits: every subject appears once
      r.validate(4);
      CHECK(r.tumor_pixels() >= 500);
      for (const auto& m : r.modalities) CHECK(m.has_value());
      if (r.split == Split::test_external) {
        CHECK(r.id[0] == 'x');
        continue;
      }
      ++internal;
      if (r.split == Split::train) {
        ++train;
        train_labeled += r.label.has_value();
      } else {
        CHECK(r.label.has_value());
      }
    }
    CHECK(internal == 200);
    CHECK(train == 140);
    CHECK(train_labeled == doctest::Approx(70).epsilon(0.03));
    // prevalence among labeled internal subjects, within 3 points
    int n_lab = 0;
    for (const auto& r : ds.subjects)
      if (r.split != Split::test_external && r.label) ++counts[*r.label], ++n_lab;
    for (int k = 0; k < 3; ++k) CHECK(std::abs(counts[k] / double(n_lab) - spec.prevalence[k]) <= 0.03);

    // same seed, same cohort; another seed, another cohort
    CHECK(synth_dataset(spec).subjects[5].modalities == ds.subjects[5].modalities);
    spec.seed = 4;
    CHECK(synth_dataset(spec).subjects[5].modalities != ds.subjects[5].modalities);
  }

  TEST_CASE("single-class prevalence and bad specs") {
    auto spec = testing::small_synth(30);
    spec.prevalence = {1, 0, 0};
    for (const auto& r : synth_dataset(spec).subjects)
      if (r.label) CHECK(*r.label == 0);
    spec.image_size = 40;
    CHECK_THROWS_AS(synth_dataset(spec), DataError);
    spec.image_size = 96;
    spec.prevalence = {0.5, 0.5, 0.5};
    CHECK_THROWS_AS(synth_dataset(spec), ConfigError);
  }

  TEST_CASE("zscore") {
    Image img(4, 4);
    for (size_t i = 0; i < img.size(); ++i) img.data[i] = static_cast<float>(i * i);
    const Image z = zscore(img);
    double s = 0, sq = 0;
    for (float v : z.data) s += v, sq += v * v;
    CHECK(s / 16 == doctest::Approx(0).scale(1));
    CHECK(sq / 16 == doctest::Approx(1).epsilon(1e-5));
    const Image flat = zscore(Image(3, 3, 2.f));
    for (float v : flat.data) CHECK(v == 0.f);
  }

  TEST_CASE("training views") {
    ViewConfig cfg;
    cfg.n_local = 4;
    SubjectRecord small = testing::blob_record(96, 10);
    std::mt19937_64 rng(1);
    CHECK_THROWS_AS(sample_training_view(small, cfg, rng), PreconditionError);

    SubjectRecord r = testing::blob_record(96, 16);
    for (int m = 1; m < 4; ++m) r.modalities[m] = r.modalities[0];
    std::mt19937_64 a(9), b(9);
    const CropSet x = sample_training_view(r, cfg, a), y = sample_training_view(r, cfg, b);
    REQUIRE(x.global_crops.size() == 2);
    REQUIRE(x.local_crops.size() == 4);
    for (size_t i = 0; i < 2; ++i) CHECK(x.global_crops[i].images == y.global_crops[i].images);
    for (const auto& c : x.global_crops) {
      CHECK(r.tumor_mask.at(c.center_row, c.center_col));
      CHECK(c.scale >= 0.5);
      CHECK(c.scale <= 1.0);
      CHECK(c.images[0]->rows == 98);
      // one geometry for every modality
      for (int m = 1; m < 4; ++m) CHECK(*c.images[m] == *c.images[0]);
    }
    for (const auto& c : x.local_crops) {
      CHECK(r.tumor_mask.at(c.center_row, c.center_col));
      CHECK(c.scale <= 0.5);
      CHECK(c.images[0]->rows == 56);
    }
  }

  TEST_CASE("crops are centered on their reported pixel") {
    // A single bright pixel at the crop center lands in the middle of the
    // output for an odd-sized crop taken at scale 1 on a same-sized window.
    SubjectRecord r = testing::blob_record(96, 16);
    ViewConfig cfg;
    cfg.global_size = 97;
    cfg.window = 97;
    cfg.n_local = 0;
    cfg.global_scale_min = cfg.global_scale_max = 1.0;
    cfg.kernel = InterpolationKernel::bilinear;
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 5; ++trial) {
      for (auto& m : r.modalities) m = Image(96, 96, 0.f);
      const CropSet probe = sample_training_view(r, cfg, rng);
      const auto& c0 = probe.global_crops[0];
      // rerun with the marker at the sampled center and the same draw
      for (auto& m : r.modalities) m->at(c0.center_row, c0.center_col) = 1000.f;
      std::mt19937_64 replay(3);
      for (int t = 0; t < trial; ++t) sample_training_view(r, cfg, replay);
      const CropSet view = sample_training_view(r, cfg, replay);
      const auto& c = view.global_crops[0];
      REQUIRE(c.center_row == c0.center_row);
      const Image& img = *c.images[2];
      int best = 0;
      for (int i = 1; i < static_cast<int>(img.size()); ++i)
        if (img.data[i] > img.data[best]) best = i;
      CHECK(best / img.cols == 48);
      CHECK(best % img.cols == 48);
    }
  }

  TEST_CASE("evaluation view") {
    SubjectRecord r = testing::blob_record(96, 16, 5);
    ViewConfig cfg;
    const Crop a = eval_view(r, cfg), b = eval_view(r, cfg);
    CHECK(a.images == b.images);
    CHECK(r.tumor_mask.at(a.center_row, a.center_col));
    // 96-pixel window over a 96-pixel image: the view is the bicubic resize
    // of the z-scored slice.
    for (int m = 0; m < 4; ++m) {
      const auto ref = testing::reference_bicubic(zscore(*r.modalities[m]), 98, 98);
      double err = 0;
      for (size_t i = 0; i < ref.size(); ++i) err = std::max(err, std::abs(ref[i] - a.images[m]->data[i]));
      CHECK(err < 1e-4);
    }
    r.tumor_mask = BinaryMask(96, 96);
    CHECK_THROWS_AS(eval_view(r, cfg), PreconditionError);
  }

  TEST_CASE("class evidence lives where the generator puts it") {
    // Without redundancy and with every feature routed to FLAIR, only FLAIR
    // pixels separate the classes.
    auto spec = testing::small_synth(450, 21);
    spec.n_external = 0;
    spec.prevalence = {1.0 / 3, 1.0 / 3, 1.0 / 3};
    spec.labeled_fraction = 1.0;
    spec.split_fractions = {0.6, 0.0, 0.4};
    spec.redundancy = 0.0;
    spec.evidence_modality = 3;
    const Dataset ds = synth_dataset(spec);
    const ViewConfig views;
    const double flair = pixel_probe_mcc(ds, views, {3});
    MESSAGE("FLAIR-only pixel probe MCC " << flair);
    CHECK(flair > 0.9);
    for (int m = 0; m < 3; ++m) {
      const double other = pixel_probe_mcc(ds, views, {m});
      MESSAGE(ds.modalities.names[m] << "-only pixel probe MCC " << other);
      CHECK(other <= 0.45);
    }
  }
}
