#include <doctest.h>

#include <cmath>
#include <map>
#include <random>

#include "fixtures.hpp"
#include "mmdino/eval.hpp"

using namespace mmdino;

namespace {

std::vector<int> random_labels(std::mt19937_64& rng, int n, int k = 3) {
  std::uniform_int_distribution<int> d(0, k - 1);
  std::vector<int> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

}  // namespace

TEST_SUITE("eval") {
  TEST_CASE("metrics agree with brute-force references") {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> u(0, 1);
    for (int inst = 0; inst < 100; ++inst) {
      const int n = 5 + inst % 30;
      const auto y = random_labels(rng, n);
      // mostly-correct predictions for half the instances, random otherwise
      std::vector<int> p = random_labels(rng, n);
      if (inst % 2)
        for (int i = 0; i < n; ++i)
          if (u(rng) < 0.7) p[i] = y[i];
      CHECK(std::abs(compute_mcc(y, p) - testing::reference_mcc(y, p)) <= 1e-9);
      for (int k = 0; k < 3; ++k) CHECK(std::abs(compute_f1(y, p, k).value - testing::reference_f1(y, p, k)) <= 1e-9);

      // scores with deliberate ties
      MatD s(n, 3);
      for (int i = 0; i < n; ++i)
        for (int k = 0; k < 3; ++k) s(i, k) = std::round(u(rng) * 8) / 8;
      double sum = 0;
      int used = 0;
      for (int k = 0; k < 3; ++k) {
        std::vector<double> col(n);
        for (int i = 0; i < n; ++i) col[i] = s(i, k);
        const double ref = testing::reference_auroc(y, col, k);
        if (std::isnan(ref)) continue;
        std::vector<int> pos(n);
        for (int i = 0; i < n; ++i) pos[i] = y[i] == k;
        CHECK(std::abs(binary_auroc(pos, col) - ref) <= 1e-9);
        sum += ref, ++used;
      }
      const double macro = compute_auroc(y, s);
      if (used)
        CHECK(std::abs(macro - sum / used) <= 1e-9);
      else
        CHECK(std::isnan(macro));
    }
  }

  TEST_CASE("degenerate conventions") {
    const std::vector<int> y{0, 1, 2, 1, 0};
    CHECK(compute_mcc(y, std::vector<int>(5, 1)) == 0.0);     // constant prediction
    CHECK(compute_mcc(std::vector<int>(5, 2), y) == 0.0);     // constant truth
    CHECK(compute_mcc(std::vector<int>(4, 0), std::vector<int>(4, 0)) == 0.0);
    CHECK(compute_mcc(y, y) == doctest::Approx(1.0));
    CHECK(compute_mcc(std::vector<int>{0, 1, 0, 1}, std::vector<int>{1, 0, 1, 0}) == doctest::Approx(-1.0));
    // class absent everywhere: F1 undefined, reported as 0
    const F1 f = compute_f1(std::vector<int>{0, 1, 0}, std::vector<int>{0, 1, 1}, 2);
    CHECK_FALSE(f.defined);
    CHECK(f.value == 0.0);
    // present but never hit
    const F1 g = compute_f1(std::vector<int>{0, 2, 0}, std::vector<int>{0, 1, 0}, 2);
    CHECK(g.defined);
    CHECK(g.value == 0.0);
    // tp 5, fp 1, fn 2 -> 10 / 13
    const std::vector<int> t{1, 1, 1, 1, 1, 1, 1, 0, 2};
    const std::vector<int> q{1, 1, 1, 1, 1, 0, 2, 1, 2};
    CHECK(compute_f1(t, q, 1).value == doctest::Approx(10.0 / 13));
    // AUROC with a single class in the truth
    MatD s = MatD::Constant(3, 3, 1.0 / 3);
    CHECK(std::isnan(compute_auroc(std::vector<int>{0, 0, 0}, s)));
    CHECK_THROWS_AS(compute_mcc(std::vector<int>{0, 1}, std::vector<int>{0}), ShapeError);
  }

  TEST_CASE("AUROC properties") {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> g(0, 1);
    const int n = 4000;
    std::vector<int> pos(n);
    std::vector<double> s(n), rev(n);
    for (int i = 0; i < n; ++i) {
      pos[i] = i % 3 == 0;
      s[i] = g(rng) + 0.8 * pos[i];
      rev[i] = -s[i];
    }
    const double a = binary_auroc(pos, s);
    CHECK(a + binary_auroc(pos, rev) == doctest::Approx(1.0));
    std::vector<double> noise(n);
    for (auto& v : noise) v = g(rng);
    CHECK(std::abs(binary_auroc(pos, noise) - 0.5) < 0.05);
    // Gaussian shift of 0.8: AUROC = Phi(0.8 / sqrt 2)
    CHECK(a == doctest::Approx(0.5 * std::erfc(-0.8 / 2.0)).epsilon(0.03));
  }

  TEST_CASE("probe on separable data") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g(0, 0.3);
    const int n = 150;
    MatD X(n, 4);
    std::vector<int> y(n);
    for (int i = 0; i < n; ++i) {
      y[i] = i % 3;
      for (int j = 0; j < 4; ++j) X(i, j) = g(rng) + (j == y[i] ? 3.0 : 0.0);
    }
    // a duplicated column must not break the Newton solve
    MatD Xd(n, 5);
    Xd << X, X.col(0);
    for (const MatD* m : {&X, &Xd}) {
      const auto probe = LinearProbe::fit(*m, y);
      CHECK(probe.predict(*m) == y);
      const MatD p = probe.predict_proba(*m);
      for (int i = 0; i < n; ++i) CHECK(p.row(i).sum() == doctest::Approx(1.0).epsilon(1e-9));
      CHECK(probe.iterations() < 200);
      CHECK(std::isfinite(probe.final_loss()));
    }
    std::vector<int> two(n);
    for (int i = 0; i < n; ++i) two[i] = i % 2;
    CHECK_THROWS_AS(LinearProbe::fit(X, two), PreconditionError);  // class 2 absent
    CHECK_THROWS_AS(LinearProbe::fit(X, std::vector<int>(3, 0)), ShapeError);
  }

  TEST_CASE("probe recovers the Bayes posterior of two Gaussians") {
    // x ~ N(+mu, I) for class 1 and N(-mu, I) for class 0 with equal priors:
    // P(1 | x) = sigmoid(2 mu.x)
    std::mt19937_64 rng(11);
    std::normal_distribution<double> g(0, 1);
    const Eigen::Vector2d mu(0.7, -0.4);
    const int n = 20000;
    MatD X(n, 2);
    std::vector<int> y(n);
    for (int i = 0; i < n; ++i) {
      y[i] = i % 2;
      const double sign = y[i] ? 1.0 : -1.0;
      for (int j = 0; j < 2; ++j) X(i, j) = sign * mu(j) + g(rng);
    }
    ProbeConfig cfg;
    cfg.l2 = 1e-8;
    const auto probe = LinearProbe::fit(X, y, cfg, 2);
    MatD T(5, 2);
    T << 0, 0, 1, 0, -1, 1, 0.5, 0.5, 2, -2;
    const MatD p = probe.predict_proba(T);
    for (int i = 0; i < 5; ++i) {
      const double oracle = 1 / (1 + std::exp(-2 * mu.dot(T.row(i).transpose())));
      CHECK(std::abs(p(i, 1) - oracle) < 0.02);
    }
  }

  TEST_CASE("missing-modality draws") {
    SubjectRecord r = testing::blob_record();
    std::map<int, int> freq;
    for (int i = 0; i < 4000; ++i) {
      r.id = "s" + std::to_string(i);
      const auto d = dropped_modality(r, 42);
      REQUIRE(d.has_value());
      CHECK(*d == *dropped_modality(r, 42));
      ++freq[*d];
    }
    for (int m = 0; m < 4; ++m) CHECK(std::abs(freq[m] / 4000.0 - 0.25) < 0.03);
    int differ = 0;
    for (int i = 0; i < 200; ++i) {
      r.id = "s" + std::to_string(i);
      differ += *dropped_modality(r, 1) != *dropped_modality(r, 2);
    }
    CHECK(differ > 100);
    // only present modalities can be dropped
    r.modalities[1].reset();
    for (int i = 0; i < 200; ++i) {
      r.id = "t" + std::to_string(i);
      CHECK(*dropped_modality(r, 5) != 1);
    }
    r.modalities[0].reset();
    r.modalities[2].reset();
    CHECK_FALSE(dropped_modality(r, 5).has_value());
  }

  TEST_CASE("feature extraction") {
    const Model model(testing::tiny_model_config(16));
    const auto params = model.init_params(1);
    std::vector<SubjectRecord> recs;
    for (int i = 0; i < 5; ++i) {
      recs.push_back(testing::blob_record(96, 16, 100 + i));
      recs.back().id = "r" + std::to_string(i);
    }
    std::vector<const SubjectRecord*> ptrs;
    for (const auto& r : recs) ptrs.push_back(&r);
    const ViewConfig views;
    const MatD a = extract_features(model, params, ptrs, views);
    CHECK(a.rows() == 5);
    CHECK(a.cols() == 16);
    CHECK(a == extract_features(model, params, ptrs, views));
    // rows do not depend on batch composition
    const std::vector<const SubjectRecord*> one{ptrs[3]};
    CHECK((extract_features(model, params, one, views).row(0) - a.row(3)).cwiseAbs().maxCoeff() < 1e-6);

    const MissingSpec removed{9, MissingMode::remove}, masked{9, MissingMode::mask};
    const MatD r = extract_features(model, params, ptrs, views, &removed);
    const MatD m = extract_features(model, params, ptrs, views, &masked);
    CHECK(r == extract_features(model, params, ptrs, views, &removed));
    CHECK((r - a).cwiseAbs().maxCoeff() > 1e-6);
    CHECK((r - m).cwiseAbs().maxCoeff() > 1e-6);
  }

  TEST_CASE("report invariants") {
    std::mt19937_64 rng(5);
    const auto y = random_labels(rng, 40);
    MatD probs(40, 3);
    std::uniform_real_distribution<double> u(0.1, 1);
    for (int i = 0; i < 40; ++i) {
      for (int k = 0; k < 3; ++k) probs(i, k) = u(rng);
      probs.row(i) /= probs.row(i).sum();
    }
    EvalReport r = make_report("internal", y, probs, "abc");
    CHECK_NOTHROW(r.validate());
    CHECK(r.n == 40);
    CHECK(r.fingerprint == "abc");
    r.confusion[0][0] += 1;
    CHECK_THROWS_AS(r.validate(), Error);
    r.confusion[0][0] -= 1;
    r.mcc = 1.5;
    CHECK_THROWS_AS(r.validate(), Error);
  }

  TEST_CASE("evaluation end to end") {
    const Dataset ds = synth_dataset(testing::small_synth(60, 5));
    const Model model(testing::tiny_model_config(16));
    const ModelState state = ModelState::initialize(model, 1);
    const ViewConfig views;
    const auto ev = evaluate_model(model, state, ds, views, {}, "fp");
    CHECK(ev.internal.n == static_cast<int>(labeled(ds, Split::test_internal).size()));
    REQUIRE(ev.external.has_value());
    CHECK(ev.external->split == "external");
    CHECK_NOTHROW(ev.internal.validate());
    const MissingSpec miss{3, MissingMode::remove};
    const auto dropped = evaluate_model(model, state, ds, views, {}, "fp", &miss);
    CHECK(dropped.internal.missing_seed == std::optional<std::uint64_t>(3));
    // the probe itself is fit on complete inputs either way
    CHECK(dropped.probe.weights() == ev.probe.weights());
  }
}
