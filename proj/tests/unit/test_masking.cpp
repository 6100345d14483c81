#include <doctest.h>

#include <set>

#include "fixtures.hpp"
#include "mmdino/masking.hpp"
#include "mmdino/model.hpp"

using namespace mmdino;

namespace {

std::vector<TokenCoord> coords_for(int modalities, int cells_side = 7) {
  std::vector<TokenCoord> c;
  for (int m = 0; m < modalities; ++m)
    for (int r = 0; r < cells_side; ++r)
      for (int k = 0; k < cells_side; ++k) c.push_back({m, r, k});
  return c;
}

}  // namespace

TEST_SUITE("masking") {
  TEST_CASE("random masking flags round(ratio * T) tokens") {
    const auto coords = coords_for(4);  // T = 196
    MaskingPolicy p;
    p.modality_mask_prob = 0;
    p.sample_fraction = 1;
    p.ratio_min = p.ratio_max = 0.3;
    std::mt19937_64 rng(1);
    for (int i = 0; i < 20; ++i) {
      const MaskPlan plan = sample_plan(coords, p, rng);
      CHECK(plan.kind == MaskKind::random_patch);
      CHECK(plan.count() == 59);  // round(0.3 * 196) = round(58.8)
    }
    p.ratio_min = 0.1;
    p.ratio_max = 0.5;
    for (int i = 0; i < 200; ++i) {
      const int n = sample_plan(coords, p, rng).count();
      CHECK(n >= 20);  // round(0.1 * 196)
      CHECK(n <= 98);
    }
  }

  TEST_CASE("full-modality masking flags exactly one modality") {
    const auto coords = coords_for(4);
    MaskingPolicy p;
    p.modality_mask_prob = 1;
    std::mt19937_64 rng(2);
    std::set<int> seen;
    for (int i = 0; i < 100; ++i) {
      const MaskPlan plan = sample_plan(coords, p, rng);
      REQUIRE(plan.kind == MaskKind::full_modality);
      REQUIRE(plan.masked_modality.has_value());
      seen.insert(*plan.masked_modality);
      for (size_t t = 0; t < coords.size(); ++t) CHECK(plan.flags[t] == (coords[t].modality == *plan.masked_modality));
    }
    CHECK(seen.size() == 4);
  }

  TEST_CASE("policy frequencies") {
    const auto coords = coords_for(4);
    MaskingPolicy p;  // 0.2 full modality, then 0.5 random
    std::mt19937_64 rng(3);
    int full = 0, random = 0, none = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) switch (sample_plan(coords, p, rng).kind) {
        case MaskKind::full_modality: ++full; break;
        case MaskKind::random_patch: ++random; break;
        case MaskKind::none: ++none; break;
      }
    CHECK(full / double(n) == doctest::Approx(0.2).epsilon(0.1));
    CHECK(random / double(n) == doctest::Approx(0.4).epsilon(0.1));
    CHECK(none / double(n) == doctest::Approx(0.4).epsilon(0.1));
  }

  TEST_CASE("a lone modality is never fully masked") {
    const auto coords = coords_for(1);
    MaskingPolicy p;
    p.modality_mask_prob = 1;
    std::mt19937_64 rng(4);
    for (int i = 0; i < 50; ++i) CHECK(sample_plan(coords, p, rng).kind != MaskKind::full_modality);
  }

  TEST_CASE("apply_plan swaps flagged rows for mask token plus context") {
    const Model model(testing::tiny_model_config(8));
    auto params = model.init_params(1);
    // give the mask token a recognizable value
    auto mask = model.layout().vec(std::span<Real>(params), model.layout().find("embed.mask"));
    mask.setConstant(0.5);
    ModalityStack stack(4);
    for (auto& s : stack) s = Image(56, 56, 1.0f);
    const auto crop = model.tokenizer().tokenize(stack, model.tables(params));
    const MaskPlan plan = full_modality_plan(crop.coords, 1);
    const auto masked = apply_plan(crop, plan, model.tables(params).mask_token);
    for (int t = 0; t < crop.tokens(); ++t) {
      if (plan.flags[t]) {
        const RowVec expect = mask.transpose() + crop.context.row(t + 1);
        CHECK((masked.embeddings.row(t + 1) - expect).cwiseAbs().maxCoeff() < 1e-6);
      } else {
        CHECK(masked.embeddings.row(t + 1) == crop.embeddings.row(t + 1));
      }
    }
    CHECK(masked.embeddings.row(0) == crop.embeddings.row(0));
  }

  TEST_CASE("drop_modality preconditions") {
    const Model model(testing::tiny_model_config(8));
    const auto params = model.init_params(1);
    ModalityStack stack(4);
    stack[0] = Image(56, 56, 1.0f);
    stack[2] = Image(56, 56, 2.0f);
    const auto crop = model.tokenizer().tokenize(stack, model.tables(params));
    CHECK_THROWS_AS(drop_modality(crop, 1), PreconditionError);
    const auto one = drop_modality(crop, 0);
    CHECK(one.present_modalities == std::vector<int>{2});
    CHECK(one.tokens() == 16);
    CHECK_THROWS_AS(drop_modality(one, 2), PreconditionError);
  }

  TEST_CASE("invalid policies are rejected") {
    MaskingPolicy p;
    p.ratio_min = 0.6;
    CHECK_THROWS_AS(p.validate(), ConfigError);
    p = {};
    p.modality_mask_prob = 1.5;
    CHECK_THROWS_AS(p.validate(), ConfigError);
  }
}
