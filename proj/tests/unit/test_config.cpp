#include <doctest.h>

#include <set>

#include "fixtures.hpp"
#include "mmdino/config.hpp"
#include "mmdino/experiment.hpp"

using namespace mmdino;

TEST_SUITE("config") {
  TEST_CASE("serialize and parse round trip") {
    RunConfig c = testing::tiny_run_config();
    c.masking.modality_mask_prob = 0.35;
    c.synth.evidence_modality = 2;
    c.synth.split_fractions = {0.6, 0.2, 0.2};
    c.eval.missing_mode = MissingMode::mask;
    c.model.tokenizer.pos_mode = PositionMode::global_concat;
    const std::string text = serialize_config(c);
    const RunConfig d = parse_config(text);
    CHECK(serialize_config(d) == text);
    CHECK(config_fingerprint(d) == config_fingerprint(c));
    for (const auto& key : config_keys()) CHECK(get_config_value(d, key) == get_config_value(c, key));
    CHECK(d.synth.evidence_modality == std::optional<int>(2));
    CHECK(d.model.encoder.embed_dim == 16);
  }

  TEST_CASE("comments, defaults and errors") {
    const RunConfig c = parse_config("# a comment\n\ntrain.epochs = 17   # trailing\nmodel.depth=3\n");
    CHECK(c.train.epochs == 17);
    CHECK(c.model.encoder.depth == 3);
    CHECK(c.train.batch_size == RunConfig{}.train.batch_size);
    CHECK_THROWS_WITH_AS(parse_config("train.epochs = 3\nbogus.key = 1\n"), doctest::Contains("line 2"), ConfigError);
    CHECK_THROWS_AS(parse_config("train.epochs = many\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("train.epochs\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("mask.ratio_min = 0.9\nmask.ratio_max = 0.1\n"), ConfigError);
    RunConfig r;
    CHECK_THROWS_AS(set_config_value(r, "model.pos_mode", "sideways"), ConfigError);
  }

  TEST_CASE("desk preset") {
    const RunConfig a = parse_config("", true);
    CHECK(a.train.desk_scale);
    CHECK(a.train.epochs == 30);
    CHECK(a.train.batch_size == 32);
    CHECK(a.views.n_local == 4);
    // the text can turn the preset on, explicit keys still win
    const RunConfig b = parse_config("train.desk_scale = true\ntrain.epochs = 12\n");
    CHECK(b.train.batch_size == 32);
    CHECK(b.train.epochs == 12);
    CHECK_NOTHROW(build_model(a));
  }

  TEST_CASE("fingerprints") {
    RunConfig a;
    const std::string fa = config_fingerprint(a);
    CHECK(fa.size() == 16);
    CHECK(config_fingerprint(a) == fa);
    a.train.seed = 1;
    CHECK(config_fingerprint(a) != fa);
  }

  TEST_CASE("model geometry is checked") {
    RunConfig c;
    c.views.global_size = 100;
    CHECK_THROWS_AS(build_model(c), ConfigError);
  }

  TEST_CASE("ablation configurations") {
    RunConfig base;
    apply_desk_preset(base);
    const auto rows = ablation_configs(base);
    std::set<std::string> fps;
    for (const auto& r : rows) fps.insert(config_fingerprint(r));
    CHECK(fps.size() == 4);
    CHECK(rows[0].model.tokenizer.pos_mode == PositionMode::global_concat);
    CHECK_FALSE(rows[0].model.tokenizer.use_modality_embedding);
    CHECK(rows[0].masking.modality_mask_prob == 0.0);
    CHECK(rows[1].model.tokenizer.pos_mode == PositionMode::per_modality);
    CHECK_FALSE(rows[1].model.tokenizer.use_modality_embedding);
    CHECK(rows[2].model.tokenizer.use_modality_embedding);
    CHECK(rows[2].masking.modality_mask_prob == 0.0);
    CHECK(rows[3].masking.modality_mask_prob == base.masking.modality_mask_prob);
    // everything else is shared
    for (const auto& r : rows) {
      CHECK(r.train.epochs == base.train.epochs);
      CHECK(r.model.encoder.embed_dim == base.model.encoder.embed_dim);
    }
    CHECK(median({3, 1, 2}) == 2);
    CHECK(median({4, 1, 2, 3}) == 2.5);
  }
}
