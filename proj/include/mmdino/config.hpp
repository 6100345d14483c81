#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "mmdino/data.hpp"
#include "mmdino/eval.hpp"
#include "mmdino/masking.hpp"
#include "mmdino/model.hpp"
#include "mmdino/trainer.hpp"

namespace mmdino {

// Everything a run depends on. Serialized verbatim into every output
// directory; the fingerprint covers all of it.
struct RunConfig {
  ModelConfig model;
  MaskingPolicy masking;
  ViewConfig views;
  TrainConfig train;
  SynthSpec synth;
  EvalConfig eval;

  void validate() const;
};

// Small-model, short-schedule preset sized for a single CPU core: 30
// epochs, batch 32, 4 local crops.
void apply_desk_preset(RunConfig& cfg);

// Config text: one `key = value` per line, `#` starts a comment, blank lines
// ignored. Lists are comma separated. Unknown keys and malformed values are
// ConfigErrors naming the line. Keys not given keep their defaults (or the
// desk preset's, when `desk_scale` is set or the text sets train.desk_scale).
RunConfig parse_config(std::string_view text, bool desk_scale = false);
std::string serialize_config(const RunConfig& cfg);
std::string config_fingerprint(const RunConfig& cfg);

void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value);
std::string get_config_value(const RunConfig& cfg, std::string_view key);
std::vector<std::string> config_keys();

Model build_model(const RunConfig& cfg);

}  // namespace mmdino
