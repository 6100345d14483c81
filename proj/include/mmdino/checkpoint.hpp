#pragma once

#include <filesystem>
#include <string>

#include "mmdino/trainer.hpp"

namespace mmdino {

// safetensors-compatible file: 8-byte little-endian header length, JSON
// header, raw little-endian tensor bytes. Tensors are stored per layout
// entry under student/, teacher/, optim.m/ and optim.v/, plus `center`.
// The run config text, step and optimizer step counters travel in the
// header's __metadata__ block.
void save_checkpoint(const std::filesystem::path& path, const ParamLayout& layout, const TrainerState& state,
                     const std::string& config_text);

struct Checkpoint {
  TrainerState state;
  std::string config_text;
};

// Throws DataError if the file does not match `layout` tensor for tensor.
Checkpoint load_checkpoint(const std::filesystem::path& path, const ParamLayout& layout);

// Reads only the stored config text (to rebuild the model before loading).
std::string checkpoint_config(const std::filesystem::path& path);

}  // namespace mmdino
