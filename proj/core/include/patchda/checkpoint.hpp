#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>

#include "patchda/model.hpp"

namespace patchda {

// A checkpoint directory holds `manifest.json` (config snapshot, phase,
// epoch, parameter table and blob checksum) and `params.bin` (raw
// little-endian float32 parameters in table order).
struct Checkpoint {
  std::string phase = "init";  // init | local | adapt
  int epoch = 0;
  std::shared_ptr<ActionModel> model;
};

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& dir);

// With `expected`, a checkpoint whose model config differs is rejected with
// InvalidConfig. A blob that fails its checksum raises CorruptData.
Checkpoint load_checkpoint(const std::filesystem::path& dir, const Config* expected = nullptr);

// Copies values by parameter name; shapes must agree.
void copy_parameters(const nn::NamedTensors& from, const nn::NamedTensors& to);

std::uint64_t parameter_hash(const nn::NamedTensors& params);

}  // namespace patchda
