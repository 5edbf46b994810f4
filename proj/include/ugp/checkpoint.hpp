#pragma once

#include "ugp/config.hpp"
#include "ugp/tensor_io.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>

namespace ugp {

/// Weights plus everything needed to rebuild the modules that own them.
/// Nothing time-dependent is stored, so identical runs write identical bytes.
struct Checkpoint {
  Stage stage = Stage::restoration;
  int step = 0;
  NamedTensors weights;
  nlohmann::json config;     // RunConfig snapshot of the producing run
  torch::Tensor rng_state;   // uint8 CPU generator state, may be undefined

  RunConfig run_config() const;
  /// Entries whose names start with `prefix`.
  NamedTensors with_prefix(const std::string& prefix) const;
};

/// `<dir>/stage-<name>-step-<k>`.
std::filesystem::path checkpoint_path(const std::filesystem::path& dir, Stage stage, int step);

/// Writes weights.bin, rng.bin and meta.json into `path` (created if missing).
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// Throws NotFound when the directory or its files are missing.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Highest-step checkpoint of `stage` inside `dir`, if any.
std::optional<std::filesystem::path> latest_checkpoint(const std::filesystem::path& dir, Stage stage);

}  // namespace ugp
