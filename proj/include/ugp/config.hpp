#pragma once

#include "ugp/degrade.hpp"
#include "ugp/fusion.hpp"
#include "ugp/losses.hpp"
#include "ugp/restoration.hpp"
#include "ugp/synthesis.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ugp {

inline constexpr const char* kVersion = "0.3.0";
inline constexpr int kConfigSchemaVersion = 1;

enum class Stage { restoration, synthesis_pretrain, synthesis, fusion };

std::string to_string(Stage stage);
/// Accepts "restoration", "synthesis-pretrain", "synthesis", "fusion".
Stage stage_from_string(const std::string& name);

struct TrainConfig {
  Stage stage = Stage::restoration;
  int steps = 500;
  int batch = 8;
  double lr = 2e-3;    // restoration and fusion
  double lr_g = 2e-3;  // encoder + generator
  double lr_d = 2e-3;
  double beta1 = 0.9, beta2 = 0.99;
  double adv_beta1 = 0.0, adv_beta2 = 0.99;
  uint64_t seed = 0;
  int save_every = 0;  // 0: final checkpoint only
  std::string train_manifest;
  std::string test_manifest;
  std::string checkpoint_dir = "runs/default";
  /// Direct backbones are taken as pretrained; set to train them anyway.
  bool train_direct = false;
  int threads = 0;  // 0 keeps the torch default
};

struct PerceptualConfig {
  uint64_t seed = 1234;
  std::vector<int> channels{16, 32, 64, 64};
  std::string weights;  // optional externally trained extractor file

  losses::PerceptualExtractor build() const;
};

struct RunConfig {
  TrainConfig train;
  restoration::BackboneConfig backbone;
  bool use_adapter = true;
  synthesis::SynthesisConfig synthesis;
  fusion::FusionConfig fusion;
  losses::LossWeights weights;
  losses::ContextualParams contextual;
  PerceptualConfig perceptual;
  degrade::DegradationSpec degradation;
  /// Ablation preset: "a" (no R_se/R_mg), "b" (image-domain fusion), "c" (full).
  std::string preset = "c";

  int resolution() const { return synthesis.resolution; }
  /// Applies a preset's switches on top of the current values.
  void apply_preset(const std::string& name);
  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

RunConfig load_config(const std::filesystem::path& path);

/// Narrow-width configuration used by the CPU smoke runs; identical structure
/// to the defaults (64×64 output, 8×8 base code, eight fusion blocks).
RunConfig desk_smoke_config();

}  // namespace ugp
