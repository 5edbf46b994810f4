#pragma once

#include "ugp/checkpoint.hpp"
#include "ugp/config.hpp"
#include "ugp/data.hpp"
#include "ugp/fusion.hpp"
#include "ugp/metrics.hpp"
#include "ugp/restoration.hpp"
#include "ugp/synthesis.hpp"

#include <torch/torch.h>

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace ugp::trainer {

/// Clean/degraded batches at the model resolution (N×3×H×W, float32).
struct TrainData {
  torch::Tensor clean;
  torch::Tensor degraded;

  int64_t size() const { return clean.size(0); }
};

/// Brings a degraded image to the model resolution: low-resolution inputs are
/// bicubic-upsampled by the integer factor, others must already match.
Image prepare_input(const Image& degraded, int resolution);

/// Loads every manifest pair, resizing clean images down and degraded images
/// up to `resolution`. Throws NotFound for a missing manifest.
TrainData load_train_data(const std::filesystem::path& manifest, int resolution);
TrainData to_train_data(const std::vector<data::Pair>& pairs, int resolution);

/// Fixed-seed reshuffling sampler: each epoch is a fresh permutation and
/// batches are consecutive slices of it (wrapping across epochs).
class BatchSampler {
 public:
  BatchSampler(int64_t n, int batch, uint64_t seed);
  torch::Tensor next();

 private:
  void reshuffle();

  int64_t n_;
  int batch_;
  uint64_t state_;
  std::vector<int64_t> order_;
  size_t cursor_ = 0;
};

struct StageResult {
  Checkpoint checkpoint;
  std::filesystem::path path;  // empty when the stage wrote nothing
  std::vector<double> tracked;  // per-step tracked loss
  std::string schedule;         // update order, e.g. "DGDG…" for adversarial stages
  /// Mean of the first and last `window` tracked values.
  double head_mean(size_t window = 10) const;
  double tail_mean(size_t window = 10) const;
};

/// Called after every step with (step, named loss values).
using StepCallback = std::function<void(int, const std::vector<std::pair<std::string, double>>&)>;

/// Optional in-memory data; when absent the stage reads cfg.train.train_manifest.
struct StageInputs {
  const TrainData* data = nullptr;
  StepCallback on_step;
};

/// Finetunes the backbone (optionally initialised from `init`) jointly with
/// R_se and R_mg under L1. A direct backbone with train_direct=false returns
/// `init` unchanged.
StageResult train_restoration(const RunConfig& cfg, const Checkpoint* init = nullptr, StageInputs in = {});

/// Unconditional G/D training on clean images; stands in for a public
/// pretrained generator.
StageResult train_synthesis_pretrain(const RunConfig& cfg, StageInputs in = {});

/// Encoder + generator against the discriminator on frozen-restoration
/// outputs; D and (E,G) updates alternate 1:1. Throws PrerequisiteError when
/// a checkpoint is missing or of the wrong stage.
StageResult train_synthesis(const RunConfig& cfg, const Checkpoint* restoration, const Checkpoint* pretrain,
                            StageInputs in = {});

/// Fusion network only, upstream modules frozen.
StageResult train_fusion(const RunConfig& cfg, const Checkpoint* restoration, const Checkpoint* synthesis,
                         StageInputs in = {});

struct InferOutput {
  Image x_reg, x_syn, x_hat;
};

/// Restoration → synthesis → fusion in eval mode.
class Pipeline {
 public:
  /// Rebuilds each module from the config stored in its own checkpoint.
  static Pipeline load(const Checkpoint& restoration, const Checkpoint& synthesis, const Checkpoint& fusion);
  /// Loads the latest checkpoint of each stage from a run directory.
  static Pipeline load_dir(const std::filesystem::path& dir);

  /// Throws ShapeError unless x is 3×R×R at the configured resolution.
  InferOutput infer(const Image& x);
  std::vector<InferOutput> infer_batch(const std::vector<Image>& xs);

  int resolution() const { return config_.resolution(); }
  const RunConfig& config() const { return config_; }

 private:
  Pipeline() = default;

  RunConfig config_;
  restoration::RestorationModule restoration_{nullptr};
  synthesis::SynthesisModule synthesis_{nullptr};
  fusion::FusionNetwork fusion_{nullptr};
  fusion::ImageFusion image_fusion_{nullptr};
};

struct PipelineReport {
  metrics::Report input, x_reg, x_syn, x_hat;
};

/// Scores the degraded inputs and every pipeline output against ground truth.
PipelineReport evaluate_pipeline(Pipeline& pipeline, const TrainData& test, const losses::PerceptualExtractor& ext);

/// Runs all four stages into `cfg.train.checkpoint_dir`.
struct FullRun {
  StageResult restoration, pretrain, synthesis, fusion;
};
FullRun train_all(const RunConfig& cfg, const TrainData& train, StepCallback on_step = {});

struct AblationRow {
  std::string preset;
  std::string label;
  metrics::Report report;
};

/// Trains presets (a), (b), (c) on one dataset and scores x̂ on the test set.
/// Presets reuse upstream checkpoints whenever their configuration agrees.
std::vector<AblationRow> run_ablation(const RunConfig& base, const TrainData& train, const TrainData& test,
                                      const std::filesystem::path& out_dir);
/// Markdown table with one row per preset and PSNR/SSIM/FID-proxy columns.
std::string ablation_table(const std::vector<AblationRow>& rows);

/// Column order of a comparison grid.
inline constexpr std::array<const char*, 5> kGridColumns{"input", "x_reg", "x_syn", "x_hat", "gt"};

/// Tiles rows of five equally sized images into one (k·H)×(5·W) image.
Image make_grid(const std::vector<std::array<Image, 5>>& rows);

}  // namespace ugp::trainer
