#pragma once

#include "ugp/image.hpp"

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <vector>

namespace ugp::losses {

/// Frozen feature pyramid shared by the perceptual loss, the contextual loss
/// and the corpus metrics. Stage weights never change after construction.
class PerceptualExtractor {
 public:
  struct Stage {
    torch::Tensor weight;  // undefined for an identity stage
    torch::Tensor bias;
    int stride = 1;
    bool normalize = true;  // unit-normalize channels before comparing
  };

  PerceptualExtractor() = default;
  PerceptualExtractor(std::vector<Stage> stages, bool center_input);

  /// Seed-initialized conv pyramid: stage 0 at stride 1, later stages at
  /// stride 2, leaky ReLU after every conv, input remapped to [-1,1].
  static PerceptualExtractor random(uint64_t seed, const std::vector<int>& channels = {16, 32, 64, 64});
  /// One identity stage with unit normalization, no input remap.
  static PerceptualExtractor identity();
  /// Loads stages saved by `save` (externally trained weights go through the same path).
  static PerceptualExtractor load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  /// Features of every stage for an N×C×H×W batch.
  std::vector<torch::Tensor> features(const torch::Tensor& x) const;
  /// Features of one stage (cheaper than `features` for early stages).
  torch::Tensor stage_features(const torch::Tensor& x, size_t stage) const;
  /// Global average pool of the last stage: N×D.
  torch::Tensor pooled(const torch::Tensor& x) const;

  size_t num_stages() const { return stages_.size(); }
  const std::vector<Stage>& stages() const { return stages_; }
  /// Copy with every stage converted to `dtype`.
  PerceptualExtractor to(torch::ScalarType dtype) const;

 private:
  std::vector<Stage> stages_;
  bool center_input_ = false;
};

struct LossWeights {
  double lambda_per = 1.0;
  double lambda_adv = 0.1;
  double lambda_cf = 0.5;

  void validate() const;
};

struct ContextualParams {
  double epsilon = 1e-5;
  double bandwidth = 0.5;
  int window_radius = 2;
  /// Extractor stage whose features the contextual term compares.
  int stage = 1;
};

void to_json(nlohmann::json& j, const LossWeights& w);
void from_json(const nlohmann::json& j, LossWeights& w);
void to_json(nlohmann::json& j, const ContextualParams& p);
void from_json(const nlohmann::json& j, ContextualParams& p);

/// Channel-wise unit normalization used by the perceptual form.
torch::Tensor unit_normalize(const torch::Tensor& features);

/// Mean absolute difference. Throws ShapeError on mismatched shapes.
torch::Tensor l1(const torch::Tensor& a, const torch::Tensor& b);
double l1(const Image& a, const Image& b);

/// Σ_stages mean over (batch, position) of ‖unit(φ_s(a)) − unit(φ_s(b))‖².
torch::Tensor perceptual(const torch::Tensor& a, const torch::Tensor& b, const PerceptualExtractor& ext);
double perceptual(const Image& a, const Image& b, const PerceptualExtractor& ext);

/// Non-saturating generator loss: mean softplus(−logit).
torch::Tensor adv_generator(const torch::Tensor& fake_logits);
double adv_generator(const std::vector<double>& fake_logits);

/// Logistic discriminator loss: mean softplus(−real) + mean softplus(fake).
torch::Tensor adv_discriminator(const torch::Tensor& real_logits, const torch::Tensor& fake_logits);
double adv_discriminator(const std::vector<double>& real_logits, const std::vector<double>& fake_logits);

/// Local-window contextual loss between C×H×W or N×C×H×W maps; for batches
/// the per-sample losses are averaged.
torch::Tensor contextual_patch(const torch::Tensor& feat_a, const torch::Tensor& feat_b, int window_radius,
                               double bandwidth, double epsilon = 1e-5);

struct SynLoss {
  torch::Tensor total, l1, perceptual, adversarial;
};

/// L1 + λ_per·L_per + λ_adv·L_adv between x_syn and gt.
SynLoss loss_syn(const torch::Tensor& x_syn, const torch::Tensor& gt, const torch::Tensor& fake_logits,
                 const LossWeights& w, const PerceptualExtractor& ext);

struct FusionLoss {
  torch::Tensor total, l1, perceptual, contextual;
};

/// L1 + λ_per·L_per + λ_cf·L_cf; the contextual term compares the given
/// extractor features of x̂ and x_syn.
FusionLoss loss_fusion(const torch::Tensor& x_hat, const torch::Tensor& gt, const torch::Tensor& feat_hat,
                       const torch::Tensor& feat_syn, const LossWeights& w, const PerceptualExtractor& ext,
                       const ContextualParams& cx);
/// Same, extracting the contextual features from x̂ and x_syn at `cx.stage`.
FusionLoss loss_fusion(const torch::Tensor& x_hat, const torch::Tensor& gt, const torch::Tensor& x_syn,
                       const LossWeights& w, const PerceptualExtractor& ext, const ContextualParams& cx);

}  // namespace ugp::losses
