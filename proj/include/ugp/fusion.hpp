#pragma once

#include "ugp/image.hpp"

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace ugp::fusion {

struct FusionConfig {
  int blocks = 8;
  /// Ablation: fuse x_reg and x_syn images instead of f_reg and f_syn.
  bool image_domain = false;
};

void to_json(nlohmann::json& j, const FusionConfig& c);
void from_json(const nlohmann::json& j, FusionConfig& c);

/// x̂ = proj_out(trunk(proj_in(f_syn) + f_reg)).
class FusionNetworkImpl : public torch::nn::Module {
 public:
  FusionNetworkImpl(int syn_channels, int reg_channels, int blocks = 8);

  /// Unclipped output; throws ShapeError on mismatched inputs.
  torch::Tensor forward(const torch::Tensor& f_reg, const torch::Tensor& f_syn);
  int depth() const { return static_cast<int>(trunk->size()); }

  torch::nn::Conv2d proj_in{nullptr};
  torch::nn::Sequential trunk{nullptr};
  torch::nn::Conv2d proj_out{nullptr};

  /// Set when `record_merge` is on: the sum proj_in(f_syn) + f_reg.
  bool record_merge = false;
  torch::Tensor merged;
};
TORCH_MODULE(FusionNetwork);

/// Image-domain variant: one shared 3×3 conv lifts both images to C channels,
/// then the feature pipeline runs unchanged.
class ImageFusionImpl : public torch::nn::Module {
 public:
  ImageFusionImpl(int channels, int blocks = 8);
  torch::Tensor forward(const torch::Tensor& x_reg, const torch::Tensor& x_syn);

  torch::nn::Conv2d lift{nullptr};
  FusionNetwork net{nullptr};
};
TORCH_MODULE(ImageFusion);

/// Single-sample eval forward, clipped to [0,1]. Inputs are C×H×W.
Image fuse(const torch::Tensor& f_reg, const torch::Tensor& f_syn, FusionNetworkImpl& net);
Image fuse_images(const Image& x_reg, const Image& x_syn, ImageFusionImpl& net);

}  // namespace ugp::fusion
