#pragma once

#include "ugp/image.hpp"

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include <functional>
#include <map>
#include <memory>
#include <string>

namespace ugp::restoration {

enum class AdapterKind { direct, residual };

std::string to_string(AdapterKind kind);

struct BackboneConfig {
  std::string id = "tiny-residual";
  int feature_channels = 64;
  /// Trunk depth for plain backbones; ignored by the U-Net.
  int depth = 4;
  /// Free-form per-backbone parameter block, handed to the builder untouched.
  nlohmann::json params = nlohmann::json::object();
};

void to_json(nlohmann::json& j, const BackboneConfig& c);
void from_json(const nlohmann::json& j, BackboneConfig& c);

/// Regression network seen through the adapter contract: an image output and
/// the last-layer feature map (C_reg channels at output resolution) that feeds
/// the final image projection.
class BackboneImpl : public torch::nn::Module {
 public:
  virtual ~BackboneImpl() = default;

  virtual AdapterKind kind() const = 0;
  virtual int feature_channels() const = 0;

  /// Last-layer features, right before the projection to image space.
  virtual torch::Tensor features(const torch::Tensor& x) = 0;
  /// The backbone's own projection from features to an image (direct) or a
  /// residual image (residual).
  virtual torch::nn::Conv2d& projection() = 0;

  /// Unmodified backbone output: projection for direct backbones, input plus
  /// projected residual for residual ones.
  torch::Tensor forward(const torch::Tensor& x);
  /// Projection of the features alone (the residual R(x) for residual backbones).
  torch::Tensor feature_path(const torch::Tensor& x);
};

using Backbone = std::shared_ptr<BackboneImpl>;
using BackboneBuilder = std::function<Backbone(const BackboneConfig&)>;

/// Registers a constructor under `id`. Throws Conflict on reuse.
void register_backbone(const std::string& id, BackboneBuilder builder);
/// Throws NotFound for unknown ids.
Backbone build_backbone(const BackboneConfig& config);
std::vector<std::string> registered_backbones();

/// Adapter descriptor for a built backbone.
struct BackboneAdapter {
  AdapterKind kind;
  int feature_channels;
  std::string backbone_id;
};

/// R_se: three 3×3 stride-1 convs mapping the input image to C_reg features.
class StructureEncoderImpl : public torch::nn::Module {
 public:
  explicit StructureEncoderImpl(int channels);
  torch::Tensor forward(const torch::Tensor& x);
  /// Zeroes the last conv so the encoder outputs exactly 0.
  void zero_output();

  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, conv3{nullptr};
};
TORCH_MODULE(StructureEncoder);

/// R_mg: two residual blocks followed by a 3×3 conv to RGB.
class MergingNetworkImpl : public torch::nn::Module {
 public:
  explicit MergingNetworkImpl(int channels);
  /// Feature map before the final projection (this is f_reg).
  torch::Tensor features(const torch::Tensor& merged);
  torch::Tensor forward(const torch::Tensor& merged);
  /// Copies a backbone projection into the final conv.
  void copy_projection(const torch::nn::Conv2d& source);

  torch::nn::Sequential blocks{nullptr};
  torch::nn::Conv2d to_rgb{nullptr};
};
TORCH_MODULE(MergingNetwork);

/// Raw (unclipped) network outputs on N×3×H×W batches.
struct BatchOutput {
  torch::Tensor x_reg;
  torch::Tensor f_reg;
};

/// R_mg(R'(x) + R_se(x)), checking that both summands share one shape.
BatchOutput residual_merge(const torch::Tensor& backbone_features, const torch::Tensor& encoded,
                           MergingNetworkImpl& merge);

/// The restoration module: a backbone plus, for residual backbones with the
/// adapter enabled, the structure encoder and merging network.
class RestorationModuleImpl : public torch::nn::Module {
 public:
  /// `use_adapter=false` runs a residual backbone unmodified and taps R'(x)
  /// as f_reg (the "without R_se and R_mg" configuration).
  RestorationModuleImpl(const BackboneConfig& config, bool use_adapter = true);

  BatchOutput forward(const torch::Tensor& x);

  BackboneAdapter adapter() const;
  bool uses_adapter() const { return !structure_encoder.is_empty(); }

  Backbone backbone;
  StructureEncoder structure_encoder{nullptr};
  MergingNetwork merging{nullptr};

 private:
  std::string backbone_id_;
};
TORCH_MODULE(RestorationModule);

struct RestorationOutput {
  Image x_reg;
  torch::Tensor f_reg;  // C_reg×H×W
};

/// Eval-mode forward of a direct backbone. Throws InvalidArgument on a
/// residual backbone.
RestorationOutput restore_direct(const Image& x, RestorationModuleImpl& module);
/// Eval-mode forward through the residual adapter. Throws InvalidArgument if
/// the module is not a residual backbone with the adapter attached.
RestorationOutput restore_residual(const Image& x, RestorationModuleImpl& module);
/// Dispatches on the adapter kind.
RestorationOutput restore(const Image& x, RestorationModuleImpl& module);

}  // namespace ugp::restoration
