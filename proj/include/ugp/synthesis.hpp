#pragma once

#include "ugp/image.hpp"

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include <vector>

namespace ugp::synthesis {

struct SynthesisConfig {
  int resolution = 64;
  int base_res = 8;
  int style_dim = 128;
  /// Output channels of each upsampling block, coarse to fine. The base
  /// block and the base code use channels.front(); C_syn = channels.back().
  std::vector<int> channels{256, 128, 64};
  int mapping_layers = 2;
  /// One map2style head emitting every style slot (true) or one head per slot.
  bool shared_map2style = true;

  int levels() const;       // log2(resolution / base_res)
  int style_slots() const;  // 2·levels + 1
  int base_channels() const { return channels.front(); }
  int feature_channels() const { return channels.back(); }
  /// Throws InvalidArgument when resolutions or the schedule are inconsistent.
  void validate() const;
};

void to_json(nlohmann::json& j, const SynthesisConfig& c);
void from_json(const nlohmann::json& j, SynthesisConfig& c);

/// F/W+ code: spatial base features plus one style vector per slot.
struct LatentCode {
  torch::Tensor base;    // N×C_F×h_F×w_F
  torch::Tensor styles;  // N×L×D

  /// Repeats a single W vector (N×D) into every slot.
  static LatentCode broadcast(torch::Tensor base, const torch::Tensor& w, int slots);
};

/// Style-modulated convolution with optional weight demodulation. Weights are
/// stored at unit variance and scaled by 1/sqrt(fan_in) at run time.
class ModulatedConvImpl : public torch::nn::Module {
 public:
  ModulatedConvImpl(int in, int out, int kernel, int style_dim, bool demodulate);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& style);

  torch::nn::Linear affine{nullptr};
  torch::Tensor weight, bias;

 private:
  int kernel_;
  bool demodulate_;
  double scale_;
};
TORCH_MODULE(ModulatedConv);

struct GeneratorOutput {
  torch::Tensor rgb;    // N×3×H×W in the internal [-1,1] range, unclipped
  torch::Tensor f_syn;  // input of the final toRGB
};

class GeneratorImpl : public torch::nn::Module {
 public:
  explicit GeneratorImpl(const SynthesisConfig& config);

  GeneratorOutput forward(const LatentCode& code);
  /// Unconditional sample: z → mapping → W broadcast, learned constant base.
  GeneratorOutput sample(const torch::Tensor& z);
  LatentCode code_from_z(const torch::Tensor& z);

  /// When set, the final toRGB stores the tensor it consumes in `captured_rgb_input`.
  bool capture_rgb_input = false;
  torch::Tensor captured_rgb_input;

  const SynthesisConfig& config() const { return config_; }

  torch::nn::Sequential mapping{nullptr};
  torch::Tensor const_base;
  ModulatedConv base_conv{nullptr}, base_rgb{nullptr};
  torch::nn::ModuleList conv_a{nullptr}, conv_b{nullptr}, to_rgb{nullptr};

 private:
  SynthesisConfig config_;
};
TORCH_MODULE(Generator);

/// map2style: strided convs pooling the encoder's final feature map to 1×1,
/// then a linear layer to `slots`·D outputs.
class Map2StyleImpl : public torch::nn::Module {
 public:
  Map2StyleImpl(int channels, int spatial, int style_dim, int slots);
  torch::Tensor forward(const torch::Tensor& feature);  // N×slots×D

  torch::nn::Sequential convs{nullptr};
  torch::nn::Linear linear{nullptr};

 private:
  int style_dim_, slots_;
};
TORCH_MODULE(Map2Style);

class EncoderImpl : public torch::nn::Module {
 public:
  explicit EncoderImpl(const SynthesisConfig& config);
  /// Input N×3×H×W in [0,1].
  LatentCode forward(const torch::Tensor& x);

  /// Parameter count of the style branch (shared or per-slot heads).
  int64_t style_branch_parameters() const;

  torch::nn::Sequential trunk{nullptr};
  torch::nn::Conv2d base_head{nullptr};
  torch::nn::ModuleList style_heads{nullptr};

 private:
  SynthesisConfig config_;
};
TORCH_MODULE(Encoder);

/// Mirrors the generator pyramid downward to a single logit per image.
class DiscriminatorImpl : public torch::nn::Module {
 public:
  explicit DiscriminatorImpl(const SynthesisConfig& config);
  /// Input N×3×H×W in [0,1]; output N logits.
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Conv2d from_rgb{nullptr};
  torch::nn::ModuleList blocks{nullptr};
  torch::nn::Conv2d final_conv{nullptr};
  torch::nn::Linear fc{nullptr}, out{nullptr};

 private:
  SynthesisConfig config_;
};
TORCH_MODULE(Discriminator);

struct SynthesisOutput {
  Image x_syn;
  torch::Tensor f_syn;  // C_syn×H×W
};

/// Batch-level synthesis: encoder + generator.
class SynthesisModuleImpl : public torch::nn::Module {
 public:
  explicit SynthesisModuleImpl(const SynthesisConfig& config);

  /// Returns x_syn in [0,1] (unclipped) and f_syn.
  GeneratorOutput forward(const torch::Tensor& x_reg);

  Encoder encoder{nullptr};
  Generator generator{nullptr};
};
TORCH_MODULE(SynthesisModule);

/// Maps generator output from [-1,1] to [0,1] (no clipping).
inline torch::Tensor to_unit_range(const torch::Tensor& rgb) { return (rgb + 1.0) * 0.5; }

/// Eval-mode encode of one image. Throws ShapeError on a wrong resolution.
LatentCode encode(const Image& x_reg, EncoderImpl& encoder);
/// Eval-mode generation from a single-sample code. Throws NumericError on a
/// non-finite code and ShapeError on a malformed one.
SynthesisOutput generate(const LatentCode& code, GeneratorImpl& generator);
double discriminate(const Image& x, DiscriminatorImpl& discriminator);
SynthesisOutput synthesize(const Image& x_reg, SynthesisModuleImpl& module);

}  // namespace ugp::synthesis
