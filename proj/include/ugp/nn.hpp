#pragma once

#include <torch/torch.h>

#include <cstdint>

namespace ugp::nn {

inline constexpr double kLeakySlope = 0.2;

inline torch::Tensor lrelu(const torch::Tensor& x) { return torch::leaky_relu(x, kLeakySlope); }

torch::nn::Conv2d conv3x3(int64_t in, int64_t out, int64_t stride = 1);
torch::nn::Conv2d conv1x1(int64_t in, int64_t out);

void zero_(torch::nn::Conv2d& conv);

/// conv3×3 → leaky ReLU → conv3×3 plus identity skip. The second conv starts
/// at zero, so a fresh block is the identity map.
class ResBlockImpl : public torch::nn::Module {
 public:
  explicit ResBlockImpl(int64_t channels);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
};
TORCH_MODULE(ResBlock);

int64_t count_parameters(const torch::nn::Module& module);

/// Sets requires_grad=false on every parameter.
void freeze(torch::nn::Module& module);

}  // namespace ugp::nn
