#include "ugp/nn.hpp"

namespace ugp::nn {

torch::nn::Conv2d conv3x3(int64_t in, int64_t out, int64_t stride) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
}

torch::nn::Conv2d conv1x1(int64_t in, int64_t out) { return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 1)); }

void zero_(torch::nn::Conv2d& conv) {
  torch::NoGradGuard guard;
  conv->weight.zero_();
  if (conv->bias.defined()) conv->bias.zero_();
}

ResBlockImpl::ResBlockImpl(int64_t channels)
    : conv1(register_module("conv1", conv3x3(channels, channels))),
      conv2(register_module("conv2", conv3x3(channels, channels))) {
  zero_(conv2);
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x) { return x + conv2(lrelu(conv1(x))); }

int64_t count_parameters(const torch::nn::Module& module) {
  int64_t total = 0;
  for (const auto& p : module.parameters()) total += p.numel();
  return total;
}

void freeze(torch::nn::Module& module) {
  for (auto& p : module.parameters()) p.set_requires_grad(false);
}

}  // namespace ugp::nn
