#include "ugp/fusion.hpp"

#include "ugp/errors.hpp"
#include "ugp/nn.hpp"

namespace ugp::fusion {

void to_json(nlohmann::json& j, const FusionConfig& c) { j = {{"blocks", c.blocks}, {"image_domain", c.image_domain}}; }

void from_json(const nlohmann::json& j, FusionConfig& c) {
  c.blocks = j.value("blocks", c.blocks);
  c.image_domain = j.value("image_domain", c.image_domain);
}

FusionNetworkImpl::FusionNetworkImpl(int syn_channels, int reg_channels, int blocks)
    : proj_in(register_module("proj_in", nn::conv3x3(syn_channels, reg_channels))),
      trunk(register_module("trunk", torch::nn::Sequential())),
      proj_out(register_module("proj_out", nn::conv3x3(reg_channels, 3))) {
  if (blocks < 0) throw InvalidArgument("fusion depth must be non-negative");
  for (int i = 0; i < blocks; ++i) trunk->push_back(nn::ResBlock(reg_channels));
}

torch::Tensor FusionNetworkImpl::forward(const torch::Tensor& f_reg, const torch::Tensor& f_syn) {
  if (f_reg.dim() != 4 || f_syn.dim() != 4 || f_reg.size(0) != f_syn.size(0) || f_reg.size(2) != f_syn.size(2) ||
      f_reg.size(3) != f_syn.size(3)) {
    throw ShapeError("f_reg and f_syn must share batch and spatial dimensions");
  }
  if (f_reg.size(1) != proj_out->weight.size(1) || f_syn.size(1) != proj_in->weight.size(1)) {
    throw ShapeError("fusion channel counts do not match the network");
  }
  auto sum = proj_in(f_syn) + f_reg;
  if (record_merge) merged = sum;
  return proj_out(trunk->forward(sum));
}

ImageFusionImpl::ImageFusionImpl(int channels, int blocks)
    : lift(register_module("lift", nn::conv3x3(3, channels))),
      net(register_module("net", FusionNetwork(channels, channels, blocks))) {}

torch::Tensor ImageFusionImpl::forward(const torch::Tensor& x_reg, const torch::Tensor& x_syn) {
  if (x_reg.sizes() != x_syn.sizes()) throw ShapeError("x_reg and x_syn must share one shape");
  return net(lift(x_reg), lift(x_syn));
}

Image fuse(const torch::Tensor& f_reg, const torch::Tensor& f_syn, FusionNetworkImpl& net) {
  if (f_reg.dim() != 3 || f_syn.dim() != 3) throw ShapeError("fuse expects C×H×W feature maps");
  torch::NoGradGuard guard;
  return Image(net.forward(f_reg.unsqueeze(0), f_syn.unsqueeze(0))[0].clamp(0.0, 1.0));
}

Image fuse_images(const Image& x_reg, const Image& x_syn, ImageFusionImpl& net) {
  torch::NoGradGuard guard;
  const auto dtype = net.lift->weight.scalar_type();
  return Image(
      net.forward(x_reg.tensor().to(dtype).unsqueeze(0), x_syn.tensor().to(dtype).unsqueeze(0))[0].clamp(0.0, 1.0));
}

}  // namespace ugp::fusion
