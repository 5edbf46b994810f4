#include "ugp/synthesis.hpp"

#include "ugp/errors.hpp"
#include "ugp/nn.hpp"

#include <cmath>

namespace ugp::synthesis {

using nn::conv3x3;
using nn::lrelu;
namespace F = torch::nn::functional;

namespace {

bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

int log2_exact(int v) {
  int l = 0;
  while ((1 << l) < v) ++l;
  return l;
}

// Leaky ReLU with the variance-preserving gain used by style-based generators.
torch::Tensor act(const torch::Tensor& x) { return lrelu(x) * std::sqrt(2.0); }

torch::Tensor upsample(const torch::Tensor& x) {
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .scale_factor(std::vector<double>{2.0, 2.0})
                               .mode(torch::kBilinear)
                               .align_corners(false));
}

std::vector<int> reversed(const std::vector<int>& v) { return {v.rbegin(), v.rend()}; }

}  // namespace

int SynthesisConfig::levels() const { return log2_exact(resolution / base_res); }

int SynthesisConfig::style_slots() const { return 2 * levels() + 1; }

void SynthesisConfig::validate() const {
  if (!is_power_of_two(resolution) || !is_power_of_two(base_res) || base_res > resolution) {
    throw InvalidArgument("resolution and base_res must be powers of two with base_res <= resolution");
  }
  if (static_cast<int>(channels.size()) != std::max(levels(), 1)) {
    throw InvalidArgument("channel schedule needs one entry per upsampling block (" + std::to_string(levels()) + ")");
  }
  if (style_dim < 1 || mapping_layers < 0) throw InvalidArgument("style_dim must be positive");
}

void to_json(nlohmann::json& j, const SynthesisConfig& c) {
  j = {{"resolution", c.resolution},
       {"base_res", c.base_res},
       {"style_dim", c.style_dim},
       {"channels", c.channels},
       {"mapping_layers", c.mapping_layers},
       {"shared_map2style", c.shared_map2style},
       {"style_slots", c.style_slots()}};
}

void from_json(const nlohmann::json& j, SynthesisConfig& c) {
  c.resolution = j.value("resolution", c.resolution);
  c.base_res = j.value("base_res", c.base_res);
  c.style_dim = j.value("style_dim", c.style_dim);
  c.channels = j.value("channels", c.channels);
  c.mapping_layers = j.value("mapping_layers", c.mapping_layers);
  c.shared_map2style = j.value("shared_map2style", c.shared_map2style);
}

LatentCode LatentCode::broadcast(torch::Tensor base, const torch::Tensor& w, int slots) {
  return {std::move(base), w.unsqueeze(1).expand({w.size(0), slots, w.size(1)})};
}

ModulatedConvImpl::ModulatedConvImpl(int in, int out, int kernel, int style_dim, bool demodulate)
    : kernel_(kernel), demodulate_(demodulate), scale_(1.0 / std::sqrt(static_cast<double>(in * kernel * kernel))) {
  affine = register_module("affine", torch::nn::Linear(style_dim, in));
  {
    torch::NoGradGuard guard;
    affine->bias.fill_(1.0);
  }
  weight = register_parameter("weight", torch::randn({out, in, kernel, kernel}));
  bias = register_parameter("bias", torch::zeros({out}));
}

torch::Tensor ModulatedConvImpl::forward(const torch::Tensor& x, const torch::Tensor& style) {
  const auto n = x.size(0);
  const auto in = weight.size(1), out = weight.size(0);
  auto s = affine(style);  // N×in
  auto w = weight * scale_;
  auto y = torch::conv2d(x * s.view({n, in, 1, 1}), w, {}, 1, kernel_ / 2);
  if (demodulate_) {
    auto energy = torch::matmul(s.pow(2), w.pow(2).sum({2, 3}).t());  // N×out
    y = y * torch::rsqrt(energy + 1e-8).view({n, out, 1, 1});
  }
  return y + bias.view({1, out, 1, 1});
}

GeneratorImpl::GeneratorImpl(const SynthesisConfig& config) : config_(config) {
  config_.validate();
  const int d = config_.style_dim;
  mapping = register_module("mapping", torch::nn::Sequential());
  for (int i = 0; i < config_.mapping_layers; ++i) {
    mapping->push_back(torch::nn::Linear(d, d));
    mapping->push_back(torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(nn::kLeakySlope)));
  }
  const int c0 = config_.base_channels();
  const_base = register_parameter("const_base", torch::randn({c0, config_.base_res, config_.base_res}));
  base_conv = register_module("base_conv", ModulatedConv(c0, c0, 3, d, true));
  base_rgb = register_module("base_rgb", ModulatedConv(c0, 3, 1, d, false));
  conv_a = register_module("conv_a", torch::nn::ModuleList());
  conv_b = register_module("conv_b", torch::nn::ModuleList());
  to_rgb = register_module("to_rgb", torch::nn::ModuleList());
  int prev = c0;
  for (int i = 0; i < config_.levels(); ++i) {
    const int ch = config_.channels[static_cast<size_t>(i)];
    conv_a->push_back(ModulatedConv(prev, ch, 3, d, true));
    conv_b->push_back(ModulatedConv(ch, ch, 3, d, true));
    to_rgb->push_back(ModulatedConv(ch, 3, 1, d, false));
    prev = ch;
  }
}

GeneratorOutput GeneratorImpl::forward(const LatentCode& code) {
  const int levels = config_.levels();
  const auto& st = code.styles;
  auto style = [&](int slot) { return st.select(1, slot); };

  auto x = act(base_conv(code.base, style(0)));
  if (levels == 0) {
    if (capture_rgb_input) captured_rgb_input = x;
    return {base_rgb(x, style(0)), x};
  }
  auto rgb = base_rgb(x, style(0));
  for (int i = 0; i < levels; ++i) {
    x = upsample(x);
    x = act(conv_a[i]->as<ModulatedConvImpl>()->forward(x, style(2 * i + 1)));
    x = act(conv_b[i]->as<ModulatedConvImpl>()->forward(x, style(2 * i + 2)));
    if (i == levels - 1 && capture_rgb_input) captured_rgb_input = x;
    rgb = upsample(rgb) + to_rgb[i]->as<ModulatedConvImpl>()->forward(x, style(2 * i + 2));
  }
  return {rgb, x};
}

LatentCode GeneratorImpl::code_from_z(const torch::Tensor& z) {
  auto normed = z * torch::rsqrt(z.pow(2).mean(1, true) + 1e-8);
  auto w = mapping->is_empty() ? normed : mapping->forward(normed);
  auto base = const_base.unsqueeze(0).expand({z.size(0), -1, -1, -1});
  return LatentCode::broadcast(base, w, config_.style_slots());
}

GeneratorOutput GeneratorImpl::sample(const torch::Tensor& z) { return forward(code_from_z(z)); }

Map2StyleImpl::Map2StyleImpl(int channels, int spatial, int style_dim, int slots)
    : style_dim_(style_dim), slots_(slots) {
  convs = register_module("convs", torch::nn::Sequential());
  for (int s = spatial; s > 1; s /= 2) {
    convs->push_back(conv3x3(channels, channels, 2));
    convs->push_back(torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(nn::kLeakySlope)));
  }
  linear = register_module("linear", torch::nn::Linear(channels, slots * style_dim));
}

torch::Tensor Map2StyleImpl::forward(const torch::Tensor& feature) {
  auto pooled = convs->is_empty() ? feature : convs->forward(feature);
  pooled = pooled.flatten(1);
  return linear(pooled).view({feature.size(0), slots_, style_dim_});
}

EncoderImpl::EncoderImpl(const SynthesisConfig& config) : config_(config) {
  config_.validate();
  const auto widths = reversed(config_.channels);
  const int levels = config_.levels();
  trunk = register_module("trunk", torch::nn::Sequential());
  trunk->push_back(conv3x3(3, widths.front()));
  trunk->push_back(torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(nn::kLeakySlope)));
  for (int j = 0; j < levels; ++j) {
    const int in = widths[static_cast<size_t>(j)];
    const int out = widths[static_cast<size_t>(std::min(j + 1, levels - 1))];
    trunk->push_back(conv3x3(in, out, 2));
    trunk->push_back(torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(nn::kLeakySlope)));
    trunk->push_back(conv3x3(out, out));
    trunk->push_back(torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(nn::kLeakySlope)));
  }
  const int top = config_.base_channels();
  base_head = register_module("base_head", conv3x3(top, top));
  style_heads = register_module("style_heads", torch::nn::ModuleList());
  if (config_.shared_map2style) {
    style_heads->push_back(Map2Style(top, config_.base_res, config_.style_dim, config_.style_slots()));
  } else {
    for (int i = 0; i < config_.style_slots(); ++i) {
      style_heads->push_back(Map2Style(top, config_.base_res, config_.style_dim, 1));
    }
  }
}

LatentCode EncoderImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != 3 || x.size(2) != config_.resolution || x.size(3) != config_.resolution) {
    throw ShapeError("encoder expects N×3×" + std::to_string(config_.resolution) + "×" +
                     std::to_string(config_.resolution) + " input");
  }
  auto feature = trunk->forward(x * 2.0 - 1.0);
  auto base = base_head(feature);
  torch::Tensor styles;
  if (config_.shared_map2style) {
    styles = style_heads[0]->as<Map2StyleImpl>()->forward(feature);
  } else {
    std::vector<torch::Tensor> slots;
    for (const auto& head : *style_heads) slots.push_back(head->as<Map2StyleImpl>()->forward(feature));
    styles = torch::cat(slots, 1);
  }
  return {base, styles};
}

int64_t EncoderImpl::style_branch_parameters() const { return nn::count_parameters(*style_heads); }

namespace {

class DownBlockImpl : public torch::nn::Module {
 public:
  DownBlockImpl(int in, int out)
      : conv1(register_module("conv1", conv3x3(in, in))),
        conv2(register_module("conv2", conv3x3(in, out))),
        skip(register_module("skip", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 1).bias(false)))) {}

  torch::Tensor forward(const torch::Tensor& x) {
    auto main = F::avg_pool2d(lrelu(conv2(lrelu(conv1(x)))), F::AvgPool2dFuncOptions(2));
    auto shortcut = skip(F::avg_pool2d(x, F::AvgPool2dFuncOptions(2)));
    return (main + shortcut) / std::sqrt(2.0);
  }

  torch::nn::Conv2d conv1, conv2, skip;
};
TORCH_MODULE(DownBlock);

}  // namespace

DiscriminatorImpl::DiscriminatorImpl(const SynthesisConfig& config) : config_(config) {
  config_.validate();
  const auto widths = reversed(config_.channels);
  const int levels = config_.levels();
  from_rgb = register_module("from_rgb", nn::conv1x1(3, widths.front()));
  blocks = register_module("blocks", torch::nn::ModuleList());
  for (int j = 0; j < levels; ++j) {
    blocks->push_back(DownBlock(widths[static_cast<size_t>(j)], widths[static_cast<size_t>(std::min(j + 1, levels - 1))]));
  }
  const int top = config_.base_channels();
  final_conv = register_module("final_conv", conv3x3(top, top));
  fc = register_module("fc", torch::nn::Linear(top * config_.base_res * config_.base_res, top));
  out = register_module("out", torch::nn::Linear(top, 1));
}

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != 3 || x.size(2) != config_.resolution || x.size(3) != config_.resolution) {
    throw ShapeError("discriminator expects N×3×" + std::to_string(config_.resolution) + "×" +
                     std::to_string(config_.resolution) + " input");
  }
  auto h = lrelu(from_rgb(x * 2.0 - 1.0));
  for (const auto& block : *blocks) h = block->as<DownBlockImpl>()->forward(h);
  h = lrelu(final_conv(h)).flatten(1);
  return out(lrelu(fc(h))).squeeze(1);
}

SynthesisModuleImpl::SynthesisModuleImpl(const SynthesisConfig& config)
    : encoder(register_module("encoder", Encoder(config))), generator(register_module("generator", Generator(config))) {}

GeneratorOutput SynthesisModuleImpl::forward(const torch::Tensor& x_reg) {
  auto out = generator(encoder(x_reg));
  return {to_unit_range(out.rgb), out.f_syn};
}

namespace {

torch::ScalarType dtype_of(torch::nn::Module& m) { return m.parameters().front().scalar_type(); }

}  // namespace

LatentCode encode(const Image& x_reg, EncoderImpl& encoder) {
  torch::NoGradGuard guard;
  return encoder.forward(x_reg.tensor().to(dtype_of(encoder)).unsqueeze(0));
}

SynthesisOutput generate(const LatentCode& code, GeneratorImpl& generator) {
  const auto& cfg = generator.config();
  if (!code.base.defined() || !code.styles.defined() || code.base.dim() != 4 || code.styles.dim() != 3 ||
      code.base.size(1) != cfg.base_channels() || code.base.size(2) != cfg.base_res ||
      code.base.size(3) != cfg.base_res || code.styles.size(1) != cfg.style_slots() ||
      code.styles.size(2) != cfg.style_dim || code.base.size(0) != code.styles.size(0)) {
    throw ShapeError("latent code does not match the generator configuration");
  }
  if (!torch::isfinite(code.base).all().item<bool>() || !torch::isfinite(code.styles).all().item<bool>()) {
    throw NumericError("latent code contains non-finite entries");
  }
  torch::NoGradGuard guard;
  auto out = generator.forward(code);
  return {Image(to_unit_range(out.rgb[0]).clamp(0.0, 1.0)), out.f_syn[0]};
}

double discriminate(const Image& x, DiscriminatorImpl& discriminator) {
  torch::NoGradGuard guard;
  return discriminator.forward(x.tensor().to(dtype_of(discriminator)).unsqueeze(0))[0].item<double>();
}

SynthesisOutput synthesize(const Image& x_reg, SynthesisModuleImpl& module) {
  return generate(encode(x_reg, *module.encoder), *module.generator);
}

}  // namespace ugp::synthesis
