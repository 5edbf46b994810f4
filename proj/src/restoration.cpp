#include "ugp/restoration.hpp"

#include "ugp/errors.hpp"
#include "ugp/nn.hpp"

#include <mutex>

namespace ugp::restoration {

using nn::conv3x3;
using nn::lrelu;

std::string to_string(AdapterKind kind) { return kind == AdapterKind::direct ? "direct" : "residual"; }

void to_json(nlohmann::json& j, const BackboneConfig& c) {
  j = {{"id", c.id}, {"feature_channels", c.feature_channels}, {"depth", c.depth}, {"params", c.params}};
}

void from_json(const nlohmann::json& j, BackboneConfig& c) {
  c.id = j.value("id", c.id);
  c.feature_channels = j.value("feature_channels", c.feature_channels);
  c.depth = j.value("depth", c.depth);
  c.params = j.value("params", nlohmann::json::object());
}

torch::Tensor BackboneImpl::forward(const torch::Tensor& x) {
  auto out = feature_path(x);
  return kind() == AdapterKind::residual ? x + out : out;
}

torch::Tensor BackboneImpl::feature_path(const torch::Tensor& x) { return projection()(features(x)); }

namespace {

// Encoder-decoder with two skip levels; features leave the last decoder conv.
class TinyUNetImpl : public BackboneImpl {
 public:
  explicit TinyUNetImpl(int channels) : channels_(channels) {
    const int half = std::max(1, channels / 2);
    enc0a = register_module("enc0a", conv3x3(3, half));
    enc0b = register_module("enc0b", conv3x3(half, half));
    enc1a = register_module("enc1a", conv3x3(half, channels, 2));
    enc1b = register_module("enc1b", conv3x3(channels, channels));
    mida = register_module("mida", conv3x3(channels, channels, 2));
    midb = register_module("midb", conv3x3(channels, channels));
    dec1up = register_module("dec1up", conv3x3(channels, channels));
    dec1 = register_module("dec1", conv3x3(2 * channels, channels));
    dec0up = register_module("dec0up", conv3x3(channels, half));
    dec0 = register_module("dec0", conv3x3(2 * half, channels));
    proj = register_module("proj", conv3x3(channels, 3));
  }

  AdapterKind kind() const override { return AdapterKind::direct; }
  int feature_channels() const override { return channels_; }
  torch::nn::Conv2d& projection() override { return proj; }

  torch::Tensor features(const torch::Tensor& x) override {
    if (x.size(2) % 4 != 0 || x.size(3) % 4 != 0) throw ShapeError("tiny-unet needs H and W divisible by 4");
    auto s0 = lrelu(enc0b(lrelu(enc0a(x))));
    auto s1 = lrelu(enc1b(lrelu(enc1a(s0))));
    auto m = lrelu(midb(lrelu(mida(s1))));
    auto up = [](const torch::Tensor& t) {
      return torch::nn::functional::interpolate(
          t, torch::nn::functional::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(
                 torch::kNearest));
    };
    auto d1 = lrelu(dec1(torch::cat({lrelu(dec1up(up(m))), s1}, 1)));
    return lrelu(dec0(torch::cat({lrelu(dec0up(up(d1))), s0}, 1)));
  }

  torch::nn::Conv2d enc0a{nullptr}, enc0b{nullptr}, enc1a{nullptr}, enc1b{nullptr}, mida{nullptr}, midb{nullptr},
      dec1up{nullptr}, dec1{nullptr}, dec0up{nullptr}, dec0{nullptr}, proj{nullptr};

 private:
  int channels_;
};

// Plain conv trunk predicting a residual image that is added back to the input.
class TinyResidualImpl : public BackboneImpl {
 public:
  TinyResidualImpl(int channels, int depth) : channels_(channels) {
    head = register_module("head", conv3x3(3, channels));
    trunk = register_module("trunk", torch::nn::ModuleList());
    for (int i = 0; i < depth; ++i) trunk->push_back(conv3x3(channels, channels));
    proj = register_module("proj", conv3x3(channels, 3));
  }

  AdapterKind kind() const override { return AdapterKind::residual; }
  int feature_channels() const override { return channels_; }
  torch::nn::Conv2d& projection() override { return proj; }

  torch::Tensor features(const torch::Tensor& x) override {
    auto h = lrelu(head(x));
    for (const auto& layer : *trunk) h = lrelu(layer->as<torch::nn::Conv2d>()->forward(h));
    return h;
  }

  torch::nn::Conv2d head{nullptr}, proj{nullptr};
  torch::nn::ModuleList trunk{nullptr};

 private:
  int channels_;
};

struct Registry {
  std::mutex mutex;
  std::map<std::string, BackboneBuilder> builders;

  Registry() {
    builders["tiny-unet"] = [](const BackboneConfig& c) -> Backbone {
      return std::make_shared<TinyUNetImpl>(c.feature_channels);
    };
    builders["tiny-residual"] = [](const BackboneConfig& c) -> Backbone {
      return std::make_shared<TinyResidualImpl>(c.feature_channels, c.depth);
    };
  }
};

Registry& registry() {
  static Registry r;
  return r;
}

}  // namespace

void register_backbone(const std::string& id, BackboneBuilder builder) {
  auto& r = registry();
  std::lock_guard lock(r.mutex);
  if (!r.builders.emplace(id, std::move(builder)).second) throw Conflict("backbone '" + id + "' already registered");
}

Backbone build_backbone(const BackboneConfig& config) {
  BackboneBuilder builder;
  {
    auto& r = registry();
    std::lock_guard lock(r.mutex);
    auto it = r.builders.find(config.id);
    if (it == r.builders.end()) throw NotFound("backbone '" + config.id + "'");
    builder = it->second;
  }
  auto backbone = builder(config);
  if (backbone->feature_channels() != config.feature_channels) {
    throw ShapeError("backbone '" + config.id + "' ignored feature_channels");
  }
  return backbone;
}

std::vector<std::string> registered_backbones() {
  auto& r = registry();
  std::lock_guard lock(r.mutex);
  std::vector<std::string> ids;
  for (const auto& [id, _] : r.builders) ids.push_back(id);
  return ids;
}

StructureEncoderImpl::StructureEncoderImpl(int channels)
    : conv1(register_module("conv1", conv3x3(3, channels))),
      conv2(register_module("conv2", conv3x3(channels, channels))),
      conv3(register_module("conv3", conv3x3(channels, channels))) {}

torch::Tensor StructureEncoderImpl::forward(const torch::Tensor& x) { return conv3(lrelu(conv2(lrelu(conv1(x))))); }

void StructureEncoderImpl::zero_output() { nn::zero_(conv3); }

MergingNetworkImpl::MergingNetworkImpl(int channels)
    : blocks(register_module("blocks", torch::nn::Sequential(nn::ResBlock(channels), nn::ResBlock(channels)))),
      to_rgb(register_module("to_rgb", conv3x3(channels, 3))) {}

torch::Tensor MergingNetworkImpl::features(const torch::Tensor& merged) { return blocks->forward(merged); }

torch::Tensor MergingNetworkImpl::forward(const torch::Tensor& merged) { return to_rgb(features(merged)); }

void MergingNetworkImpl::copy_projection(const torch::nn::Conv2d& source) {
  torch::NoGradGuard guard;
  if (source->weight.sizes() != to_rgb->weight.sizes()) throw ShapeError("projection shape mismatch");
  to_rgb->weight.copy_(source->weight);
  to_rgb->bias.copy_(source->bias);
}

BatchOutput residual_merge(const torch::Tensor& backbone_features, const torch::Tensor& encoded,
                           MergingNetworkImpl& merge) {
  if (backbone_features.sizes() != encoded.sizes()) {
    throw ShapeError("R'(x) and R_se(x) shapes differ");
  }
  auto f = merge.features(backbone_features + encoded);
  return {merge.to_rgb(f), f};
}

RestorationModuleImpl::RestorationModuleImpl(const BackboneConfig& config, bool use_adapter)
    : backbone(build_backbone(config)), backbone_id_(config.id) {
  register_module("backbone", backbone);
  if (backbone->kind() == AdapterKind::residual && use_adapter) {
    structure_encoder = register_module("structure_encoder", StructureEncoder(backbone->feature_channels()));
    merging = register_module("merging", MergingNetwork(backbone->feature_channels()));
  }
}

BatchOutput RestorationModuleImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != 3) throw ShapeError("restoration expects N×3×H×W input");
  if (backbone->kind() == AdapterKind::direct) {
    auto f = backbone->features(x);
    return {backbone->projection()(f), f};
  }
  auto f = backbone->features(x);
  if (!uses_adapter()) return {x + backbone->projection()(f), f};
  return residual_merge(f, structure_encoder(x), *merging);
}

BackboneAdapter RestorationModuleImpl::adapter() const {
  return {backbone->kind(), backbone->feature_channels(), backbone_id_};
}

namespace {

RestorationOutput eval_forward(const Image& x, RestorationModuleImpl& module) {
  torch::NoGradGuard guard;
  const auto dtype = module.backbone->projection()->weight.scalar_type();
  auto out = module.forward(x.tensor().to(dtype).unsqueeze(0));
  return {Image(out.x_reg[0].clamp(0.0, 1.0)), out.f_reg[0]};
}

}  // namespace

RestorationOutput restore_direct(const Image& x, RestorationModuleImpl& module) {
  if (module.adapter().kind != AdapterKind::direct) throw InvalidArgument("restore_direct needs a direct backbone");
  return eval_forward(x, module);
}

RestorationOutput restore_residual(const Image& x, RestorationModuleImpl& module) {
  if (module.adapter().kind != AdapterKind::residual || !module.uses_adapter()) {
    throw InvalidArgument("restore_residual needs a residual backbone with R_se and R_mg");
  }
  return eval_forward(x, module);
}

RestorationOutput restore(const Image& x, RestorationModuleImpl& module) { return eval_forward(x, module); }

}  // namespace ugp::restoration
