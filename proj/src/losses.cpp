#include "ugp/losses.hpp"

#include "ugp/errors.hpp"
#include "ugp/nn.hpp"
#include "ugp/tensor_io.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>

namespace ugp::losses {

namespace F = torch::nn::functional;

PerceptualExtractor::PerceptualExtractor(std::vector<Stage> stages, bool center_input)
    : stages_(std::move(stages)), center_input_(center_input) {
  for (auto& s : stages_) {
    if (s.weight.defined()) s.weight = s.weight.detach().clone().set_requires_grad(false);
    if (s.bias.defined()) s.bias = s.bias.detach().clone().set_requires_grad(false);
  }
}

PerceptualExtractor PerceptualExtractor::random(uint64_t seed, const std::vector<int>& channels) {
  if (channels.empty()) throw InvalidArgument("extractor needs at least one stage");
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  std::vector<Stage> stages;
  int in = 3;
  for (size_t i = 0; i < channels.size(); ++i) {
    const int out = channels[i];
    const double fan_in = in * 9.0;
    Stage s;
    s.weight = at::randn({out, in, 3, 3}, gen, torch::TensorOptions().dtype(torch::kFloat32)) * std::sqrt(2.0 / fan_in);
    s.bias = torch::zeros({out});
    s.stride = i == 0 ? 1 : 2;
    stages.push_back(std::move(s));
    in = out;
  }
  return PerceptualExtractor(std::move(stages), true);
}

PerceptualExtractor PerceptualExtractor::identity() { return PerceptualExtractor({Stage{}}, false); }

void PerceptualExtractor::save(const std::filesystem::path& path) const {
  NamedTensors out;
  out.emplace_back("center_input", torch::tensor({center_input_ ? 1 : 0}, torch::kInt64));
  for (size_t i = 0; i < stages_.size(); ++i) {
    const auto& s = stages_[i];
    const auto p = "stage" + std::to_string(i) + ".";
    out.emplace_back(p + "meta", torch::tensor({static_cast<int64_t>(s.stride), s.normalize ? 1L : 0L,
                                                s.weight.defined() ? 1L : 0L},
                                               torch::kInt64));
    if (s.weight.defined()) {
      out.emplace_back(p + "weight", s.weight);
      out.emplace_back(p + "bias", s.bias);
    }
  }
  write_tensors(path, out);
}

PerceptualExtractor PerceptualExtractor::load(const std::filesystem::path& path) {
  const auto tensors = read_tensors(path);
  std::map<std::string, torch::Tensor> lookup(tensors.begin(), tensors.end());
  auto find = [&](const std::string& key) {
    auto it = lookup.find(key);
    if (it == lookup.end()) throw FormatError("extractor file lacks '" + key + "'");
    return it->second;
  };
  const bool center = find("center_input").item<int64_t>() != 0;
  std::vector<Stage> stages;
  for (size_t i = 0;; ++i) {
    const auto p = "stage" + std::to_string(i) + ".";
    if (!lookup.count(p + "meta")) break;
    auto meta = find(p + "meta");
    Stage s;
    s.stride = static_cast<int>(meta[0].item<int64_t>());
    s.normalize = meta[1].item<int64_t>() != 0;
    if (meta[2].item<int64_t>() != 0) {
      s.weight = find(p + "weight");
      s.bias = find(p + "bias");
    }
    stages.push_back(std::move(s));
  }
  if (stages.empty()) throw FormatError("extractor file has no stages");
  return PerceptualExtractor(std::move(stages), center);
}

namespace {

torch::Tensor run_stage(const PerceptualExtractor::Stage& s, const torch::Tensor& x) {
  if (!s.weight.defined()) return x;
  const auto dtype = x.scalar_type();
  return nn::lrelu(torch::conv2d(x, s.weight.to(dtype), s.bias.to(dtype), s.stride, 1));
}

}  // namespace

std::vector<torch::Tensor> PerceptualExtractor::features(const torch::Tensor& x) const {
  std::vector<torch::Tensor> out;
  out.reserve(stages_.size());
  auto h = center_input_ ? x * 2.0 - 1.0 : x;
  for (const auto& s : stages_) {
    h = run_stage(s, h);
    out.push_back(h);
  }
  return out;
}

torch::Tensor PerceptualExtractor::stage_features(const torch::Tensor& x, size_t stage) const {
  if (stage >= stages_.size()) throw InvalidArgument("extractor stage out of range");
  auto h = center_input_ ? x * 2.0 - 1.0 : x;
  for (size_t i = 0; i <= stage; ++i) h = run_stage(stages_[i], h);
  return h;
}

torch::Tensor PerceptualExtractor::pooled(const torch::Tensor& x) const {
  return stage_features(x, stages_.size() - 1).mean({2, 3});
}

PerceptualExtractor PerceptualExtractor::to(torch::ScalarType dtype) const {
  auto copy = *this;
  for (auto& s : copy.stages_) {
    if (s.weight.defined()) {
      s.weight = s.weight.to(dtype);
      s.bias = s.bias.to(dtype);
    }
  }
  return copy;
}

void LossWeights::validate() const {
  if (lambda_per < 0.0 || lambda_adv < 0.0 || lambda_cf < 0.0) throw InvalidArgument("loss weights must be >= 0");
}

void to_json(nlohmann::json& j, const LossWeights& w) {
  j = {{"lambda_per", w.lambda_per}, {"lambda_adv", w.lambda_adv}, {"lambda_cf", w.lambda_cf}};
}

void from_json(const nlohmann::json& j, LossWeights& w) {
  w.lambda_per = j.value("lambda_per", w.lambda_per);
  w.lambda_adv = j.value("lambda_adv", w.lambda_adv);
  w.lambda_cf = j.value("lambda_cf", w.lambda_cf);
}

void to_json(nlohmann::json& j, const ContextualParams& p) {
  j = {{"epsilon", p.epsilon}, {"bandwidth", p.bandwidth}, {"window_radius", p.window_radius}, {"stage", p.stage}};
}

void from_json(const nlohmann::json& j, ContextualParams& p) {
  p.epsilon = j.value("epsilon", p.epsilon);
  p.bandwidth = j.value("bandwidth", p.bandwidth);
  p.window_radius = j.value("window_radius", p.window_radius);
  p.stage = j.value("stage", p.stage);
}

torch::Tensor unit_normalize(const torch::Tensor& features) {
  return features / (features.pow(2).sum(1, true).sqrt() + 1e-10);
}

torch::Tensor l1(const torch::Tensor& a, const torch::Tensor& b) {
  if (a.sizes() != b.sizes()) throw ShapeError("l1 operands differ in shape");
  return (a - b).abs().mean();
}

double l1(const Image& a, const Image& b) { return l1(a.tensor(), b.tensor()).item<double>(); }

torch::Tensor perceptual(const torch::Tensor& a, const torch::Tensor& b, const PerceptualExtractor& ext) {
  if (a.sizes() != b.sizes()) throw ShapeError("perceptual operands differ in shape");
  const auto fa = ext.features(a);
  const auto fb = ext.features(b);
  auto total = torch::zeros({}, a.options());
  for (size_t s = 0; s < fa.size(); ++s) {
    const bool norm = ext.stages()[s].normalize;
    auto ua = norm ? unit_normalize(fa[s]) : fa[s];
    auto ub = norm ? unit_normalize(fb[s]) : fb[s];
    total = total + (ua - ub).pow(2).sum(1).mean();
  }
  return total;
}

double perceptual(const Image& a, const Image& b, const PerceptualExtractor& ext) {
  torch::NoGradGuard guard;
  return perceptual(a.tensor().unsqueeze(0), b.tensor().unsqueeze(0), ext).item<double>();
}

torch::Tensor adv_generator(const torch::Tensor& fake_logits) {
  if (fake_logits.numel() == 0) throw InvalidArgument("no fake logits");
  return F::softplus(-fake_logits).mean();
}

double adv_generator(const std::vector<double>& fake_logits) {
  if (fake_logits.empty()) throw InvalidArgument("no fake logits");
  return adv_generator(torch::tensor(fake_logits, torch::kFloat64)).item<double>();
}

torch::Tensor adv_discriminator(const torch::Tensor& real_logits, const torch::Tensor& fake_logits) {
  if (real_logits.numel() == 0 || fake_logits.numel() == 0) throw InvalidArgument("empty logit list");
  return F::softplus(-real_logits).mean() + F::softplus(fake_logits).mean();
}

double adv_discriminator(const std::vector<double>& real_logits, const std::vector<double>& fake_logits) {
  if (real_logits.empty() || fake_logits.empty()) throw InvalidArgument("empty logit list");
  return adv_discriminator(torch::tensor(real_logits, torch::kFloat64), torch::tensor(fake_logits, torch::kFloat64))
      .item<double>();
}

torch::Tensor contextual_patch(const torch::Tensor& feat_a, const torch::Tensor& feat_b, int window_radius,
                               double bandwidth, double epsilon) {
  if (window_radius < 0) throw InvalidArgument("window radius must be >= 0");
  if (!(bandwidth > 0.0)) throw InvalidArgument("bandwidth must be positive");
  if (feat_a.sizes() != feat_b.sizes()) throw ShapeError("contextual operands differ in shape");
  if (feat_a.dim() == 3) return contextual_patch(feat_a.unsqueeze(0), feat_b.unsqueeze(0), window_radius, bandwidth, epsilon);
  if (feat_a.dim() != 4) throw ShapeError("contextual loss expects C×H×W or N×C×H×W maps");

  const auto n = feat_a.size(0), c = feat_a.size(1), h = feat_a.size(2), w = feat_a.size(3);
  const int64_t k = 2 * window_radius + 1;
  auto normalize = [](const torch::Tensor& t) { return t / t.norm(2, 1, true).clamp_min(1e-12); };

  auto mu = feat_b.mean({2, 3}, true);
  auto a = normalize(feat_a - mu);
  auto b = normalize(feat_b - mu);

  const auto unfold_opts = F::UnfoldFuncOptions({k, k}).padding(window_radius);
  auto windows = F::unfold(b, unfold_opts).view({n, c, k * k, h * w});
  auto valid = F::unfold(torch::ones({1, 1, h, w}, feat_a.options()), unfold_opts).view({1, k * k, h * w}) > 0.5;

  auto cosine = (a.view({n, c, 1, h * w}) * windows).sum(1);  // N×K²×HW
  auto dist = (1.0 - cosine).clamp_min(0.0).masked_fill(valid.logical_not(), 2.0);
  auto nearest = std::get<0>(dist.min(1, true));
  auto relative = dist / (nearest + epsilon);
  auto logits = ((1.0 - relative) / bandwidth).masked_fill(valid.logical_not(), -std::numeric_limits<double>::infinity());
  auto cx = std::get<0>(torch::softmax(logits, 1).max(1));  // N×HW
  return (-torch::log(cx.mean(1))).mean();
}

SynLoss loss_syn(const torch::Tensor& x_syn, const torch::Tensor& gt, const torch::Tensor& fake_logits,
                 const LossWeights& w, const PerceptualExtractor& ext) {
  w.validate();
  SynLoss out;
  out.l1 = l1(x_syn, gt);
  out.perceptual = perceptual(x_syn, gt, ext);
  out.adversarial = adv_generator(fake_logits);
  out.total = out.l1 + w.lambda_per * out.perceptual + w.lambda_adv * out.adversarial;
  return out;
}

FusionLoss loss_fusion(const torch::Tensor& x_hat, const torch::Tensor& gt, const torch::Tensor& feat_hat,
                       const torch::Tensor& feat_syn, const LossWeights& w, const PerceptualExtractor& ext,
                       const ContextualParams& cx) {
  w.validate();
  FusionLoss out;
  out.l1 = l1(x_hat, gt);
  out.perceptual = perceptual(x_hat, gt, ext);
  out.contextual = contextual_patch(feat_hat, feat_syn, cx.window_radius, cx.bandwidth, cx.epsilon);
  out.total = out.l1 + w.lambda_per * out.perceptual + w.lambda_cf * out.contextual;
  return out;
}

FusionLoss loss_fusion(const torch::Tensor& x_hat, const torch::Tensor& gt, const torch::Tensor& x_syn,
                       const LossWeights& w, const PerceptualExtractor& ext, const ContextualParams& cx) {
  const auto stage = static_cast<size_t>(cx.stage);
  return loss_fusion(x_hat, gt, ext.stage_features(x_hat, stage), ext.stage_features(x_syn, stage), w, ext, cx);
}

}  // namespace ugp::losses
