#include "ugp/metrics.hpp"

#include "ugp/data.hpp"
#include "ugp/errors.hpp"

#include <cmath>

namespace ugp::metrics {

namespace {

void require_same_shape(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw ShapeError("metric operands differ in shape");
}

torch::Tensor gaussian_window(int size, double sigma) {
  auto coords = torch::arange(size, torch::kFloat64) - (size - 1) / 2.0;
  auto g = torch::exp(-coords.pow(2) / (2.0 * sigma * sigma));
  g = g / g.sum();
  return torch::outer(g, g);
}

}  // namespace

double psnr(const Image& a, const Image& b) {
  require_same_shape(a, b);
  const double mse = (a.tensor().to(torch::kFloat64) - b.tensor().to(torch::kFloat64)).pow(2).mean().item<double>();
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

double ssim(const Image& a, const Image& b) {
  require_same_shape(a, b);
  constexpr int kWindow = 11;
  if (a.height() < kWindow || a.width() < kWindow) throw InvalidArgument("SSIM needs images of at least 11×11");
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const auto c = a.channels();
  auto window = gaussian_window(kWindow, 1.5).view({1, 1, kWindow, kWindow}).expand({c, 1, kWindow, kWindow});
  auto x = a.tensor().to(torch::kFloat64).unsqueeze(0);
  auto y = b.tensor().to(torch::kFloat64).unsqueeze(0);
  auto filt = [&](const torch::Tensor& t) { return torch::conv2d(t, window, torch::Tensor(), torch::IntArrayRef{1}, torch::IntArrayRef{0},
                         torch::IntArrayRef{1}, c);
  };
  auto mx = filt(x), my = filt(y);
  auto sxx = filt(x * x) - mx * mx;
  auto syy = filt(y * y) - my * my;
  auto sxy = filt(x * y) - mx * my;
  auto map = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
  return map.mean().item<double>();
}

double perceptual_distance(const Image& a, const Image& b, const losses::PerceptualExtractor& ext) {
  require_same_shape(a, b);
  return losses::perceptual(a, b, ext);
}

double frechet_from_features(const torch::Tensor& features_a, const torch::Tensor& features_b) {
  if (features_a.dim() != 2 || features_b.dim() != 2 || features_a.size(1) != features_b.size(1)) {
    throw ShapeError("feature sets must be N×D with one D");
  }
  if (features_a.size(0) < 2 || features_b.size(0) < 2) throw InvalidArgument("each set needs at least 2 samples");
  auto fa = features_a.to(torch::kFloat64);
  auto fb = features_b.to(torch::kFloat64);
  auto mu_a = fa.mean(0), mu_b = fb.mean(0);
  auto cov = [](const torch::Tensor& f, const torch::Tensor& mu) {
    auto centered = f - mu;
    return torch::matmul(centered.t(), centered) / static_cast<double>(f.size(0) - 1);
  };
  auto sa = cov(fa, mu_a), sb = cov(fb, mu_b);

  // Tr((Σa Σb)^½) = Tr((Σa^½ Σb Σa^½)^½); the inner matrix is symmetric PSD.
  auto psd_sqrt = [](const torch::Tensor& m) {
    auto sym = (m + m.t()) * 0.5;
    auto [vals, vecs] = torch::linalg_eigh(sym);
    const double scale = std::max(1.0, vals.abs().max().item<double>());
    if (vals.min().item<double>() < -1e-8 * scale) throw NumericError("covariance product is not PSD");
    auto root = vals.clamp_min(0.0).sqrt();
    return std::make_pair(torch::matmul(vecs * root.unsqueeze(0), vecs.t()), root);
  };
  auto root_a = psd_sqrt(sa).first;
  auto inner = torch::matmul(torch::matmul(root_a, sb), root_a);
  const double trace_sqrt = psd_sqrt(inner).second.sum().item<double>();

  const double mean_term = (mu_a - mu_b).pow(2).sum().item<double>();
  const double value = mean_term + sa.trace().item<double>() + sb.trace().item<double>() - 2.0 * trace_sqrt;
  return std::max(value, 0.0);
}

double frechet_distance(const std::vector<Image>& set_a, const std::vector<Image>& set_b,
                        const losses::PerceptualExtractor& ext) {
  if (set_a.size() < 2 || set_b.size() < 2) throw InvalidArgument("each set needs at least 2 images");
  torch::NoGradGuard guard;
  auto pool = [&](const std::vector<Image>& set) { return ext.pooled(stack_images(set)).to(torch::kFloat64); };
  return frechet_from_features(pool(set_a), pool(set_b));
}

Report evaluate(const std::vector<Image>& pred, const std::vector<Image>& gt, const losses::PerceptualExtractor& ext) {
  if (pred.size() != gt.size() || pred.empty()) throw InvalidArgument("prediction and ground-truth sets must pair up");
  Report r;
  r.n = pred.size();
  for (size_t i = 0; i < pred.size(); ++i) {
    r.per_image_psnr.push_back(psnr(pred[i], gt[i]));
    r.per_image_ssim.push_back(ssim(pred[i], gt[i]));
    r.per_image_perceptual.push_back(perceptual_distance(pred[i], gt[i], ext));
  }
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  r.psnr = mean(r.per_image_psnr);
  r.ssim = mean(r.per_image_ssim);
  r.perceptual = mean(r.per_image_perceptual);
  r.fid_proxy = pred.size() >= 2 ? frechet_distance(pred, gt, ext) : std::numeric_limits<double>::quiet_NaN();
  return r;
}

Report evaluate_dirs(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir,
                     const losses::PerceptualExtractor& ext) {
  const auto pred_files = data::list_images(pred_dir);
  if (pred_files.empty()) throw EmptyDataset("no predictions in " + pred_dir.string());
  std::vector<Image> pred, gt;
  for (const auto& p : pred_files) {
    const auto match = gt_dir / p.filename();
    if (!std::filesystem::exists(match)) throw NotFound("ground truth for " + p.filename().string());
    pred.push_back(data::load_image(p));
    gt.push_back(data::load_image(match));
  }
  return evaluate(pred, gt, ext);
}

nlohmann::json psnr_json(double value) {
  if (std::isinf(value) && value > 0) return "inf";
  return value;
}

nlohmann::json to_json(const Report& r) {
  return {{"psnr", psnr_json(r.psnr)},
          {"ssim", r.ssim},
          {"perceptual", r.perceptual},
          {"fid_proxy", r.fid_proxy},
          {"n", r.n}};
}

}  // namespace ugp::metrics
