#pragma once

#include "ugp/image.hpp"
#include "ugp/losses.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <limits>
#include <vector>

namespace ugp::metrics {

/// 10·log10(1/MSE) for [0,1] images; +inf for identical inputs.
double psnr(const Image& a, const Image& b);

/// SSIM with an 11×11 Gaussian window (σ = 1.5), K1 = 0.01, K2 = 0.03, L = 1,
/// valid positions only, averaged over channels and positions.
double ssim(const Image& a, const Image& b);

double perceptual_distance(const Image& a, const Image& b, const losses::PerceptualExtractor& ext);

/// ‖μa − μb‖² + Tr(Σa + Σb − 2(ΣaΣb)^½) for N×D feature rows (N ≥ 2 each).
double frechet_from_features(const torch::Tensor& features_a, const torch::Tensor& features_b);

/// Fréchet distance of pooled extractor features ("FID-proxy").
double frechet_distance(const std::vector<Image>& set_a, const std::vector<Image>& set_b,
                        const losses::PerceptualExtractor& ext);

struct Report {
  double psnr = 0.0;
  double ssim = 0.0;
  double perceptual = 0.0;
  double fid_proxy = 0.0;
  size_t n = 0;
  std::vector<double> per_image_psnr, per_image_ssim, per_image_perceptual;
};

Report evaluate(const std::vector<Image>& pred, const std::vector<Image>& gt, const losses::PerceptualExtractor& ext);

/// Pairs files by name across the two directories.
Report evaluate_dirs(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir,
                     const losses::PerceptualExtractor& ext);

/// {psnr, ssim, perceptual, fid_proxy, n}; an infinite PSNR is written as "inf".
nlohmann::json to_json(const Report& r);
/// JSON value for a PSNR (number or "inf").
nlohmann::json psnr_json(double value);

}  // namespace ugp::metrics
