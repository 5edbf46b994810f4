#pragma once

#include "ugp/image.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace ugp::degrade {

/// Square, odd-sized, non-negative convolution kernel with unit sum.
struct BlurKernel {
  int size = 0;
  std::vector<float> weights;  // row-major size×size

  float at(int row, int col) const { return weights[static_cast<size_t>(row) * size + col]; }
  double sum() const;
  /// Center of mass as (row, col) in pixel coordinates.
  std::pair<double, double> center_of_mass() const;
  torch::Tensor tensor() const;  // size×size float32 view copy

  static BlurKernel delta(int size);
};

/// Motion-trajectory generator parameters. The defaults are the desk-scale
/// choices; the bank sidecar records whatever was used.
struct TrajectoryParams {
  int steps = 2000;
  double inertia = 0.99;
  double angular_sigma = 0.2;    // radians per step
  double magnitude_sigma = 0.05;  // log-normal step-size jitter
  double smooth_sigma = 1.0;      // pixels
  double min_extent = 0.25;       // fraction of the usable half-width
  double max_extent = 1.0;
};

void to_json(nlohmann::json& j, const TrajectoryParams& p);
void from_json(const nlohmann::json& j, TrajectoryParams& p);

std::vector<BlurKernel> generate_kernel_bank(int n, int size, uint64_t seed,
                                             const TrajectoryParams& params = {});

/// Writes `path` (n·size² little-endian float32) and `path.json` (sidecar
/// with n, size, seed, params).
void save_kernel_bank(const std::filesystem::path& path, const std::vector<BlurKernel>& bank,
                      uint64_t seed, const TrajectoryParams& params);
std::vector<BlurKernel> load_kernel_bank(const std::filesystem::path& path);

enum class Kind { noise, blur, downsample };

std::string to_string(Kind kind);
Kind kind_from_string(const std::string& name);

struct DegradationSpec {
  Kind kind = Kind::noise;
  double sigma = 0.3;
  double k = 30.0;
  std::string kernel_bank_path;
  int factor = 8;

  /// Throws InvalidArgument when a field violates its range.
  void validate() const;
  /// Stable short identifier derived from the canonical JSON form.
  std::string id() const;
};

void to_json(nlohmann::json& j, const DegradationSpec& s);
void from_json(const nlohmann::json& j, DegradationSpec& s);

/// Rates at or above this value skip the shot-noise draw entirely.
inline constexpr double kNoPoissonThreshold = 1e9;

/// y = clip(Poisson(x·k)/k + N(0, sigma²), 0, 1).
Image add_noise(const Image& img, double sigma, double k, uint64_t seed);
/// Same draw as add_noise without the final clip.
Image add_noise_unclipped(const Image& img, double sigma, double k, uint64_t seed);

/// Per-channel true convolution with reflect padding; output keeps the size.
Image apply_blur(const Image& img, const BlurKernel& kernel);

/// Catmull-Rom (a = -0.5) resampling with half-pixel centers, clipped to [0,1].
Image downsample_bicubic(const Image& img, int factor);
Image upsample_bicubic(const Image& img, int factor);

size_t select_kernel_index(uint64_t seed, size_t bank_size);

/// Holds the loaded kernel bank for blur specs so repeated calls avoid I/O.
class Degrader {
 public:
  explicit Degrader(DegradationSpec spec);
  Degrader(DegradationSpec spec, std::vector<BlurKernel> bank);

  Image operator()(const Image& img, uint64_t seed) const;
  /// Kernel index a blur spec would pick for `seed`.
  size_t kernel_index(uint64_t seed) const;

  const DegradationSpec& spec() const { return spec_; }
  const std::vector<BlurKernel>& bank() const { return bank_; }

 private:
  DegradationSpec spec_;
  std::vector<BlurKernel> bank_;
};

Image degrade(const Image& img, const DegradationSpec& spec, uint64_t seed);

}  // namespace ugp::degrade
