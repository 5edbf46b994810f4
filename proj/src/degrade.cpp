#include "ugp/degrade.hpp"

#include "ugp/errors.hpp"
#include "ugp/hash.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

namespace ugp::degrade {

namespace fs = std::filesystem;
using nlohmann::json;

double BlurKernel::sum() const {
  double s = 0.0;
  for (float w : weights) s += w;
  return s;
}

std::pair<double, double> BlurKernel::center_of_mass() const {
  double total = 0.0, row = 0.0, col = 0.0;
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      const double w = at(r, c);
      total += w;
      row += w * r;
      col += w * c;
    }
  }
  return {row / total, col / total};
}

torch::Tensor BlurKernel::tensor() const {
  return torch::from_blob(const_cast<float*>(weights.data()), {size, size}, torch::kFloat32).clone();
}

BlurKernel BlurKernel::delta(int size) {
  BlurKernel k{size, std::vector<float>(static_cast<size_t>(size) * size, 0.0f)};
  k.weights[static_cast<size_t>(size / 2) * size + size / 2] = 1.0f;
  return k;
}

void to_json(json& j, const TrajectoryParams& p) {
  j = json{{"steps", p.steps},
           {"inertia", p.inertia},
           {"angular_sigma", p.angular_sigma},
           {"magnitude_sigma", p.magnitude_sigma},
           {"smooth_sigma", p.smooth_sigma},
           {"min_extent", p.min_extent},
           {"max_extent", p.max_extent}};
}

void from_json(const json& j, TrajectoryParams& p) {
  p.steps = j.value("steps", p.steps);
  p.inertia = j.value("inertia", p.inertia);
  p.angular_sigma = j.value("angular_sigma", p.angular_sigma);
  p.magnitude_sigma = j.value("magnitude_sigma", p.magnitude_sigma);
  p.smooth_sigma = j.value("smooth_sigma", p.smooth_sigma);
  p.min_extent = j.value("min_extent", p.min_extent);
  p.max_extent = j.value("max_extent", p.max_extent);
}

namespace {

std::vector<double> gaussian_taps(double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> taps(static_cast<size_t>(2 * radius + 1));
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    taps[static_cast<size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
    total += taps[static_cast<size_t>(i + radius)];
  }
  for (double& t : taps) t /= total;
  return taps;
}

// Separable smoothing with zero boundary; trajectories keep a margin so no
// mass reaches the border.
void smooth(std::vector<double>& grid, int size, double sigma) {
  if (sigma <= 0.0) return;
  const auto taps = gaussian_taps(sigma);
  const int radius = static_cast<int>(taps.size() / 2);
  std::vector<double> tmp(grid.size(), 0.0);
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      double acc = 0.0;
      for (int t = -radius; t <= radius; ++t) {
        const int cc = c + t;
        if (cc >= 0 && cc < size) acc += taps[static_cast<size_t>(t + radius)] * grid[static_cast<size_t>(r) * size + cc];
      }
      tmp[static_cast<size_t>(r) * size + c] = acc;
    }
  }
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      double acc = 0.0;
      for (int t = -radius; t <= radius; ++t) {
        const int rr = r + t;
        if (rr >= 0 && rr < size) acc += taps[static_cast<size_t>(t + radius)] * tmp[static_cast<size_t>(rr) * size + c];
      }
      grid[static_cast<size_t>(r) * size + c] = acc;
    }
  }
}

void normalize(std::vector<double>& grid) {
  double total = 0.0;
  for (double& w : grid) {
    w = std::max(w, 0.0);
    total += w;
  }
  if (total <= 0.0) throw NumericError("degenerate kernel with zero mass");
  for (double& w : grid) w /= total;
}

BlurKernel make_kernel(int size, std::mt19937_64& rng, const TrajectoryParams& p) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);

  // 1. inertia-damped random walk
  std::vector<std::pair<double, double>> path{{0.0, 0.0}};
  double angle = 2.0 * std::numbers::pi * uniform(rng);
  double speed = 1.0;
  double vx = std::cos(angle), vy = std::sin(angle);
  double x = 0.0, y = 0.0;
  for (int s = 0; s < p.steps; ++s) {
    angle += p.angular_sigma * normal(rng);
    speed *= std::exp(p.magnitude_sigma * normal(rng));
    vx = p.inertia * vx + (1.0 - p.inertia) * speed * std::cos(angle);
    vy = p.inertia * vy + (1.0 - p.inertia) * speed * std::sin(angle);
    x += vx;
    y += vy;
    path.emplace_back(x, y);
  }
  const double extent_draw = p.min_extent + (p.max_extent - p.min_extent) * uniform(rng);

  double mx = 0.0, my = 0.0;
  for (auto [px, py] : path) {
    mx += px;
    my += py;
  }
  mx /= static_cast<double>(path.size());
  my /= static_cast<double>(path.size());
  double extent = 0.0;
  for (auto& [px, py] : path) {
    px -= mx;
    py -= my;
    extent = std::max({extent, std::abs(px), std::abs(py)});
  }
  const int margin = static_cast<int>(std::ceil(3.0 * p.smooth_sigma));
  const double usable = std::max(0.0, (size - 1) / 2.0 - margin - 1.0);
  const double scale = extent > 0.0 ? extent_draw * usable / extent : 0.0;

  // 2. bilinear splatting around the geometric center
  std::vector<double> grid(static_cast<size_t>(size) * size, 0.0);
  const double center = (size - 1) / 2.0;
  const double mass = 1.0 / static_cast<double>(path.size());
  for (auto [px, py] : path) {
    const double col = center + px * scale;
    const double row = center + py * scale;
    const int c0 = static_cast<int>(std::floor(col));
    const int r0 = static_cast<int>(std::floor(row));
    const double fc = col - c0, fr = row - r0;
    const double share[2][2] = {{(1 - fr) * (1 - fc), (1 - fr) * fc}, {fr * (1 - fc), fr * fc}};
    for (int dr = 0; dr < 2; ++dr) {
      for (int dc = 0; dc < 2; ++dc) {
        const int rr = r0 + dr, cc = c0 + dc;
        if (rr >= 0 && rr < size && cc >= 0 && cc < size) {
          grid[static_cast<size_t>(rr) * size + cc] += mass * share[dr][dc];
        }
      }
    }
  }

  // 3-4. smoothing, clamp, unit sum
  smooth(grid, size, p.smooth_sigma);
  normalize(grid);

  // 5. integer recentering by the center of mass
  double cr = 0.0, cc = 0.0;
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      cr += grid[static_cast<size_t>(r) * size + c] * r;
      cc += grid[static_cast<size_t>(r) * size + c] * c;
    }
  }
  const int shift_r = static_cast<int>(std::lround(center - cr));
  const int shift_c = static_cast<int>(std::lround(center - cc));
  if (shift_r != 0 || shift_c != 0) {
    std::vector<double> moved(grid.size(), 0.0);
    for (int r = 0; r < size; ++r) {
      for (int c = 0; c < size; ++c) {
        const int nr = r + shift_r, nc = c + shift_c;
        if (nr >= 0 && nr < size && nc >= 0 && nc < size) {
          moved[static_cast<size_t>(nr) * size + nc] = grid[static_cast<size_t>(r) * size + c];
        }
      }
    }
    grid.swap(moved);
    normalize(grid);
  }

  BlurKernel k{size, std::vector<float>(grid.size())};
  for (size_t i = 0; i < grid.size(); ++i) k.weights[i] = static_cast<float>(grid[i]);
  return k;
}

at::Generator make_generator(uint64_t seed) { return at::make_generator<at::CPUGeneratorImpl>(seed); }

void check_noise_args(double sigma, double k) {
  if (!(k > 0.0)) throw InvalidArgument("Poisson scale k must be positive");
  if (!(sigma >= 0.0)) throw InvalidArgument("Gaussian sigma must be non-negative");
}

// Catmull-Rom weights as a dense out×in resampling matrix (double precision).
torch::Tensor cubic_matrix(int64_t in, int64_t out, double scale) {
  constexpr double a = -0.5;
  auto cubic = [](double t) {
    t = std::abs(t);
    if (t <= 1.0) return (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0;
    if (t < 2.0) return a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a;
    return 0.0;
  };
  auto m = torch::zeros({out, in}, torch::kFloat64);
  auto acc = m.accessor<double, 2>();
  for (int64_t o = 0; o < out; ++o) {
    const double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    const auto base = static_cast<int64_t>(std::floor(src));
    const double t = src - static_cast<double>(base);
    for (int64_t tap = -1; tap <= 2; ++tap) {
      const int64_t idx = std::clamp<int64_t>(base + tap, 0, in - 1);
      acc[o][idx] += cubic(static_cast<double>(tap) - t);
    }
  }
  return m;
}

Image resample(const Image& img, int64_t out_h, int64_t out_w, double scale) {
  const auto rows = cubic_matrix(img.height(), out_h, scale);
  const auto cols = cubic_matrix(img.width(), out_w, scale);
  auto x = img.tensor().to(torch::kFloat64);
  auto y = torch::matmul(torch::matmul(rows, x), cols.t());
  return Image(y.clamp(0.0, 1.0).to(img.tensor().scalar_type()));
}

}  // namespace

std::vector<BlurKernel> generate_kernel_bank(int n, int size, uint64_t seed, const TrajectoryParams& params) {
  if (n < 1) throw InvalidArgument("kernel bank needs at least one kernel");
  if (size < 1 || size % 2 == 0) throw InvalidArgument("kernel size must be odd and positive");
  if (params.steps < 0) throw InvalidArgument("trajectory steps must be non-negative");
  std::vector<BlurKernel> bank;
  bank.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    std::mt19937_64 rng(splitmix64(seed + static_cast<uint64_t>(i)));
    bank.push_back(make_kernel(size, rng, params));
  }
  return bank;
}

void save_kernel_bank(const fs::path& path, const std::vector<BlurKernel>& bank, uint64_t seed,
                      const TrajectoryParams& params) {
  if (bank.empty()) throw InvalidArgument("empty kernel bank");
  const int size = bank.front().size;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IOError("cannot write " + path.string());
  for (const auto& k : bank) {
    if (k.size != size) throw ShapeError("kernel bank mixes sizes");
    out.write(reinterpret_cast<const char*>(k.weights.data()),
              static_cast<std::streamsize>(k.weights.size() * sizeof(float)));
  }
  if (!out) throw IOError("short write to " + path.string());
  json sidecar{{"n", bank.size()}, {"size", size}, {"seed", seed}, {"params", params}};
  std::ofstream meta(path.string() + ".json");
  if (!meta) throw IOError("cannot write sidecar for " + path.string());
  meta << sidecar.dump(2) << "\n";
}

std::vector<BlurKernel> load_kernel_bank(const fs::path& path) {
  const fs::path sidecar = path.string() + ".json";
  if (!fs::exists(path)) throw NotFound(path.string());
  if (!fs::exists(sidecar)) throw NotFound(sidecar.string());
  json meta;
  try {
    std::ifstream(sidecar) >> meta;
  } catch (const json::exception& e) {
    throw FormatError(sidecar.string() + ": " + e.what());
  }
  const auto n = meta.at("n").get<size_t>();
  const auto size = meta.at("size").get<int>();
  const auto per = static_cast<size_t>(size) * size;
  if (fs::file_size(path) != n * per * sizeof(float)) {
    throw FormatError("kernel bank size does not match sidecar: " + path.string());
  }
  std::ifstream in(path, std::ios::binary);
  std::vector<BlurKernel> bank(n, BlurKernel{size, std::vector<float>(per)});
  for (auto& k : bank) {
    in.read(reinterpret_cast<char*>(k.weights.data()), static_cast<std::streamsize>(per * sizeof(float)));
  }
  if (!in) throw IOError("short read from " + path.string());
  return bank;
}

std::string to_string(Kind kind) {
  switch (kind) {
    case Kind::noise: return "noise";
    case Kind::blur: return "blur";
    case Kind::downsample: return "downsample";
  }
  return "unknown";
}

Kind kind_from_string(const std::string& name) {
  if (name == "noise") return Kind::noise;
  if (name == "blur") return Kind::blur;
  if (name == "downsample") return Kind::downsample;
  throw InvalidArgument("unknown degradation kind '" + name + "'");
}

void DegradationSpec::validate() const {
  switch (kind) {
    case Kind::noise:
      check_noise_args(sigma, k);
      break;
    case Kind::blur:
      if (kernel_bank_path.empty()) throw InvalidArgument("blur spec needs kernel_bank_path");
      break;
    case Kind::downsample:
      if (factor < 1 || (factor & (factor - 1)) != 0) {
        throw InvalidArgument("downsample factor must be a power of two >= 1");
      }
      break;
  }
}

std::string DegradationSpec::id() const {
  json j = *this;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(j.dump())));
  return to_string(kind) + "-" + std::string(buf).substr(0, 8);
}

void to_json(json& j, const DegradationSpec& s) {
  j = json{{"kind", to_string(s.kind)}};
  switch (s.kind) {
    case Kind::noise:
      j["sigma"] = s.sigma;
      j["k"] = s.k;
      break;
    case Kind::blur:
      j["kernel_bank_path"] = s.kernel_bank_path;
      break;
    case Kind::downsample:
      j["factor"] = s.factor;
      break;
  }
}

void from_json(const json& j, DegradationSpec& s) {
  s.kind = kind_from_string(j.at("kind").get<std::string>());
  s.sigma = j.value("sigma", s.sigma);
  s.k = j.value("k", s.k);
  s.kernel_bank_path = j.value("kernel_bank_path", s.kernel_bank_path);
  s.factor = j.value("factor", s.factor);
}

Image add_noise_unclipped(const Image& img, double sigma, double k, uint64_t seed) {
  check_noise_args(sigma, k);
  auto gen = make_generator(seed);
  const auto& x = img.tensor();
  torch::Tensor y = x;
  if (k < kNoPoissonThreshold) {
    auto rates = (x.to(torch::kFloat64).clamp_min(0.0) * k);
    y = (at::poisson(rates, gen) / k).to(x.scalar_type());
  }
  if (sigma > 0.0) {
    y = y + sigma * at::randn(x.sizes(), gen, x.options());
  }
  return Image(y);
}

Image add_noise(const Image& img, double sigma, double k, uint64_t seed) {
  return add_noise_unclipped(img, sigma, k, seed).clipped();
}

Image apply_blur(const Image& img, const BlurKernel& kernel) {
  if (kernel.size < 1 || kernel.size % 2 == 0 ||
      kernel.weights.size() != static_cast<size_t>(kernel.size) * kernel.size) {
    throw InvalidArgument("malformed blur kernel");
  }
  if (kernel.size > img.height() || kernel.size > img.width()) {
    throw InvalidArgument("kernel larger than image");
  }
  const auto dtype = img.tensor().scalar_type();
  const int64_t pad = kernel.size / 2;
  auto x = img.tensor().unsqueeze(1);  // C×1×H×W, channels as batch
  if (pad > 0) {
    x = torch::nn::functional::pad(
        x, torch::nn::functional::PadFuncOptions({pad, pad, pad, pad}).mode(torch::kReflect));
  }
  auto w = kernel.tensor().to(dtype).flip({0, 1}).view({1, 1, kernel.size, kernel.size});
  auto y = torch::conv2d(x, w);
  return Image(y.squeeze(1));
}

Image downsample_bicubic(const Image& img, int factor) {
  if (factor < 1) throw InvalidArgument("factor must be >= 1");
  if (img.height() % factor != 0 || img.width() % factor != 0) {
    throw InvalidArgument("image dimensions not divisible by factor " + std::to_string(factor));
  }
  if (factor == 1) return img.clipped();
  return resample(img, img.height() / factor, img.width() / factor, static_cast<double>(factor));
}

Image upsample_bicubic(const Image& img, int factor) {
  if (factor < 1) throw InvalidArgument("factor must be >= 1");
  if (factor == 1) return img.clipped();
  return resample(img, img.height() * factor, img.width() * factor, 1.0 / factor);
}

size_t select_kernel_index(uint64_t seed, size_t bank_size) {
  if (bank_size == 0) throw InvalidArgument("empty kernel bank");
  return static_cast<size_t>(splitmix64(seed ^ 0xB10Bull) % bank_size);
}

Degrader::Degrader(DegradationSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  if (spec_.kind == Kind::blur) bank_ = load_kernel_bank(spec_.kernel_bank_path);
}

Degrader::Degrader(DegradationSpec spec, std::vector<BlurKernel> bank)
    : spec_(std::move(spec)), bank_(std::move(bank)) {
  if (spec_.kind == Kind::blur && bank_.empty()) throw InvalidArgument("blur spec needs a kernel bank");
  if (spec_.kind != Kind::blur) spec_.validate();
}

size_t Degrader::kernel_index(uint64_t seed) const { return select_kernel_index(seed, bank_.size()); }

Image Degrader::operator()(const Image& img, uint64_t seed) const {
  switch (spec_.kind) {
    case Kind::noise: return add_noise(img, spec_.sigma, spec_.k, seed);
    case Kind::blur: return apply_blur(img, bank_[kernel_index(seed)]).clipped();
    case Kind::downsample: return downsample_bicubic(img, spec_.factor);
  }
  throw InvalidArgument("unknown degradation kind");
}

Image degrade(const Image& img, const DegradationSpec& spec, uint64_t seed) { return Degrader(spec)(img, seed); }

}  // namespace ugp::degrade
