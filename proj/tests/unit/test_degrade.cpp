#include "../oracles.hpp"
#include "helpers.hpp"

#include "ugp/degrade.hpp"
#include "ugp/errors.hpp"

#include <doctest.h>

#include <fstream>

using namespace ugp;
using namespace ugp::degrade;
using testing::TempDir;

namespace {

std::vector<double> as_double(const BlurKernel& k) { return {k.weights.begin(), k.weights.end()}; }

BlurKernel random_kernel(int size, uint64_t seed) {
  auto w = torch::rand({size, size}, at::make_generator<at::CPUGeneratorImpl>(seed), torch::kFloat64);
  w = w / w.sum();
  BlurKernel k{size, std::vector<float>(static_cast<size_t>(size * size))};
  auto f = w.to(torch::kFloat32).contiguous();
  std::copy(f.data_ptr<float>(), f.data_ptr<float>() + f.numel(), k.weights.begin());
  return k;
}

}  // namespace

TEST_SUITE("degrade") {
  TEST_CASE("kernel bank properties") {
    auto bank = generate_kernel_bank(25, 31, 4);
    REQUIRE(bank.size() == 25);
    for (const auto& k : bank) {
      REQUIRE(k.size == 31);
      CHECK(*std::min_element(k.weights.begin(), k.weights.end()) >= 0.0f);
      CHECK(std::abs(k.sum() - 1.0) <= 1e-6);
      auto [r, c] = k.center_of_mass();
      CHECK(std::abs(r - 15.0) <= 1.0);
      CHECK(std::abs(c - 15.0) <= 1.0);
    }
    // Kernels differ from each other and are reproducible.
    CHECK(bank[0].weights != bank[1].weights);
    CHECK(generate_kernel_bank(3, 31, 4)[2].weights == bank[2].weights);
  }

  TEST_CASE("kernel bank argument checks") {
    CHECK_THROWS_AS(generate_kernel_bank(1, 30, 0), InvalidArgument);
    CHECK_THROWS_AS(generate_kernel_bank(0, 31, 0), InvalidArgument);
  }

  TEST_CASE("zero-length trajectory gives the smoothed delta") {
    TrajectoryParams p;
    p.steps = 0;
    auto k = generate_kernel_bank(1, 15, 77, p).front();
    // Independent construction: a normalized, 3σ-truncated Gaussian centred on the kernel.
    const double sigma = p.smooth_sigma;
    const int radius = static_cast<int>(std::ceil(3 * sigma));
    double total = 0.0;
    std::vector<double> expect(15 * 15, 0.0);
    for (int r = 0; r < 15; ++r)
      for (int c = 0; c < 15; ++c) {
        const int dr = r - 7, dc = c - 7;
        if (std::abs(dr) > radius || std::abs(dc) > radius) continue;
        expect[r * 15 + c] = std::exp(-(dr * dr + dc * dc) / (2 * sigma * sigma));
        total += expect[r * 15 + c];
      }
    double worst = 0.0;
    for (int i = 0; i < 15 * 15; ++i) worst = std::max(worst, std::abs(expect[i] / total - k.weights[i]));
    CHECK(worst <= 1e-7);
  }

  TEST_CASE("kernel bank file round trip") {
    TempDir tmp("bank");
    TrajectoryParams p;
    p.steps = 300;
    auto bank = generate_kernel_bank(4, 9, 12, p);
    save_kernel_bank(tmp / "bank.bin", bank, 12, p);
    CHECK(std::filesystem::file_size(tmp / "bank.bin") == 4 * 81 * sizeof(float));
    nlohmann::json meta;
    std::ifstream(tmp.path() / "bank.bin.json") >> meta;
    CHECK(meta.at("n") == 4);
    CHECK(meta.at("size") == 9);
    CHECK(meta.at("seed") == 12);
    CHECK(meta.at("params").at("steps") == 300);
    auto back = load_kernel_bank(tmp / "bank.bin");
    REQUIRE(back.size() == 4);
    for (size_t i = 0; i < 4; ++i) CHECK(back[i].weights == bank[i].weights);
    CHECK_THROWS_AS(load_kernel_bank(tmp / "missing.bin"), NotFound);
  }

  TEST_CASE("noise: degenerate parameters are the identity") {
    auto img = testing::random_image(3, 16, 16, 1);
    auto out = add_noise(img, 0.0, 1e9, 5);
    CHECK(torch::equal(out.tensor(), img.tensor()));
    DegradationSpec s;
    s.sigma = 0.0;
    s.k = 1e9;
    CHECK(torch::equal(degrade::degrade(img, s, 3).tensor(), img.tensor()));
  }

  TEST_CASE("noise: determinism and argument checks") {
    auto img = testing::random_image(3, 16, 16, 2);
    CHECK(torch::equal(add_noise(img, 0.3, 30, 9).tensor(), add_noise(img, 0.3, 30, 9).tensor()));
    CHECK_FALSE(torch::equal(add_noise(img, 0.3, 30, 9).tensor(), add_noise(img, 0.3, 30, 10).tensor()));
    CHECK_THROWS_AS(add_noise(img, 0.3, 0.0, 1), InvalidArgument);
    CHECK_THROWS_AS(add_noise(img, 0.3, -1.0, 1), InvalidArgument);
    CHECK_THROWS_AS(add_noise(img, -0.1, 30, 1), InvalidArgument);
    auto clipped = add_noise(img, 0.3, 30, 4).tensor();
    CHECK(clipped.min().item<double>() >= 0.0);
    CHECK(clipped.max().item<double>() <= 1.0);
  }

  TEST_CASE("noise: sample statistics before clipping") {
    const auto img = Image::constant(3, 256, 256, 0.5);
    const double n = 3.0 * 256 * 256;
    const double sd = std::sqrt(0.3 * 0.3 + 0.5 / 30.0);
    for (uint64_t seed = 0; seed < 5; ++seed) {
      auto err = add_noise_unclipped(img, 0.3, 30, seed).tensor().to(torch::kFloat64) - 0.5;
      const double mean = err.mean().item<double>();
      const double std = err.std().item<double>();
      CHECK(std::abs(mean) <= 3.0 * sd / std::sqrt(n));
      CHECK(std::abs(std - sd) <= 3.0 * sd / std::sqrt(2.0 * (n - 1)));
    }
  }

  TEST_CASE("blur: identities") {
    auto img = testing::random_image(3, 12, 12, 3);
    CHECK(torch::equal(apply_blur(img, BlurKernel::delta(5)).tensor(), img.tensor()));
    auto flat = Image::constant(3, 12, 12, 0.37);
    auto out = apply_blur(flat, random_kernel(7, 8)).tensor();
    CHECK((out - 0.37).abs().max().item<double>() <= 1e-6);
    CHECK_THROWS_AS(apply_blur(img, random_kernel(13, 1)), InvalidArgument);
  }

  TEST_CASE("blur: brute-force convolution oracle") {
    auto img = testing::random_image(3, 16, 16, 4);
    auto k = random_kernel(5, 6);
    auto got = oracle::from_tensor(apply_blur(img, k).tensor());
    auto want = oracle::convolve_reflect(oracle::from_tensor(img.tensor()), as_double(k), 5);
    double worst = 0.0;
    for (size_t i = 0; i < got.v.size(); ++i) worst = std::max(worst, std::abs(got.v[i] - want.v[i]));
    CHECK(worst <= 1e-6);
  }

  TEST_CASE("blur: linearity") {
    auto x = testing::random_image(3, 16, 16, 5).tensor();
    auto y = testing::random_image(3, 16, 16, 6).tensor();
    auto k = random_kernel(5, 7);
    const double a = 0.7, b = -1.3;
    auto lhs = apply_blur(Image(a * x + b * y), k).tensor();
    auto rhs = a * apply_blur(Image(x), k).tensor() + b * apply_blur(Image(y), k).tensor();
    CHECK(testing::max_abs_diff(lhs, rhs) <= 1e-6);
  }

  TEST_CASE("bicubic: shapes, identity and constants") {
    auto big = testing::random_image(3, 512, 512, 7);
    auto small = downsample_bicubic(big, 8);
    CHECK(small.height() == 64);
    CHECK(small.width() == 64);
    auto img = testing::random_image(3, 16, 16, 8);
    CHECK(torch::equal(downsample_bicubic(img, 1).tensor(), img.tensor()));
    auto flat = Image::constant(3, 32, 32, 0.6);
    CHECK((downsample_bicubic(flat, 4).tensor() - 0.6).abs().max().item<double>() <= 1e-12);
    CHECK((upsample_bicubic(downsample_bicubic(flat, 4), 4).tensor() - 0.6).abs().max().item<double>() <= 1e-12);
    CHECK_THROWS_AS(downsample_bicubic(testing::random_image(3, 30, 32, 1), 4), InvalidArgument);
  }

  TEST_CASE("bicubic: linear ramps are reproduced away from the border") {
    auto ramp = (torch::arange(32, torch::kFloat64) / 64.0).view({1, 1, 32}).expand({3, 32, 32}).contiguous();
    auto out = downsample_bicubic(Image(ramp), 2).tensor();
    for (int i = 2; i < 14; ++i) {
      // Output pixel i samples input coordinate 2i + 0.5.
      CHECK(out[0][5][i].item<double>() == doctest::Approx((2 * i + 0.5) / 64.0).epsilon(1e-12));
    }
  }

  TEST_CASE("spec validation and ids") {
    DegradationSpec s;
    s.kind = Kind::noise;
    s.k = 0;
    CHECK_THROWS_AS(s.validate(), InvalidArgument);
    s = {};
    s.sigma = -1;
    CHECK_THROWS_AS(s.validate(), InvalidArgument);
    s = {};
    s.kind = Kind::downsample;
    s.factor = 3;
    CHECK_THROWS_AS(s.validate(), InvalidArgument);
    s.factor = 0;
    CHECK_THROWS_AS(s.validate(), InvalidArgument);
    s.factor = 8;
    CHECK_NOTHROW(s.validate());
    DegradationSpec t = s;
    CHECK(s.id() == t.id());
    t.factor = 4;
    CHECK(s.id() != t.id());
    CHECK_THROWS_AS(kind_from_string("jpeg"), InvalidArgument);
    nlohmann::json j = s;
    CHECK(j.get<DegradationSpec>().id() == s.id());
  }

  TEST_CASE("degrade dispatch") {
    DegradationSpec down;
    down.kind = Kind::downsample;
    down.factor = 8;
    auto out = degrade::degrade(testing::random_image(3, 64, 64, 9), down, 1);
    CHECK(out.height() == 8);
    CHECK(out.width() == 8);

    DegradationSpec blur;
    blur.kind = Kind::blur;
    Degrader d(blur, generate_kernel_bank(10, 7, 3));
    CHECK(d.kernel_index(42) == d.kernel_index(42));
    auto img = testing::random_image(3, 16, 16, 10);
    CHECK(torch::equal(d(img, 42).tensor(), d(img, 42).tensor()));
    CHECK(torch::equal(d(img, 42).tensor(), apply_blur(img, d.bank()[d.kernel_index(42)]).clipped().tensor()));
  }
}
