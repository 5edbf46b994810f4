#include "../oracles.hpp"
#include "helpers.hpp"

#include "ugp/data.hpp"
#include "ugp/errors.hpp"
#include "ugp/metrics.hpp"

#include <doctest.h>

using namespace ugp;
using namespace ugp::metrics;

TEST_SUITE("metrics") {
  TEST_CASE("PSNR closed forms") {
    auto zero = Image::zeros(3, 8, 8);
    CHECK(psnr(zero, Image::constant(3, 8, 8, 0.1)) == doctest::Approx(20.0).epsilon(1e-6));
    CHECK(std::isinf(psnr(zero, zero)));
    CHECK(psnr(zero, Image::constant(3, 8, 8, 0.5)) == doctest::Approx(6.0206).epsilon(1e-4));
    CHECK_THROWS_AS(psnr(zero, Image::zeros(3, 8, 4)), ShapeError);
  }

  TEST_CASE("PSNR decreases as error grows") {
    auto gt = testing::random_image(3, 16, 16, 1);
    auto noise = testing::randn({3, 16, 16}, 2);
    double last = std::numeric_limits<double>::infinity();
    for (double s : {0.01, 0.02, 0.05, 0.1}) {
      const double v = psnr(Image(gt.tensor() + s * noise), gt);
      CHECK(v < last);
      last = v;
    }
  }

  TEST_CASE("PSNR and SSIM match the oracles") {
    for (uint64_t i = 0; i < 4; ++i) {
      auto a = testing::random_image(3, 16, 20, 10 + i);
      auto b = Image((a.tensor() + 0.1 * testing::randn({3, 16, 20}, 20 + i)).clamp(0.0, 1.0));
      auto ma = oracle::from_tensor(a.tensor()), mb = oracle::from_tensor(b.tensor());
      CHECK(std::abs(psnr(a, b) - oracle::psnr(ma, mb)) <= 1e-9);
      CHECK(std::abs(ssim(a, b) - oracle::ssim(ma, mb)) <= 1e-9);
    }
  }

  TEST_CASE("SSIM properties") {
    auto a = testing::random_image(3, 16, 16, 30), b = testing::random_image(3, 16, 16, 31);
    CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-12));
    CHECK(ssim(a, b) < 1.0);
    CHECK(ssim(a, b) >= -1.0);
    // Shifting both images leaves the contrast-structure term unchanged; identical
    // shifted pairs stay at exactly one.
    auto shifted = Image(a.tensor() * 0.5 + 0.25);
    CHECK(ssim(shifted, shifted) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK_THROWS_AS(ssim(Image::zeros(3, 10, 16), Image::zeros(3, 10, 16)), InvalidArgument);
    CHECK_THROWS_AS(ssim(a, Image::zeros(3, 16, 12)), ShapeError);
  }

  TEST_CASE("perceptual distance") {
    auto ext = losses::PerceptualExtractor::random(1, {4, 8});
    auto a = testing::random_image(3, 16, 16, 40), b = testing::random_image(3, 16, 16, 41);
    CHECK(perceptual_distance(a, a, ext) == 0.0);
    CHECK(perceptual_distance(a, b, ext) > 0.0);
    CHECK_THROWS_AS(perceptual_distance(a, Image::zeros(3, 8, 8), ext), ShapeError);
  }

  TEST_CASE("Fréchet distance") {
    auto fa = testing::randn({40, 6}, 50), fb = testing::randn({30, 6}, 51) * 1.5 + 0.3;
    CHECK(frechet_from_features(fa, fa) == doctest::Approx(0.0).epsilon(1e-9));
    // Equal covariances reduce it to the squared mean gap.
    auto shift = torch::tensor({1.0, -2.0, 0.0, 0.5, 0.0, 3.0}, torch::kFloat64);
    CHECK(frechet_from_features(fa, fa + shift) == doctest::Approx(shift.pow(2).sum().item<double>()).epsilon(1e-9));
    const double want = oracle::frechet(oracle::to_eigen(fa), oracle::to_eigen(fb));
    CHECK(std::abs(frechet_from_features(fa, fb) - want) <= 1e-5 * std::max(1.0, want));
    CHECK(frechet_from_features(fa, fb) == doctest::Approx(frechet_from_features(fb, fa)).epsilon(1e-9));
    CHECK_THROWS_AS(frechet_from_features(fa.slice(0, 0, 1), fb), InvalidArgument);
    CHECK_THROWS_AS(frechet_from_features(fa, fb.slice(1, 0, 5)), ShapeError);

    auto ext = losses::PerceptualExtractor::random(2, {4, 8});
    std::vector<Image> set{testing::random_image(3, 8, 8, 60), testing::random_image(3, 8, 8, 61)};
    CHECK_THROWS_AS(frechet_distance({set[0]}, set, ext), InvalidArgument);
    CHECK(frechet_distance(set, set, ext) == doctest::Approx(0.0).epsilon(1e-9));
  }

  TEST_CASE("reports and JSON") {
    auto ext = losses::PerceptualExtractor::random(3, {4, 8});
    std::vector<Image> gt{testing::random_image(3, 16, 16, 70), testing::random_image(3, 16, 16, 71)};
    auto r = evaluate(gt, gt, ext);
    CHECK(r.n == 2);
    CHECK(std::isinf(r.psnr));
    CHECK(r.ssim == doctest::Approx(1.0));
    auto j = to_json(r);
    CHECK(j.at("psnr") == "inf");
    CHECK(j.at("n") == 2);
    CHECK(psnr_json(31.5) == 31.5);
    CHECK_THROWS_AS(evaluate({gt[0]}, gt, ext), InvalidArgument);

    testing::TempDir tmp("evaldirs");
    std::filesystem::create_directories(tmp / "pred");
    std::filesystem::create_directories(tmp / "gt");
    data::save_image(gt[0], tmp / "pred" / "a.png");
    data::save_image(gt[0], tmp / "gt" / "a.png");
    data::save_image(gt[1], tmp / "pred" / "b.png");
    CHECK_THROWS_AS(evaluate_dirs(tmp / "pred", tmp / "gt", ext), NotFound);
    data::save_image(gt[1], tmp / "gt" / "b.png");
    CHECK(std::isinf(evaluate_dirs(tmp / "pred", tmp / "gt", ext).psnr));
  }
}
