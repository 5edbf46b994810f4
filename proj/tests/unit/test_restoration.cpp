#include "../oracles.hpp"
#include "helpers.hpp"

#include "ugp/errors.hpp"
#include "ugp/nn.hpp"
#include "ugp/restoration.hpp"

#include <doctest.h>

using namespace ugp;
using namespace ugp::restoration;

namespace {

// Direct test double whose output is its input.
class IdentityBackboneImpl : public BackboneImpl {
 public:
  IdentityBackboneImpl() {
    proj = register_module("proj", nn::conv3x3(3, 3));
    torch::NoGradGuard guard;
    proj->weight.zero_();
    proj->bias.zero_();
    for (int c = 0; c < 3; ++c) proj->weight[c][c][1][1] = 1.0;
  }
  AdapterKind kind() const override { return AdapterKind::direct; }
  int feature_channels() const override { return 3; }
  torch::Tensor features(const torch::Tensor& x) override { return x; }
  torch::nn::Conv2d& projection() override { return proj; }

  torch::nn::Conv2d proj{nullptr};
};

void ensure_identity_registered() {
  static const bool once = [] {
    register_backbone("test-identity", [](const BackboneConfig&) { return std::make_shared<IdentityBackboneImpl>(); });
    return true;
  }();
  (void)once;
}

BackboneConfig config(const std::string& id, int channels = 64) {
  BackboneConfig c;
  c.id = id;
  c.feature_channels = channels;
  return c;
}

}  // namespace

TEST_SUITE("restoration") {
  TEST_CASE("built-in backbones and the registry") {
    auto ids = registered_backbones();
    CHECK(std::find(ids.begin(), ids.end(), "tiny-unet") != ids.end());
    CHECK(std::find(ids.begin(), ids.end(), "tiny-residual") != ids.end());
    CHECK(build_backbone(config("tiny-unet"))->kind() == AdapterKind::direct);
    CHECK(build_backbone(config("tiny-residual"))->kind() == AdapterKind::residual);
    CHECK_THROWS_AS(build_backbone(config("no-such-net")), NotFound);
    CHECK_THROWS_AS(register_backbone("tiny-unet", [](const BackboneConfig& c) { return build_backbone(c); }), Conflict);
  }

  TEST_CASE("default width and shape contract for every built-in") {
    const BackboneConfig defaults;
    CHECK(defaults.feature_channels == 64);
    auto x = testing::random_image(3, 64, 64, 1);
    for (const char* id : {"tiny-unet", "tiny-residual"}) {
      RestorationModule m(config(id));
      CHECK(m->adapter().feature_channels == 64);
      auto out = restore(x, *m);
      CHECK(out.x_reg.height() == 64);
      CHECK(out.x_reg.width() == 64);
      CHECK(out.f_reg.sizes() == torch::IntArrayRef({64, 64, 64}));
      CHECK(out.x_reg.tensor().min().item<double>() >= 0.0);
      CHECK(out.x_reg.tensor().max().item<double>() <= 1.0);
    }
  }

  TEST_CASE("restore_direct with a test double and determinism") {
    ensure_identity_registered();
    RestorationModule m(config("test-identity", 3));
    auto x = testing::random_image(3, 16, 16, 2);
    auto out = restore_direct(x, *m);
    CHECK(testing::max_abs_diff(out.x_reg.tensor(), x.tensor()) <= 1e-6);
    CHECK(torch::equal(out.f_reg, x.tensor().to(torch::kFloat32)));

    RestorationModule unet(config("tiny-unet", 16));
    auto y = testing::random_image(3, 32, 32, 3);
    auto a = restore_direct(y, *unet), b = restore_direct(y, *unet);
    CHECK(torch::equal(a.x_reg.tensor(), b.x_reg.tensor()));
    CHECK(torch::equal(a.f_reg, b.f_reg));
  }

  TEST_CASE("kind mismatches") {
    RestorationModule unet(config("tiny-unet", 8));
    RestorationModule res(config("tiny-residual", 8));
    RestorationModule bare(config("tiny-residual", 8), false);
    auto x = testing::random_image(3, 16, 16, 4);
    CHECK_THROWS_AS(restore_residual(x, *unet), InvalidArgument);
    CHECK_THROWS_AS(restore_direct(x, *res), InvalidArgument);
    CHECK_THROWS_AS(restore_residual(x, *bare), InvalidArgument);
    CHECK_NOTHROW(restore_residual(x, *res));
  }

  TEST_CASE("null initialization reproduces the backbone's feature path") {
    RestorationModule m(config("tiny-residual", 16));
    m->structure_encoder->zero_output();
    m->merging->copy_projection(m->backbone->projection());
    auto x = testing::random_image(3, 32, 32, 5).tensor().to(torch::kFloat32).unsqueeze(0);
    torch::NoGradGuard guard;
    auto out = m->forward(x);
    CHECK(testing::max_abs_diff(out.x_reg, m->backbone->feature_path(x)) <= 1e-5);
  }

  TEST_CASE("without the adapter the residual backbone runs unmodified") {
    RestorationModule m(config("tiny-residual", 8), false);
    CHECK_FALSE(m->uses_adapter());
    auto x = testing::random_image(3, 16, 16, 6).tensor().to(torch::kFloat32).unsqueeze(0);
    torch::NoGradGuard guard;
    CHECK(torch::equal(m->forward(x).x_reg, m->backbone->forward(x)));
    CHECK(m->forward(x).f_reg.size(1) == 8);
  }

  TEST_CASE("residual merge rejects mismatched summands") {
    MergingNetwork mg(8);
    CHECK_THROWS_AS(residual_merge(torch::zeros({1, 8, 4, 4}), torch::zeros({1, 4, 4, 4}), *mg), ShapeError);
  }

  TEST_CASE("gradient through R_se matches central differences") {
    RestorationModule m(config("tiny-residual", 6));
    m->to(torch::kFloat64);
    auto x = testing::random_image(3, 8, 8, 7).tensor().unsqueeze(0);
    auto objective = [&] { return m->forward(x).x_reg.pow(2).sum(); };
    auto& w = m->structure_encoder->conv1->weight;
    m->zero_grad();
    objective().backward();
    auto grad = w.grad().clone().view(-1);
    for (int64_t idx : {0, 7, 19, 33, 50, 80, 101, 140, 155, 161}) {
      const double numeric = oracle::central_difference(w, idx, 1e-6, [&] { return objective().item<double>(); });
      CHECK(oracle::relative_error(grad[idx].item<double>(), numeric) < 1e-3);
    }
  }
}
