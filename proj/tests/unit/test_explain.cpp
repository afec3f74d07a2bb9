#include "fixtures.hpp"

#include "ecvd/explain/gradcam.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>

using namespace ecvd;
using namespace ecvd::explain;
using backbone::BackboneKind;
using testing::ensemble;
using testing::noise_batch;

namespace {

const std::filesystem::path kGolden = std::filesystem::path(ECVD_TEST_DATA_DIR) / "overlay_checkerboard.png";

GradCamMap checkerboard_map() {
  GradCamMap m;
  m.raw = Eigen::MatrixXd::Zero(4, 4);
  m.upsampled.resize(32, 32);
  for (Index y = 0; y < 32; ++y) {
    for (Index x = 0; x < 32; ++x) m.upsampled(y, x) = ((y / 8 + x / 8) % 2) ? 1.0 : 0.0;
  }
  return m;
}

data::ImageTensor gradient_base() {
  data::ImageTensor base({1, 3, 32, 32});
  for (Index y = 0; y < 32; ++y) {
    for (Index x = 0; x < 32; ++x) {
      base(0, 0, y, x) = float(x) / 31.f;
      base(0, 1, y, x) = float(y) / 31.f;
      base(0, 2, y, x) = 0.5f;
    }
  }
  return base;
}

}  // namespace

TEST_CASE("single positive channel: map is that channel's activation, normalized") {
  Tensor<double> act({1, 3, 4, 4}), grad({1, 3, 4, 4});
  Rng rng(1);
  for (Index i = 0; i < act.size(); ++i) act.vec()(i) = rng.uniform();
  grad.plane(0, 1).setConstant(2.5);
  const auto m = cam_from_activation(act, grad, 4, 4);
  CHECK(m.channel_weights == std::vector<double>{0, 2.5, 0});
  const Eigen::MatrixXd a = act.plane(0, 1);
  CHECK((m.raw - 2.5 * a).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((m.upsampled - normalize_min_max(a)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("negative contributions are rectified away") {
  Tensor<double> act({1, 2, 3, 3}, 1.0), grad({1, 2, 3, 3});
  grad.plane(0, 0).setConstant(-1);
  grad.plane(0, 1).setConstant(-0.5);
  const auto m = cam_from_activation(act, grad, 6, 6);
  CHECK(m.raw.isZero(0));
  CHECK(m.upsampled.isZero(0));
  CHECK(m.upsampled.rows() == 6);
}

TEST_CASE("min-max normalization edge cases") {
  CHECK(normalize_min_max(Eigen::MatrixXd::Constant(2, 2, 3.0)).isOnes());
  CHECK(normalize_min_max(Eigen::MatrixXd::Zero(2, 2)).isZero());
  Eigen::MatrixXd m(1, 3);
  m << 1, 2, 5;
  CHECK(normalize_min_max(m)(0, 1) == doctest::Approx(0.25));
}

TEST_CASE("ensemble Grad-CAM at the default layer is 7x7, non-negative and upsampled to 224") {
  auto model = ensemble<float>({BackboneKind::SqueezeNet, BackboneKind::EfficientNetB0});
  nn::recalibrate_batch_norm(model.head(), model.features(noise_batch<float>(3, 4)));
  const auto x = noise_batch<float>(1, 5);
  for (int target = 0; target < 3; ++target) {
    for (auto score : {ScoreMode::Logit, ScoreMode::Softmax}) {
      const auto m = grad_cam(model, x, target, kDefaultEnsembleLayer, score);
      CHECK(m.raw.rows() == 7);
      CHECK(m.raw.cols() == 7);
      CHECK(m.raw.minCoeff() >= 0);
      CHECK(m.upsampled.rows() == 224);
      CHECK(m.upsampled.minCoeff() >= 0);
      CHECK(m.upsampled.maxCoeff() <= 1);
      if (!m.raw.isZero(0)) CHECK(m.upsampled.maxCoeff() == doctest::Approx(1.0));
    }
  }
  const auto layers = gradcam_layers(model);
  CHECK(std::find(layers.begin(), layers.end(), "head.relu2") != layers.end());
  CHECK(std::find(layers.begin(), layers.end(), "squeezenet.features.12") != layers.end());
  const auto branch = grad_cam(model, x, 0, "squeezenet.features.12");
  CHECK(branch.raw.rows() == 13);
  const auto eff = grad_cam(model, x, 0, "efficientnetb0.features.8");
  CHECK(eff.raw.rows() == 7);
  try {
    grad_cam(model, x, 0, "head.relu9");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("head.relu2") != std::string::npos);
  }
  CHECK_THROWS_AS(grad_cam(model, x, 3), Error);
}

TEST_CASE("backbone Grad-CAM defaults to the last feature node") {
  auto net = backbone::build_backbone<float>(BackboneKind::SqueezeNet, 3, 2);
  backbone::recalibrate(net, noise_batch<float>(2, 3));
  const auto m = grad_cam(net, noise_batch<float>(1, 6), 1);
  CHECK(m.layer == "features.12");
  CHECK(m.raw.rows() == 13);
}

TEST_CASE("overlay: zero map keeps the base, unit map tints uniformly") {
  const auto base = gradient_base();
  GradCamMap zero;
  zero.upsampled = Eigen::MatrixXd::Zero(32, 32);
  CHECK(render_overlay(zero, base, 0.4).vec() == base.vec());
  GradCamMap one;
  one.upsampled = Eigen::MatrixXd::Ones(32, 32);
  const auto tinted = render_overlay(one, base, 0.4);
  const auto hot = jet(1.0);
  for (Index c = 0; c < 3; ++c) {
    const float expected = float(0.6 * base(0, c, 5, 9) + 0.4 * hot[std::size_t(c)]);
    CHECK(tinted(0, c, 5, 9) == doctest::Approx(expected).epsilon(1e-6));
  }
  CHECK(jet(0.0)[2] > jet(0.0)[0]);
  CHECK(jet(1.0)[0] > jet(1.0)[2]);
  GradCamMap wrong;
  wrong.upsampled = Eigen::MatrixXd::Zero(8, 8);
  CHECK_THROWS_AS(render_overlay(wrong, base), Error);
}

TEST_CASE("overlay: checkerboard matches the golden image") {
  const auto overlay = render_overlay(checkerboard_map(), gradient_base(), 0.4);
  if (std::getenv("ECVD_REGENERATE_GOLDEN")) data::write_png(kGolden, overlay);
  REQUIRE(std::filesystem::exists(kGolden));
  const auto golden = data::read_image(kGolden);
  REQUIRE(golden.shape() == overlay.shape());
  CHECK((golden.vec() - overlay.vec()).cwiseAbs().maxCoeff() <= 0.5f / 255.f + 1e-6f);
}

TEST_CASE("sidecar carries the raw map and metadata") {
  GradCamMap m;
  m.raw = Eigen::MatrixXd::Identity(7, 7);
  m.upsampled = Eigen::MatrixXd::Zero(2, 2);
  m.channel_weights = {0.5, -1};
  m.target_class = 2;
  m.layer = "head.relu2";
  const auto j = gradcam_sidecar(m);
  CHECK(j.at("raw").size() == 7);
  CHECK(j.at("raw")[3][3].get<double>() == 1.0);
  CHECK(j.at("layer") == "head.relu2");
}
