// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <random>

#include "opt3dgs/errors.hpp"
#include "opt3dgs/loss.hpp"
#include "scene_helpers.hpp"

using namespace opt3dgs;

namespace {

GaussianCloud one_gaussian(double o, double sx, double sy) {
  GaussianCloud c;
  Gaussian2D g;
  g.opacity_logit = logit(o);
  g.log_scale = {std::log(sx), std::log(sy)};
  g.rot_angle = 0.3;
  c.gaussians = {g};
  return c;
}

ImageD random_image(std::mt19937_64& gen, int w, int h) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ImageD img(w, h);
  for (auto& v : img.data) v = u(gen);
  return img;
}

}  // namespace

TEST_CASE("identical images give zero energy without regularizers") {
  std::mt19937_64 gen(1);
  const ImageD img = random_image(gen, 12, 9);
  LossConfig cfg;
  cfg.lambda_o = cfg.lambda_sigma = 0.0;
  const auto r = total_loss(img, img, one_gaussian(0.5, 1, 1), cfg);
  CHECK(r.energy == 0.0);
  CHECK(r.ssim == 1.0);
}

TEST_CASE("constant 0 vs 1 images give unit photometric energy in both modes") {
  LossConfig cfg;
  cfg.lambda_ssim = cfg.lambda_o = cfg.lambda_sigma = 0.0;
  const ImageD zero(6, 6, 0.0), one(6, 6, 1.0);
  CHECK(total_loss(zero, one, one_gaussian(0.5, 1, 1), cfg).energy == doctest::Approx(1.0));
  cfg.photometric_mode = PhotometricMode::L2;
  CHECK(total_loss(zero, one, one_gaussian(0.5, 1, 1), cfg).energy == doctest::Approx(1.0));
}

TEST_CASE("regularizer example: o = 0.5, s = (2,1)") {
  LossConfig cfg;
  cfg.lambda_ssim = 0.0;
  cfg.lambda_o = cfg.lambda_sigma = 1.0;
  const ImageD img(4, 4, 0.3);
  for (auto red : {Reduction::Mean, Reduction::Sum}) {
    cfg.regularizer_reduction = red;
    const auto r = total_loss(img, img, one_gaussian(0.5, 2, 1), cfg);
    CHECK(r.energy == doctest::Approx(3.5).epsilon(1e-12));
  }
}

TEST_CASE("mean and sum reductions differ by the primitive count") {
  GaussianCloud c = one_gaussian(0.3, 1.5, 0.7);
  c.gaussians.push_back(one_gaussian(0.8, 2.5, 2.0).gaussians[0]);
  c.gaussians.push_back(one_gaussian(0.1, 0.5, 3.0).gaussians[0]);
  LossConfig cfg;
  cfg.lambda_ssim = 0.0;
  const ImageD img(4, 4, 0.3);
  cfg.regularizer_reduction = Reduction::Mean;
  const auto mean = total_loss(img, img, c, cfg);
  cfg.regularizer_reduction = Reduction::Sum;
  const auto sum = total_loss(img, img, c, cfg);
  CHECK(sum.energy == doctest::Approx(3.0 * mean.energy).epsilon(1e-12));
  CHECK(sum.opacity_reg == doctest::Approx(0.3 + 0.8 + 0.1));
  CHECK(sum.scale_reg == doctest::Approx(1.5 + 0.7 + 2.5 + 2.0 + 0.5 + 3.0));
}

TEST_CASE("photometric_swap") {
  LossConfig cfg;
  cfg.lambda_ssim = 0.37;
  cfg.lambda_o = 0.11;
  const auto e = photometric_swap(cfg, Stage::Exploration);
  const auto x = photometric_swap(cfg, Stage::Exploitation);
  CHECK(e.photometric_mode == PhotometricMode::L1);
  CHECK(x.photometric_mode == PhotometricMode::L2);
  CHECK(photometric_swap(x, Stage::Exploitation).photometric_mode == PhotometricMode::L2);
  CHECK(photometric_swap(e, Stage::Exploration).photometric_mode == PhotometricMode::L1);
  CHECK(x.lambda_ssim == cfg.lambda_ssim);
  CHECK(x.lambda_o == cfg.lambda_o);
  CHECK(x.lambda_sigma == cfg.lambda_sigma);
}

TEST_CASE("ssim is exactly one on identical inputs and symmetric") {
  std::mt19937_64 gen(2);
  for (int k = 0; k < 10; ++k) {
    const ImageD a = random_image(gen, 5 + k, 20 - k), b = random_image(gen, 5 + k, 20 - k);
    CHECK(ssim(a, a) == 1.0);
    CHECK(std::abs(ssim(a, b) - ssim(b, a)) <= 1e-9);
    CHECK(ssim(a, b) < 1.0);
  }
  const ImageD tiny(1, 1, 0.4);
  CHECK(ssim(tiny, tiny) == 1.0);
}

TEST_CASE("energy is non-negative for images in [0,1]") {
  std::mt19937_64 gen(3);
  for (int k = 0; k < 50; ++k) {
    const auto s = testkit::random_scene(gen);
    const ImageD r = random_image(gen, s.width, s.height);
    CHECK(total_loss(r, s.target, s.cloud, s.loss).energy >= 0.0);
  }
}

TEST_CASE("image-path loss gradient matches central differences") {
  std::mt19937_64 gen(4);
  for (int trial = 0; trial < 6; ++trial) {
    const auto s = testkit::random_scene(gen);
    ImageD r = random_image(gen, s.width, s.height);
    const auto base = total_loss(r, s.target, s.cloud, s.loss);
    const double h = 1e-6;
    for (std::size_t i = 0; i < r.data.size(); i += 7) {
      // L1 has a kink at zero residual.
      if (s.loss.photometric_mode == PhotometricMode::L1 && std::abs(r.data[i] - s.target.data[i]) < 1e-3) continue;
      ImageD p = r, m = r;
      p.data[i] += h;
      m.data[i] -= h;
      const double fd =
          (total_loss(p, s.target, s.cloud, s.loss).energy - total_loss(m, s.target, s.cloud, s.loss).energy) / (2 * h);
      CHECK(testkit::rel_err(base.dL_dimage.data[i], fd) < 1e-4);
    }
  }
}

TEST_CASE("regularizer gradients match central differences") {
  std::mt19937_64 gen(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto s = testkit::random_scene(gen);
    const ImageD r = random_image(gen, s.width, s.height);
    const auto base = total_loss(r, s.target, s.cloud, s.loss);
    const auto rep = testkit::check_gradients(s.cloud, base.dL_dparams, [&](const GaussianCloud& c) {
      return total_loss(r, s.target, c, s.loss).energy;
    });
    REQUIRE(rep.smooth);
    INFO(rep.worst_where);
    CHECK(rep.worst_rel < 1e-4);
  }
}

TEST_CASE("invalid inputs are rejected") {
  LossConfig cfg;
  cfg.ssim_window = 4;
  CHECK_THROWS_AS(cfg.validate(), ContractViolation);
  cfg = {};
  cfg.lambda_o = -1;
  CHECK_THROWS_AS(cfg.validate(), ContractViolation);
  cfg = {};
  const ImageD a(4, 4), b(5, 4);
  CHECK_THROWS_AS(total_loss(a, b, one_gaussian(0.5, 1, 1), cfg), ContractViolation);
  CHECK_THROWS_AS(total_loss(a, a, GaussianCloud{}, cfg), ContractViolation);
}
