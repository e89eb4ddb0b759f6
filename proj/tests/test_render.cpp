#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Cholesky>
#include <algorithm>

#include "grdo/mask.hpp"
#include "grdo/render.hpp"
#include "grdo/rng.hpp"
#include "helpers.hpp"

using grdo::Camera;
using grdo::RenderAttributes;

namespace {

Camera axis_camera(int w, int h, double f) {
  Camera cam;
  cam.width = w;
  cam.height = h;
  cam.fx = cam.fy = f;
  cam.cx = w / 2;
  cam.cy = h / 2;
  cam.near = 0.1;
  return cam;
}

void push_gaussian(RenderAttributes& attrs, const Eigen::Vector3d& pos,
                   const Eigen::Vector3d& scale, double opacity,
                   const Eigen::Vector3d& color) {
  attrs.positions.push_back(pos);
  attrs.scales.push_back(scale);
  attrs.rotations.push_back(Eigen::Vector4d(1, 0, 0, 0));
  attrs.opacities.push_back(opacity);
  grdo::ShCoeffs sh = grdo::ShCoeffs::Zero();
  sh.row(0) = testutil::dc_for(color).transpose();
  attrs.sh.push_back(sh);
}

}  // namespace

TEST_CASE("gaussian on the optical axis projects to the principal point") {
  const Camera cam = axis_camera(16, 16, 20.0);
  const auto p = grdo::project_one(Eigen::Vector3d(0, 0, 5), Eigen::Vector3d::Ones(),
                                   Eigen::Vector4d(1, 0, 0, 0), cam);
  REQUIRE_FALSE(p.culled);
  REQUIRE(p.mean2d == Eigen::Vector2d(cam.cx, cam.cy));
  REQUIRE(p.depth == 5.0);
}

TEST_CASE("gaussian behind the camera is culled") {
  const Camera cam = axis_camera(16, 16, 20.0);
  const auto p = grdo::project_one(Eigen::Vector3d(0, 0, -5), Eigen::Vector3d::Ones(),
                                   Eigen::Vector4d(1, 0, 0, 0), cam);
  REQUIRE(p.culled);
}

TEST_CASE("projected covariance matches a Monte-Carlo propagation oracle") {
  grdo::Rng rng(17);
  const Camera cam = axis_camera(512, 512, 400.0);
  for (int trial = 0; trial < 3; ++trial) {
    const Eigen::Vector3d pos(rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3),
                              rng.uniform(4.0, 6.0));
    const Eigen::Vector3d ls = Eigen::Vector3d(rng.uniform(-4.5, -3.5), rng.uniform(-4.5, -3.5),
                                               rng.uniform(-4.5, -3.5));
    Eigen::Vector4d q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    q.normalize();
    const Eigen::Vector3d scale = ls.array().exp();

    const auto proj = grdo::project_one(pos, scale, q, cam);
    REQUIRE_FALSE(proj.culled);
    Eigen::Matrix2d analytic = proj.cov2d;
    analytic(0, 0) -= grdo::kCovarianceFloor;
    analytic(1, 1) -= grdo::kCovarianceFloor;

    // Project 1e5 samples of the 3D Gaussian through the exact pinhole map.
    const Eigen::Matrix3d chol = grdo::quat_to_rotation(q) * scale.asDiagonal();
    const int n = 100000;
    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    Eigen::Matrix2d second = Eigen::Matrix2d::Zero();
    for (int s = 0; s < n; ++s) {
      const Eigen::Vector3d x =
          pos + chol * Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
      const Eigen::Vector3d t = cam.rot_wc * x + cam.t_wc;
      const Eigen::Vector2d u(cam.fx * t.x() / t.z() + cam.cx,
                              cam.fy * t.y() / t.z() + cam.cy);
      mean += u;
      second += u * u.transpose();
    }
    mean /= n;
    const Eigen::Matrix2d sampled = second / n - mean * mean.transpose();
    const double rel = (sampled - analytic).norm() / analytic.norm();
    REQUIRE(rel < 0.05);
  }
}

TEST_CASE("single opaque gaussian centered on a pixel reproduces its color") {
  const Camera cam = axis_camera(16, 16, 20.0);
  RenderAttributes attrs;
  const Eigen::Vector3d color(0.8, 0.3, 0.1);
  push_gaussian(attrs, {0, 0, 5}, Eigen::Vector3d::Ones(), 1.0, color);
  const auto res = grdo::render(attrs, cam);
  for (int c = 0; c < 3; ++c) {
    REQUIRE(res.image.at(8, 8, c) == Catch::Approx(color[c]).margin(1e-12));
  }
}

TEST_CASE("two-gaussian compositing matches the hand-computed value") {
  const Camera cam = axis_camera(16, 16, 20.0);
  RenderAttributes attrs;
  push_gaussian(attrs, {0, 0, 5}, Eigen::Vector3d::Ones(), 0.5, {1, 0, 0});
  push_gaussian(attrs, {0, 0, 6}, Eigen::Vector3d::Ones(), 0.5, {0, 1, 0});
  const auto res = grdo::render(attrs, cam);
  // Front contributes 0.5*red; back sees transmittance 0.5 -> 0.25*green.
  REQUIRE(res.image.at(8, 8, 0) == Catch::Approx(0.5).margin(1e-12));
  REQUIRE(res.image.at(8, 8, 1) == Catch::Approx(0.25).margin(1e-12));
  REQUIRE(res.image.at(8, 8, 2) == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("hard-masked gaussian contributes nothing, bit for bit") {
  grdo::Rng rng(23);
  grdo::GaussianCloud cloud = testutil::random_cloud(rng, 12);
  for (size_t i = 0; i < cloud.size(); ++i) {
    cloud.positions[i][2] = rng.uniform(4.0, 6.0);  // in front of camera
    cloud.log_scales[i] = Eigen::Vector3d::Constant(rng.uniform(-2.5, -1.5));
  }
  const Camera cam = axis_camera(32, 32, 30.0);

  grdo::MaskSet masks = grdo::MaskSet::initial(cloud.size());
  masks.gaussian_mask_raw[3] = grdo::inv_sigmoid(0.05);  // below threshold
  masks.gaussian_mask_raw[7] = grdo::inv_sigmoid(0.05);
  const auto fwd = grdo::evaluate_masks(masks);
  const auto masked = grdo::apply_masks(cloud, fwd);
  const auto img_masked = grdo::render(masked, cam).image;

  // Physically delete the masked Gaussians.
  grdo::GaussianCloud subset;
  for (size_t i = 0; i < cloud.size(); ++i) {
    if (i == 3 || i == 7) continue;
    subset.positions.push_back(cloud.positions[i]);
    subset.log_scales.push_back(cloud.log_scales[i]);
    subset.rotations.push_back(cloud.rotations[i]);
    subset.opacity_logits.push_back(cloud.opacity_logits[i]);
    subset.sh_coeffs.push_back(cloud.sh_coeffs[i]);
  }
  const auto img_subset = grdo::render(grdo::activate(subset), cam).image;
  REQUIRE(img_masked.data == img_subset.data);
}

TEST_CASE("storage order permutation leaves the image bit-identical") {
  grdo::Rng rng(29);
  grdo::GaussianCloud cloud = testutil::random_cloud(rng, 20);
  for (size_t i = 0; i < cloud.size(); ++i) {
    cloud.positions[i][2] = 4.0 + 0.1 * static_cast<double>(i);  // distinct depths
    cloud.log_scales[i] = Eigen::Vector3d::Constant(-2.0);
  }
  const Camera cam = axis_camera(48, 32, 40.0);
  const auto img_a = grdo::render(grdo::activate(cloud), cam).image;

  std::vector<size_t> perm(cloud.size());
  for (size_t i = 0; i < perm.size(); ++i) perm[i] = (i * 7 + 3) % perm.size();
  grdo::GaussianCloud shuffled;
  for (size_t i : perm) {
    shuffled.positions.push_back(cloud.positions[i]);
    shuffled.log_scales.push_back(cloud.log_scales[i]);
    shuffled.rotations.push_back(cloud.rotations[i]);
    shuffled.opacity_logits.push_back(cloud.opacity_logits[i]);
    shuffled.sh_coeffs.push_back(cloud.sh_coeffs[i]);
  }
  const auto img_b = grdo::render(grdo::activate(shuffled), cam).image;
  REQUIRE(img_a.data == img_b.data);
}

TEST_CASE("early stop changes no pixel by more than 1e-4") {
  grdo::Rng rng(31);
  const Camera cam = axis_camera(32, 32, 30.0);
  RenderAttributes attrs;
  for (int i = 0; i < 40; ++i) {
    push_gaussian(attrs, {rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(3, 7)},
                  Eigen::Vector3d::Constant(0.3), rng.uniform(0.7, 0.98),
                  {rng.uniform(), rng.uniform(), rng.uniform()});
  }
  grdo::RenderOptions with_stop;
  grdo::RenderOptions no_stop;
  no_stop.transmittance_stop = 0.0;
  const auto a = grdo::render(attrs, cam, with_stop).image;
  const auto b = grdo::render(attrs, cam, no_stop).image;
  double max_diff = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    max_diff = std::max(max_diff, std::abs(a.data[i] - b.data[i]));
  }
  REQUIRE(max_diff <= 1e-4);
}

TEST_CASE("per-pixel transmittance sequences are nonincreasing in [0,1]") {
  grdo::Rng rng(37);
  const Camera cam = axis_camera(24, 24, 24.0);
  RenderAttributes attrs;
  for (int i = 0; i < 15; ++i) {
    push_gaussian(attrs, {rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4), rng.uniform(3, 6)},
                  Eigen::Vector3d::Constant(0.25), rng.uniform(0.2, 0.9),
                  {rng.uniform(), rng.uniform(), rng.uniform()});
  }
  const auto res = grdo::render(attrs, cam);
  for (size_t pix = 0; pix < res.tape.pixels.size(); ++pix) {
    double t = 1.0;
    for (const auto& c : res.tape.pixels[pix]) {
      const double next = t * (1.0 - res.tape.opacity[c.vis] * c.weight);
      REQUIRE(next <= t);
      REQUIRE(next >= 0.0);
      t = next;
    }
    REQUIRE(t == res.tape.final_transmittance[pix]);
  }
}

TEST_CASE("background composites through the final transmittance") {
  const Camera cam = axis_camera(16, 16, 20.0);
  RenderAttributes attrs;
  push_gaussian(attrs, {0, 0, 5}, Eigen::Vector3d::Ones(), 0.5, {1, 0, 0});
  grdo::RenderOptions opts;
  opts.background = {0, 0, 1};
  const auto res = grdo::render(attrs, cam, opts);
  REQUIRE(res.image.at(8, 8, 0) == Catch::Approx(0.5).margin(1e-12));
  REQUIRE(res.image.at(8, 8, 2) == Catch::Approx(0.5).margin(1e-12));
}

TEST_CASE("zero-resolution render is rejected") {
  Camera cam;
  cam.width = 0;
  cam.height = 16;
  RenderAttributes attrs;
  REQUIRE_THROWS_AS(grdo::render(attrs, cam), std::invalid_argument);
}
