#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <numbers>

#include "grdo/gaussian.hpp"
#include "grdo/rng.hpp"
#include "grdo/sh.hpp"

namespace testutil {

// CV-style camera looking from eye toward target: x right, y down, z forward.
inline grdo::Camera look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                            int width, int height, double fov_deg = 50.0) {
  grdo::Camera cam;
  Eigen::Vector3d z = (target - eye).normalized();
  Eigen::Vector3d up(0, 1, 0);
  if (std::abs(z.dot(up)) > 0.99) up = Eigen::Vector3d(1, 0, 0);
  const Eigen::Vector3d x = z.cross(up).normalized();
  const Eigen::Vector3d y = z.cross(x);
  cam.rot_wc.row(0) = x;
  cam.rot_wc.row(1) = y;
  cam.rot_wc.row(2) = z;
  cam.t_wc = -cam.rot_wc * eye;
  cam.width = width;
  cam.height = height;
  const double fov = fov_deg * std::numbers::pi / 180.0;
  cam.fx = cam.fy = 0.5 * width / std::tan(0.5 * fov);
  cam.cx = 0.5 * (width - 1);
  cam.cy = 0.5 * (height - 1);
  cam.near = 0.05;
  return cam;
}

// DC coefficients that evaluate to `color` through the SH offset convention.
inline Eigen::Vector3d dc_for(const Eigen::Vector3d& color) {
  return (color - Eigen::Vector3d(0.5, 0.5, 0.5)) / grdo::kShC0;
}

inline Eigen::Vector3d random_unit(grdo::Rng& rng) {
  Eigen::Vector3d v(rng.normal(), rng.normal(), rng.normal());
  while (v.norm() < 1e-6) v = {rng.normal(), rng.normal(), rng.normal()};
  return v.normalized();
}

// Random cloud with float32-representable values (exact PLY round trips).
inline grdo::GaussianCloud random_cloud(grdo::Rng& rng, size_t n) {
  grdo::GaussianCloud cloud;
  cloud.resize(n);
  auto f32 = [&](double v) { return static_cast<double>(static_cast<float>(v)); };
  for (size_t i = 0; i < n; ++i) {
    for (int a = 0; a < 3; ++a) {
      cloud.positions[i][a] = f32(rng.uniform(-1, 1));
      cloud.log_scales[i][a] = f32(rng.uniform(-4, -1));
    }
    for (int a = 0; a < 4; ++a) cloud.rotations[i][a] = f32(rng.normal());
    if (cloud.rotations[i].norm() < 1e-3) cloud.rotations[i] = {1, 0, 0, 0};
    cloud.opacity_logits[i] = f32(rng.uniform(-2, 2));
    for (int r = 0; r < 16; ++r) {
      for (int c = 0; c < 3; ++c) cloud.sh_coeffs[i](r, c) = f32(rng.normal() * 0.2);
    }
  }
  return cloud;
}

}  // namespace testutil
