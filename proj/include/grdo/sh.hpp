#pragma once

#include <Eigen/Dense>
#include <array>
#include <stdexcept>

#include "grdo/gaussian.hpp"

namespace grdo {

// Real SH basis constants with the signs folded in, matching the layout
// 3DGS uses for its color model.
inline constexpr double kShC0 = 0.28209479177387814;
inline constexpr double kShC1 = 0.4886025119029199;
inline constexpr double kShC2[5] = {1.0925484305920792, -1.0925484305920792,
                                    0.31539156525252005, -1.0925484305920792,
                                    0.5462742152960396};
inline constexpr double kShC3[7] = {-0.5900435899266435, 2.890611442640554,
                                    -0.4570457994644658, 0.3731763325901154,
                                    -0.4570457994644658, 1.445305721320277,
                                    -0.5900435899266435};

// Basis values for a unit direction, rows matching ShCoeffs.
inline std::array<double, 16> sh_basis(const Eigen::Vector3d& dir) {
  const double x = dir[0], y = dir[1], z = dir[2];
  const double xx = x * x, yy = y * y, zz = z * z;
  const double xy = x * y, yz = y * z, xz = x * z;
  return {
      kShC0,
      -kShC1 * y,
      kShC1 * z,
      -kShC1 * x,
      kShC2[0] * xy,
      kShC2[1] * yz,
      kShC2[2] * (2.0 * zz - xx - yy),
      kShC2[3] * xz,
      kShC2[4] * (xx - yy),
      kShC3[0] * y * (3.0 * xx - yy),
      kShC3[1] * xy * z,
      kShC3[2] * y * (4.0 * zz - xx - yy),
      kShC3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
      kShC3[4] * x * (4.0 * zz - xx - yy),
      kShC3[5] * z * (xx - yy),
      kShC3[6] * x * (xx - 3.0 * yy),
  };
}

// d(basis_i)/d(dir), same row order.
inline std::array<Eigen::Vector3d, 16> sh_basis_grad(const Eigen::Vector3d& dir) {
  const double x = dir[0], y = dir[1], z = dir[2];
  const double xx = x * x, yy = y * y, zz = z * z;
  std::array<Eigen::Vector3d, 16> g;
  g[0] = {0, 0, 0};
  g[1] = {0, -kShC1, 0};
  g[2] = {0, 0, kShC1};
  g[3] = {-kShC1, 0, 0};
  g[4] = {kShC2[0] * y, kShC2[0] * x, 0};
  g[5] = {0, kShC2[1] * z, kShC2[1] * y};
  g[6] = {-2 * kShC2[2] * x, -2 * kShC2[2] * y, 4 * kShC2[2] * z};
  g[7] = {kShC2[3] * z, 0, kShC2[3] * x};
  g[8] = {2 * kShC2[4] * x, -2 * kShC2[4] * y, 0};
  g[9] = {kShC3[0] * 6 * x * y, kShC3[0] * (3 * xx - 3 * yy), 0};
  g[10] = {kShC3[1] * y * z, kShC3[1] * x * z, kShC3[1] * x * y};
  g[11] = {kShC3[2] * -2 * x * y, kShC3[2] * (4 * zz - xx - 3 * yy), kShC3[2] * 8 * y * z};
  g[12] = {kShC3[3] * -6 * x * z, kShC3[3] * -6 * y * z, kShC3[3] * (6 * zz - 3 * xx - 3 * yy)};
  g[13] = {kShC3[4] * (4 * zz - 3 * xx - yy), kShC3[4] * -2 * x * y, kShC3[4] * 8 * x * z};
  g[14] = {kShC3[5] * 2 * x * z, kShC3[5] * -2 * y * z, kShC3[5] * (xx - yy)};
  g[15] = {kShC3[6] * (3 * xx - 3 * yy), kShC3[6] * -6 * x * y, 0};
  return g;
}

// Color from SH coefficients along a unit view direction, including the 0.5
// offset convention. Degrees above max_degree contribute nothing.
inline Eigen::Vector3d eval_sh(const ShCoeffs& coeffs, const Eigen::Vector3d& dir,
                               int max_degree = kMaxShDegree) {
  if (max_degree < 0 || max_degree > kMaxShDegree) {
    throw std::invalid_argument("eval_sh: max_degree out of range");
  }
  const auto basis = sh_basis(dir);
  const int rows = kShDegreeStart[max_degree] + kShDegreeRows[max_degree];
  Eigen::Vector3d color(0.5, 0.5, 0.5);
  for (int i = 0; i < rows; ++i) color += basis[i] * coeffs.row(i).transpose();
  return color;
}

}  // namespace grdo
