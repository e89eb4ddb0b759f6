#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "grdo/common.hpp"

namespace grdo {

// Spherical-harmonics coefficients of one Gaussian: rows are the 16 basis
// functions (row 0 = DC, rows 1..3 = degree 1, 4..8 = degree 2, 9..15 =
// degree 3), columns are RGB.
using ShCoeffs = Eigen::Matrix<double, 16, 3>;

inline constexpr int kShCoeffCount = 16;
inline constexpr int kMaxShDegree = 3;

// First basis row of each degree and per-degree row counts.
inline constexpr int kShDegreeStart[4] = {0, 1, 4, 9};
inline constexpr int kShDegreeRows[4] = {1, 3, 5, 7};

// Scene model in the 3DGS parameterization: scales are stored in log space
// (scale = exp(log_scale)) and opacities as logits (alpha = sigmoid(logit)).
struct GaussianCloud {
  std::vector<Eigen::Vector3d> positions;
  std::vector<Eigen::Vector3d> log_scales;
  std::vector<Eigen::Vector4d> rotations;  // quaternion (w, x, y, z), any nonzero norm
  std::vector<double> opacity_logits;
  std::vector<ShCoeffs> sh_coeffs;

  size_t size() const { return positions.size(); }

  void resize(size_t n) {
    positions.resize(n, Eigen::Vector3d::Zero());
    log_scales.resize(n, Eigen::Vector3d::Zero());
    rotations.resize(n, Eigen::Vector4d(1, 0, 0, 0));
    opacity_logits.resize(n, 0.0);
    sh_coeffs.resize(n, ShCoeffs::Zero());
  }

  void check_consistent() const {
    const size_t n = positions.size();
    if (log_scales.size() != n || rotations.size() != n ||
        opacity_logits.size() != n || sh_coeffs.size() != n) {
      throw std::invalid_argument("GaussianCloud: attribute arrays disagree on N");
    }
  }
};

struct Camera {
  Eigen::Matrix3d rot_wc = Eigen::Matrix3d::Identity();  // world-to-camera rotation
  Eigen::Vector3d t_wc = Eigen::Vector3d::Zero();         // x_cam = rot_wc * x_world + t_wc
  double fx = 1.0, fy = 1.0;
  double cx = 0.0, cy = 0.0;
  int width = 1, height = 1;
  double near = 0.01;

  Eigen::Vector3d position() const { return -rot_wc.transpose() * t_wc; }

  void validate() const {
    if (width < 1 || height < 1) throw std::invalid_argument("Camera: empty image");
    if (fx <= 0.0 || fy <= 0.0) throw std::invalid_argument("Camera: nonpositive focal length");
    if (near <= 0.0) throw std::invalid_argument("Camera: nonpositive near plane");
  }
};

// Per-Gaussian attribute values as they enter the compositing equation:
// activations applied, and (depending on the producer) masks and/or
// quantization already folded in. Rotations may be non-unit; the covariance
// build normalizes.
struct RenderAttributes {
  std::vector<Eigen::Vector3d> positions;
  std::vector<Eigen::Vector3d> scales;
  std::vector<Eigen::Vector4d> rotations;
  std::vector<double> opacities;
  std::vector<ShCoeffs> sh;

  size_t size() const { return positions.size(); }
};

// Gradients w.r.t. RenderAttributes, same shapes.
struct AttributeGrads {
  std::vector<Eigen::Vector3d> positions;
  std::vector<Eigen::Vector3d> scales;
  std::vector<Eigen::Vector4d> rotations;
  std::vector<double> opacities;
  std::vector<ShCoeffs> sh;

  explicit AttributeGrads(size_t n = 0) { resize(n); }
  void resize(size_t n) {
    positions.assign(n, Eigen::Vector3d::Zero());
    scales.assign(n, Eigen::Vector3d::Zero());
    rotations.assign(n, Eigen::Vector4d::Zero());
    opacities.assign(n, 0.0);
    sh.assign(n, ShCoeffs::Zero());
  }
};

// Gradients w.r.t. the stored (pre-activation) cloud parameters.
struct CloudGrads {
  std::vector<Eigen::Vector3d> positions;
  std::vector<Eigen::Vector3d> log_scales;
  std::vector<Eigen::Vector4d> rotations;
  std::vector<double> opacity_logits;
  std::vector<ShCoeffs> sh_coeffs;

  explicit CloudGrads(size_t n = 0) { resize(n); }
  void resize(size_t n) {
    positions.assign(n, Eigen::Vector3d::Zero());
    log_scales.assign(n, Eigen::Vector3d::Zero());
    rotations.assign(n, Eigen::Vector4d::Zero());
    opacity_logits.assign(n, 0.0);
    sh_coeffs.assign(n, ShCoeffs::Zero());
  }
};

// Pull gradients on activated attributes back to the stored parameters
// (exp, sigmoid and quaternion normalization chains), accumulating in place.
inline void activate_backward(const GaussianCloud& cloud, const AttributeGrads& grads,
                              CloudGrads& out) {
  for (size_t i = 0; i < cloud.size(); ++i) {
    const Eigen::Vector3d scale = cloud.log_scales[i].array().exp();
    out.positions[i] += grads.positions[i];
    out.log_scales[i] += grads.scales[i].cwiseProduct(scale);
    const double alpha = sigmoid(cloud.opacity_logits[i]);
    out.opacity_logits[i] += grads.opacities[i] * sigmoid_grad_from_value(alpha);
    const double norm = cloud.rotations[i].norm();
    if (norm > 0.0) {
      const Eigen::Vector4d q = cloud.rotations[i] / norm;
      out.rotations[i] += (grads.rotations[i] - q * q.dot(grads.rotations[i])) / norm;
    }
    out.sh_coeffs[i] += grads.sh[i];
  }
}

// Plain activation of a cloud: scale = exp(log_scale), opacity =
// sigmoid(logit), rotation normalized, SH passed through.
inline RenderAttributes activate(const GaussianCloud& cloud) {
  cloud.check_consistent();
  RenderAttributes out;
  const size_t n = cloud.size();
  out.positions = cloud.positions;
  out.scales.resize(n);
  out.rotations.resize(n);
  out.opacities.resize(n);
  out.sh = cloud.sh_coeffs;
  for (size_t i = 0; i < n; ++i) {
    out.scales[i] = cloud.log_scales[i].array().exp();
    const double norm = cloud.rotations[i].norm();
    out.rotations[i] = norm > 0.0 ? Eigen::Vector4d(cloud.rotations[i] / norm)
                                  : Eigen::Vector4d(1, 0, 0, 0);
    out.opacities[i] = sigmoid(cloud.opacity_logits[i]);
  }
  return out;
}

// Rotation matrix of a unit quaternion (w, x, y, z).
inline Eigen::Matrix3d quat_to_rotation(const Eigen::Vector4d& q) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Eigen::Matrix3d r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

// Covariance R * diag(exp(ls))^2 * R^T of a Gaussian; the quaternion is
// normalized here, so sign flips and non-unit inputs give the same result.
inline Eigen::Matrix3d build_covariance(const Eigen::Vector3d& log_scale,
                                        const Eigen::Vector4d& rotation) {
  const double norm = rotation.norm();
  if (!(norm > 0.0)) throw std::domain_error("build_covariance: zero-norm quaternion");
  const Eigen::Matrix3d rot = quat_to_rotation(rotation / norm);
  const Eigen::Vector3d scale = log_scale.array().exp();
  const Eigen::Matrix3d rs = rot * scale.asDiagonal();
  return rs * rs.transpose();
}

}  // namespace grdo
