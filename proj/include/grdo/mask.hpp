#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <vector>

#include "grdo/common.hpp"
#include "grdo/gaussian.hpp"

namespace grdo {

inline constexpr double kDefaultMaskThreshold = 0.1;

// Learnable pruning masks: one raw value per Gaussian and one per SH degree
// 1..3. Soft masks are sigmoids of the raw values; hard masks binarize with
// a strict threshold and pass the sigmoid gradient straight through.
struct MaskSet {
  std::vector<double> gaussian_mask_raw;     // N
  std::vector<Eigen::Vector3d> sh_mask_raw;  // N x (degrees 1..3)
  double phi_threshold = kDefaultMaskThreshold;
  double theta_threshold = kDefaultMaskThreshold;

  size_t size() const { return gaussian_mask_raw.size(); }

  // Fresh masks start near "keep": sigmoid(raw)=0.9 for Gaussians, 0.5 for
  // SH degrees.
  static MaskSet initial(size_t n) {
    MaskSet m;
    m.gaussian_mask_raw.assign(n, inv_sigmoid(0.9));
    m.sh_mask_raw.assign(n, Eigen::Vector3d::Zero());
    return m;
  }

  void check_sized(size_t n) const {
    if (gaussian_mask_raw.size() != n || sh_mask_raw.size() != n) {
      throw std::invalid_argument("MaskSet: size mismatch with cloud");
    }
  }
};

struct MaskValue {
  double soft = 0.0;
  double hard = 0.0;  // exactly 0 or 1
};

// Soft/hard mask of one raw value. Hard is 1 iff soft > threshold (strict);
// the straight-through backward rule is d(hard)/d(raw) = soft * (1 - soft).
inline MaskValue mask_forward(double raw, double threshold) {
  MaskValue v;
  v.soft = sigmoid(raw);
  v.hard = v.soft > threshold ? 1.0 : 0.0;
  return v;
}

// Evaluated masks for a whole MaskSet.
struct MaskForward {
  std::vector<double> phi_soft, phi_hard;
  std::vector<Eigen::Vector3d> theta_soft, theta_hard;

  size_t size() const { return phi_soft.size(); }
  bool gaussian_kept(size_t i) const { return phi_hard[i] != 0.0; }
  bool degree_kept(size_t i, int degree) const { return theta_hard[i][degree - 1] != 0.0; }

  // 3-bit integer of the SH hard masks, degree 1 as the most significant
  // bit (mask "011" -> 3).
  int sh_mask_bits(size_t i) const {
    return static_cast<int>(theta_hard[i][0]) * 4 + static_cast<int>(theta_hard[i][1]) * 2 +
           static_cast<int>(theta_hard[i][2]);
  }
};

inline MaskForward evaluate_masks(const MaskSet& masks) {
  MaskForward f;
  const size_t n = masks.size();
  f.phi_soft.resize(n);
  f.phi_hard.resize(n);
  f.theta_soft.resize(n);
  f.theta_hard.resize(n);
  for (size_t i = 0; i < n; ++i) {
    const MaskValue phi = mask_forward(masks.gaussian_mask_raw[i], masks.phi_threshold);
    f.phi_soft[i] = phi.soft;
    f.phi_hard[i] = phi.hard;
    for (int l = 0; l < 3; ++l) {
      const MaskValue th = mask_forward(masks.sh_mask_raw[i][l], masks.theta_threshold);
      f.theta_soft[i][l] = th.soft;
      f.theta_hard[i][l] = th.hard;
    }
  }
  return f;
}

// Masked activation: pruned Gaussians get exactly zero scale and opacity,
// masked SH degrees exactly zero coefficients. Positions and rotations are
// never masked.
inline RenderAttributes apply_masks(const GaussianCloud& cloud, const MaskForward& fwd) {
  if (fwd.size() != cloud.size()) throw std::invalid_argument("apply_masks: size mismatch");
  RenderAttributes out = activate(cloud);
  for (size_t i = 0; i < cloud.size(); ++i) {
    out.scales[i] *= fwd.phi_hard[i];
    out.opacities[i] *= fwd.phi_hard[i];
    for (int l = 1; l <= kMaxShDegree; ++l) {
      const double bit = fwd.theta_hard[i][l - 1];
      out.sh[i].block(kShDegreeStart[l], 0, kShDegreeRows[l], 3) *= bit;
    }
  }
  return out;
}

// Reverse of apply_masks: pulls gradients on the masked view back to the
// stored cloud parameters and, through the straight-through rule, to the raw
// mask values.
inline void apply_masks_backward(const GaussianCloud& cloud, const MaskSet& masks,
                                 const MaskForward& fwd, const AttributeGrads& grads,
                                 CloudGrads& out, std::vector<double>& d_phi_raw,
                                 std::vector<Eigen::Vector3d>& d_theta_raw) {
  for (size_t i = 0; i < cloud.size(); ++i) {
    out.positions[i] += grads.positions[i];

    const Eigen::Vector3d scale = cloud.log_scales[i].array().exp();
    const double phi = fwd.phi_hard[i];
    out.log_scales[i] += grads.scales[i].cwiseProduct(scale) * phi;
    double d_phi = grads.scales[i].dot(scale);

    const double alpha = sigmoid(cloud.opacity_logits[i]);
    out.opacity_logits[i] += grads.opacities[i] * phi * sigmoid_grad_from_value(alpha);
    d_phi += grads.opacities[i] * alpha;
    d_phi_raw[i] += d_phi * sigmoid_grad_from_value(fwd.phi_soft[i]);

    const double norm = cloud.rotations[i].norm();
    if (norm > 0.0) {
      const Eigen::Vector4d q = cloud.rotations[i] / norm;
      out.rotations[i] += (grads.rotations[i] - q * q.dot(grads.rotations[i])) / norm;
    }

    out.sh_coeffs[i].row(0) += grads.sh[i].row(0);
    for (int l = 1; l <= kMaxShDegree; ++l) {
      const double theta = fwd.theta_hard[i][l - 1];
      const auto rows = Eigen::seqN(kShDegreeStart[l], kShDegreeRows[l]);
      out.sh_coeffs[i](rows, Eigen::all) += theta * grads.sh[i](rows, Eigen::all);
      const double d_theta =
          (grads.sh[i](rows, Eigen::all).array() * cloud.sh_coeffs[i](rows, Eigen::all).array())
              .sum();
      d_theta_raw[i][l - 1] +=
          d_theta * sigmoid_grad_from_value(fwd.theta_soft[i][l - 1]);
    }
  }
}

// Mean soft Gaussian mask; the pressure that drives pruning.
inline double gaussian_prune_loss(const MaskForward& fwd) {
  if (fwd.size() == 0) return 0.0;
  double sum = 0.0;
  for (double s : fwd.phi_soft) sum += s;
  return sum / static_cast<double>(fwd.size());
}

// Per-degree weight of the SH prune loss: (2l+1)/((k+1)^2-1) with k=3.
inline double sh_prune_weight(int degree) {
  return (2.0 * degree + 1.0) / ((kMaxShDegree + 1) * (kMaxShDegree + 1) - 1);
}

// Soft SH masks weighted by their coefficient counts, averaged over N.
inline double sh_prune_loss(const MaskForward& fwd) {
  if (fwd.size() == 0) return 0.0;
  double sum = 0.0;
  for (const auto& soft : fwd.theta_soft) {
    for (int l = 1; l <= 3; ++l) sum += sh_prune_weight(l) * soft[l - 1];
  }
  return sum / static_cast<double>(fwd.size());
}

// Gradients of the two prune losses w.r.t. the raw mask values, scaled by
// `upstream`, accumulated in place.
inline void prune_loss_backward(const MaskSet& masks, const MaskForward& fwd,
                                double upstream_gauss, double upstream_sh,
                                std::vector<double>& d_gaussian_raw,
                                std::vector<Eigen::Vector3d>& d_sh_raw) {
  const size_t n = masks.size();
  if (n == 0) return;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (size_t i = 0; i < n; ++i) {
    d_gaussian_raw[i] += upstream_gauss * inv_n * sigmoid_grad_from_value(fwd.phi_soft[i]);
    for (int l = 1; l <= 3; ++l) {
      d_sh_raw[i][l - 1] += upstream_sh * inv_n * sh_prune_weight(l) *
                            sigmoid_grad_from_value(fwd.theta_soft[i][l - 1]);
    }
  }
}

}  // namespace grdo
