#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "grdo/gaussian.hpp"
#include "grdo/image.hpp"
#include "grdo/parallel.hpp"
#include "grdo/sh.hpp"

namespace grdo {

inline constexpr int kTileSize = 16;
inline constexpr double kCovarianceFloor = 0.3;       // pixel^2, inside the graph
inline constexpr double kContributionCutoff = 1.0 / 255.0;
inline constexpr double kTransmittanceStop = 1e-4;

struct RenderOptions {
  Eigen::Vector3d background = Eigen::Vector3d::Zero();
  double transmittance_stop = kTransmittanceStop;  // 0 disables early stop
};

struct ProjectedGaussian {
  Eigen::Vector2d mean2d = Eigen::Vector2d::Zero();
  Eigen::Matrix2d cov2d = Eigen::Matrix2d::Zero();  // floor included
  double depth = 0.0;
  double radius = 0.0;  // 3-sigma screen radius
  bool culled = true;
};

// Perspective projection of one Gaussian: first-order Jacobian of the pinhole
// map composed with the view rotation, plus the isotropic pixel floor.
inline ProjectedGaussian project_one(const Eigen::Vector3d& position,
                                     const Eigen::Vector3d& scale,
                                     const Eigen::Vector4d& rotation, const Camera& cam) {
  ProjectedGaussian out;
  const Eigen::Vector3d t = cam.rot_wc * position + cam.t_wc;
  if (t.z() < cam.near) return out;  // behind near plane

  const double z = t.z();
  out.depth = z;
  out.mean2d = {cam.fx * t.x() / z + cam.cx, cam.fy * t.y() / z + cam.cy};

  const double qnorm = rotation.norm();
  const Eigen::Vector4d q = qnorm > 0.0 ? Eigen::Vector4d(rotation / qnorm)
                                        : Eigen::Vector4d(1, 0, 0, 0);
  const Eigen::Matrix3d rs = quat_to_rotation(q) * scale.asDiagonal();
  const Eigen::Matrix3d cov3d = rs * rs.transpose();

  Eigen::Matrix<double, 2, 3> jac;
  jac << cam.fx / z, 0, -cam.fx * t.x() / (z * z),
         0, cam.fy / z, -cam.fy * t.y() / (z * z);
  const Eigen::Matrix<double, 2, 3> jw = jac * cam.rot_wc;
  out.cov2d = jw * cov3d * jw.transpose();
  out.cov2d(0, 0) += kCovarianceFloor;
  out.cov2d(1, 1) += kCovarianceFloor;

  const double mid = 0.5 * (out.cov2d(0, 0) + out.cov2d(1, 1));
  const double det = out.cov2d.determinant();
  const double lmax = mid + std::sqrt(std::max(0.0, mid * mid - det));
  out.radius = 3.0 * std::sqrt(lmax);

  // Culled only if the 3-sigma box misses the image entirely.
  const bool outside = out.mean2d.x() + out.radius < 0.0 ||
                       out.mean2d.x() - out.radius >= cam.width ||
                       out.mean2d.y() + out.radius < 0.0 ||
                       out.mean2d.y() - out.radius >= cam.height;
  out.culled = outside;
  return out;
}

inline std::vector<ProjectedGaussian> project(const RenderAttributes& attrs,
                                              const Camera& cam) {
  cam.validate();
  std::vector<ProjectedGaussian> out(attrs.size());
  parallel_for(attrs.size(), [&](size_t i) {
    out[i] = project_one(attrs.positions[i], attrs.scales[i], attrs.rotations[i], cam);
  });
  return out;
}

struct PixelContribution {
  uint32_t vis = 0;   // index into the visible (depth-sorted) arrays
  double weight = 0;  // evaluated 2D Gaussian M(p, mean, cov)
};

// Forward-pass record: everything the hand-written backward needs. Per-pixel
// contribution lists are ordered front to back; transmittance sequences are
// reconstructed from the stored weights.
struct RenderTape {
  int width = 0, height = 0;
  int tiles_x = 0, tiles_y = 0;
  Eigen::Vector3d background = Eigen::Vector3d::Zero();

  // Visible Gaussians in composite order (depth, then original index).
  std::vector<uint32_t> vis_ids;
  std::vector<Eigen::Vector2d> mean2d;
  std::vector<Eigen::Matrix2d> conic;  // inverse of the floored 2D covariance
  std::vector<double> depth;
  std::vector<double> opacity;
  std::vector<Eigen::Vector3d> color;  // SH evaluated along the view direction

  std::vector<std::vector<uint32_t>> tile_lists;       // per tile, ascending vis index
  std::vector<std::vector<PixelContribution>> pixels;  // H*W lists
  std::vector<double> final_transmittance;             // H*W

  bool gaussian_in_tape(uint32_t input_id) const {
    for (const auto& pix : pixels) {
      for (const auto& c : pix) {
        if (vis_ids[c.vis] == input_id) return true;
      }
    }
    return false;
  }
};

struct RenderResult {
  Image image;
  RenderTape tape;
};

// Tile-based forward pass of the compositing equation: per pixel, visible
// Gaussians are blended front to back with sigma = alpha * M, skipping
// contributions below 1/255 and stopping once transmittance drops below 1e-4;
// the remaining transmittance is filled with the background color.
inline RenderResult render(const RenderAttributes& attrs, const Camera& cam,
                           const RenderOptions& opts = {}) {
  cam.validate();
  const int w = cam.width, h = cam.height;

  const std::vector<ProjectedGaussian> proj = project(attrs, cam);

  RenderResult res;
  res.image = Image(w, h);
  RenderTape& tape = res.tape;
  tape.width = w;
  tape.height = h;
  tape.background = opts.background;
  tape.tiles_x = (w + kTileSize - 1) / kTileSize;
  tape.tiles_y = (h + kTileSize - 1) / kTileSize;

  // Composite order: depth, ties broken by original index (stable sort).
  std::vector<uint32_t> order;
  order.reserve(attrs.size());
  for (uint32_t i = 0; i < attrs.size(); ++i) {
    if (!proj[i].culled) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](uint32_t a, uint32_t b) { return proj[a].depth < proj[b].depth; });

  const size_t nvis = order.size();
  tape.vis_ids = order;
  tape.mean2d.resize(nvis);
  tape.conic.resize(nvis);
  tape.depth.resize(nvis);
  tape.opacity.resize(nvis);
  tape.color.resize(nvis);
  const Eigen::Vector3d cam_pos = cam.position();
  parallel_for(nvis, [&](size_t v) {
    const uint32_t id = order[v];
    tape.mean2d[v] = proj[id].mean2d;
    tape.conic[v] = proj[id].cov2d.inverse();
    tape.depth[v] = proj[id].depth;
    tape.opacity[v] = attrs.opacities[id];
    Eigen::Vector3d dir = attrs.positions[id] - cam_pos;
    const double len = dir.norm();
    dir = len > 0.0 ? Eigen::Vector3d(dir / len) : Eigen::Vector3d(0, 0, 1);
    tape.color[v] = eval_sh(attrs.sh[id], dir);
  });

  // Bin by 3-sigma boxes; iterating vis in order keeps tile lists sorted.
  tape.tile_lists.assign(static_cast<size_t>(tape.tiles_x) * tape.tiles_y, {});
  for (uint32_t v = 0; v < nvis; ++v) {
    const uint32_t id = order[v];
    const auto& p = proj[id];
    const int x0 = std::max(0, static_cast<int>(std::floor((p.mean2d.x() - p.radius) / kTileSize)));
    const int x1 = std::min(tape.tiles_x - 1,
                            static_cast<int>(std::floor((p.mean2d.x() + p.radius) / kTileSize)));
    const int y0 = std::max(0, static_cast<int>(std::floor((p.mean2d.y() - p.radius) / kTileSize)));
    const int y1 = std::min(tape.tiles_y - 1,
                            static_cast<int>(std::floor((p.mean2d.y() + p.radius) / kTileSize)));
    for (int ty = y0; ty <= y1; ++ty) {
      for (int tx = x0; tx <= x1; ++tx) {
        tape.tile_lists[static_cast<size_t>(ty) * tape.tiles_x + tx].push_back(v);
      }
    }
  }

  tape.pixels.assign(static_cast<size_t>(w) * h, {});
  tape.final_transmittance.assign(static_cast<size_t>(w) * h, 1.0);

  parallel_for(tape.tile_lists.size(), [&](size_t tile) {
    const auto& list = tape.tile_lists[tile];
    const int tx = static_cast<int>(tile) % tape.tiles_x;
    const int ty = static_cast<int>(tile) / tape.tiles_x;
    const int px0 = tx * kTileSize, px1 = std::min(w, px0 + kTileSize);
    const int py0 = ty * kTileSize, py1 = std::min(h, py0 + kTileSize);
    for (int y = py0; y < py1; ++y) {
      for (int x = px0; x < px1; ++x) {
        const size_t pix = static_cast<size_t>(y) * w + x;
        const Eigen::Vector2d pixf(x, y);
        double transmittance = 1.0;
        Eigen::Vector3d acc = Eigen::Vector3d::Zero();
        auto& contribs = tape.pixels[pix];
        for (uint32_t v : list) {
          const Eigen::Vector2d d = pixf - tape.mean2d[v];
          const double power = -0.5 * d.dot(tape.conic[v] * d);
          if (power > 0.0) continue;
          const double weight = std::exp(power);
          const double sigma = tape.opacity[v] * weight;
          if (sigma < kContributionCutoff) continue;
          contribs.push_back({v, weight});
          acc += tape.color[v] * (sigma * transmittance);
          transmittance *= 1.0 - sigma;
          if (transmittance < opts.transmittance_stop) break;
        }
        acc += transmittance * opts.background;
        tape.final_transmittance[pix] = transmittance;
        for (int c = 0; c < 3; ++c) res.image.at(x, y, c) = acc[c];
      }
    }
  });
  return res;
}

namespace detail {

// Partial derivatives of the rotation matrix w.r.t. the unit quaternion.
inline void quat_rotation_grads(const Eigen::Vector4d& q, Eigen::Matrix3d out[4]) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  out[0] << 0, -2 * z, 2 * y, 2 * z, 0, -2 * x, -2 * y, 2 * x, 0;
  out[1] << 0, 2 * y, 2 * z, 2 * y, -4 * x, -2 * w, 2 * z, 2 * w, -4 * x;
  out[2] << -4 * y, 2 * x, 2 * w, 2 * x, 0, 2 * z, -2 * w, 2 * z, -4 * y;
  out[3] << -4 * z, -2 * w, 2 * x, 2 * w, -4 * z, 2 * y, 2 * x, 2 * y, 0;
}

// Per-visible accumulators produced by the pixel loops.
struct VisGrads {
  Eigen::Vector2d mean2d = Eigen::Vector2d::Zero();
  Eigen::Matrix2d cov2d = Eigen::Matrix2d::Zero();
  Eigen::Vector3d color = Eigen::Vector3d::Zero();
  double alpha = 0.0;

  VisGrads& operator+=(const VisGrads& o) {
    mean2d += o.mean2d;
    cov2d += o.cov2d;
    color += o.color;
    alpha += o.alpha;
    return *this;
  }
};

}  // namespace detail

// Reverse-mode gradients of the full render graph (compositing, 2D Gaussian
// evaluation, projection, covariance build, SH color) w.r.t. the attribute
// values the forward consumed. Culled Gaussians get zero gradients.
// Per-tile partials are reduced in fixed tile order, so the result does not
// depend on the worker count.
inline AttributeGrads render_backward(const RenderAttributes& attrs, const Camera& cam,
                                      const RenderTape& tape, const Image& dl_dimage) {
  if (dl_dimage.width != tape.width || dl_dimage.height != tape.height) {
    throw std::invalid_argument("render_backward: tape/image shape mismatch");
  }
  const size_t nvis = tape.vis_ids.size();
  const size_t ntiles = tape.tile_lists.size();

  // Phase 1: pixel loops, gradients into per-tile partial buffers.
  std::vector<std::vector<detail::VisGrads>> tile_grads(ntiles);
  parallel_for(ntiles, [&](size_t tile) {
    const auto& list = tape.tile_lists[tile];
    if (list.empty()) return;
    auto& grads = tile_grads[tile];
    grads.assign(list.size(), {});
    auto slot_of = [&](uint32_t v) {
      return static_cast<size_t>(
          std::lower_bound(list.begin(), list.end(), v) - list.begin());
    };
    const int tx = static_cast<int>(tile) % tape.tiles_x;
    const int ty = static_cast<int>(tile) / tape.tiles_x;
    const int px0 = tx * kTileSize, px1 = std::min(tape.width, px0 + kTileSize);
    const int py0 = ty * kTileSize, py1 = std::min(tape.height, py0 + kTileSize);
    std::vector<double> trans;
    for (int y = py0; y < py1; ++y) {
      for (int x = px0; x < px1; ++x) {
        const size_t pix = static_cast<size_t>(y) * tape.width + x;
        const auto& contribs = tape.pixels[pix];
        if (contribs.empty()) continue;
        const Eigen::Vector3d g(dl_dimage.at(x, y, 0), dl_dimage.at(x, y, 1),
                                dl_dimage.at(x, y, 2));
        const Eigen::Vector2d pixf(x, y);
        // Recompute the transmittance sequence front to back.
        trans.resize(contribs.size());
        double t = 1.0;
        for (size_t k = 0; k < contribs.size(); ++k) {
          trans[k] = t;
          t *= 1.0 - tape.opacity[contribs[k].vis] * contribs[k].weight;
        }
        // Suffix accumulation back to front.
        Eigen::Vector3d right = tape.background * t;
        for (size_t kk = contribs.size(); kk-- > 0;) {
          const auto& c = contribs[kk];
          const double alpha = tape.opacity[c.vis];
          const double sigma = alpha * c.weight;
          const double tk = trans[kk];
          auto& vg = grads[slot_of(c.vis)];
          vg.color += g * (sigma * tk);
          // At sigma == 1 the suffix is exactly zero; avoid the 0/0.
          const Eigen::Vector3d suffix =
              sigma < 1.0 ? Eigen::Vector3d(right / (1.0 - sigma)) : Eigen::Vector3d::Zero();
          const Eigen::Vector3d dc_dsigma = tape.color[c.vis] * tk - suffix;
          const double dsigma = g.dot(dc_dsigma);
          vg.alpha += dsigma * c.weight;
          const double dweight = dsigma * alpha;
          const Eigen::Vector2d d = pixf - tape.mean2d[c.vis];
          const Eigen::Vector2d conic_d = tape.conic[c.vis] * d;
          vg.mean2d += (dweight * c.weight) * conic_d;
          vg.cov2d += (0.5 * dweight * c.weight) * (conic_d * conic_d.transpose());
          right += tape.color[c.vis] * (sigma * tk);
        }
      }
    }
  });

  // Phase 2: reduce partials in tile order.
  std::vector<detail::VisGrads> vis_grads(nvis);
  for (size_t tile = 0; tile < ntiles; ++tile) {
    const auto& list = tape.tile_lists[tile];
    for (size_t s = 0; s < tile_grads[tile].size(); ++s) {
      vis_grads[list[s]] += tile_grads[tile][s];
    }
  }

  // Phase 3: chain through projection, covariance and SH per visible Gaussian.
  AttributeGrads out(attrs.size());
  const Eigen::Vector3d cam_pos = cam.position();
  parallel_for(nvis, [&](size_t v) {
    const uint32_t id = tape.vis_ids[v];
    const auto& vg = vis_grads[v];

    out.opacities[id] = vg.alpha;

    // Color -> SH coefficients and view direction -> position.
    Eigen::Vector3d dirv = attrs.positions[id] - cam_pos;
    const double len = dirv.norm();
    const Eigen::Vector3d dir = len > 0.0 ? Eigen::Vector3d(dirv / len)
                                          : Eigen::Vector3d(0, 0, 1);
    const auto basis = sh_basis(dir);
    const auto basis_grad = sh_basis_grad(dir);
    Eigen::Vector3d ddir = Eigen::Vector3d::Zero();
    for (int i = 0; i < kShCoeffCount; ++i) {
      out.sh[id].row(i) = basis[i] * vg.color.transpose();
      ddir += basis_grad[i] * attrs.sh[id].row(i).dot(vg.color);
    }
    if (len > 0.0) {
      out.positions[id] +=
          (Eigen::Matrix3d::Identity() - dir * dir.transpose()) * ddir / len;
    }

    // Projection chain.
    const Eigen::Vector3d t = cam.rot_wc * attrs.positions[id] + cam.t_wc;
    const double z = t.z();
    Eigen::Vector3d dt = Eigen::Vector3d::Zero();
    dt.x() += vg.mean2d.x() * cam.fx / z;
    dt.y() += vg.mean2d.y() * cam.fy / z;
    dt.z() += -vg.mean2d.x() * cam.fx * t.x() / (z * z) -
              vg.mean2d.y() * cam.fy * t.y() / (z * z);

    const double qnorm = attrs.rotations[id].norm();
    const Eigen::Vector4d q = qnorm > 0.0 ? Eigen::Vector4d(attrs.rotations[id] / qnorm)
                                          : Eigen::Vector4d(1, 0, 0, 0);
    const Eigen::Matrix3d rot = quat_to_rotation(q);
    const Eigen::Matrix3d rs = rot * attrs.scales[id].asDiagonal();
    const Eigen::Matrix3d cov3d = rs * rs.transpose();
    const Eigen::Matrix3d m3 = cam.rot_wc * cov3d * cam.rot_wc.transpose();

    Eigen::Matrix<double, 2, 3> jac;
    jac << cam.fx / z, 0, -cam.fx * t.x() / (z * z),
           0, cam.fy / z, -cam.fy * t.y() / (z * z);

    // cov2d = (J W) cov3d (J W)^T + floor; vg.cov2d is symmetric.
    const Eigen::Matrix<double, 2, 3> jw = jac * cam.rot_wc;
    const Eigen::Matrix3d dcov3d = jw.transpose() * vg.cov2d * jw;
    const Eigen::Matrix<double, 2, 3> djac =
        2.0 * vg.cov2d * jac * m3;  // through J (W fixed)
    dt.x() += djac(0, 2) * (-cam.fx / (z * z));
    dt.y() += djac(1, 2) * (-cam.fy / (z * z));
    dt.z() += djac(0, 0) * (-cam.fx / (z * z)) + djac(1, 1) * (-cam.fy / (z * z)) +
              djac(0, 2) * (2.0 * cam.fx * t.x() / (z * z * z)) +
              djac(1, 2) * (2.0 * cam.fy * t.y() / (z * z * z));

    out.positions[id] += cam.rot_wc.transpose() * dt;

    // Covariance build: cov3d = (R diag(s)) (R diag(s))^T.
    const Eigen::Matrix3d drs = 2.0 * dcov3d * rs;
    for (int k = 0; k < 3; ++k) out.scales[id][k] = drs.col(k).dot(rot.col(k));
    const Eigen::Matrix3d drot = drs * attrs.scales[id].asDiagonal();
    Eigen::Matrix3d qg[4];
    detail::quat_rotation_grads(q, qg);
    Eigen::Vector4d dq;
    for (int k = 0; k < 4; ++k) dq[k] = (drot.array() * qg[k].array()).sum();
    if (qnorm > 0.0) {
      out.rotations[id] = (dq - q * q.dot(dq)) / qnorm;
    }
  });
  return out;
}

}  // namespace grdo
