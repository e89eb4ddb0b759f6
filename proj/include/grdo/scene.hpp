#pragma once

#include <cmath>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include <json.hpp>

#include "grdo/gaussian.hpp"
#include "grdo/image.hpp"
#include "grdo/render.hpp"
#include "grdo/rng.hpp"
#include "grdo/sh.hpp"

namespace grdo {

// Desk-scale synthetic scene: random ellipsoid clusters with view-dependent
// SH colors. Rendering this cloud provides self-consistent training targets.
struct SceneGenConfig {
  uint64_t seed = 1;
  int clusters = 6;
  int gaussians_per_cluster = 250;
  double scene_radius = 1.0;
  double cluster_radius = 0.22;
  double min_scale = 0.015;
  double max_scale = 0.07;
  double sh_strength = 0.25;  // view-dependence of the cluster colors
};

inline GaussianCloud generate_scene(const SceneGenConfig& cfg) {
  Rng rng(cfg.seed);
  GaussianCloud cloud;
  for (int c = 0; c < cfg.clusters; ++c) {
    Eigen::Vector3d center;
    do {
      center = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    } while (center.norm() > 1.0);
    center *= 0.7 * cfg.scene_radius;
    const Eigen::Vector3d base_color(rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85),
                                     rng.uniform(0.15, 0.85));
    for (int g = 0; g < cfg.gaussians_per_cluster; ++g) {
      cloud.positions.push_back(center + cfg.cluster_radius *
                                             Eigen::Vector3d(rng.normal(), rng.normal(),
                                                             rng.normal()));
      Eigen::Vector3d ls;
      for (int a = 0; a < 3; ++a) {
        ls[a] = std::log(rng.uniform(cfg.min_scale, cfg.max_scale) * cfg.scene_radius);
      }
      cloud.log_scales.push_back(ls);
      Eigen::Vector4d q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
      if (q.norm() < 1e-6) q = {1, 0, 0, 0};
      cloud.rotations.push_back(q.normalized());
      cloud.opacity_logits.push_back(rng.uniform(0.5, 2.5));

      ShCoeffs sh = ShCoeffs::Zero();
      const Eigen::Vector3d color = base_color + 0.1 * Eigen::Vector3d(rng.normal(),
                                                                       rng.normal(),
                                                                       rng.normal());
      sh.row(0) = ((color - Eigen::Vector3d::Constant(0.5)) / kShC0).transpose();
      for (int l = 1; l <= kMaxShDegree; ++l) {
        const double amp = cfg.sh_strength / std::pow(2.0, l - 1) / kShDegreeRows[l];
        for (int r = kShDegreeStart[l]; r < kShDegreeStart[l] + kShDegreeRows[l]; ++r) {
          for (int ch = 0; ch < 3; ++ch) sh(r, ch) = amp * rng.normal();
        }
      }
      cloud.sh_coeffs.push_back(sh);
    }
  }
  return cloud;
}

struct CameraRigConfig {
  int count = 20;
  double radius = 4.0;
  double fov_deg = 50.0;
  int width = 96;
  int height = 96;
  double near = 0.1;
};

inline Camera look_at_camera(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                             const CameraRigConfig& cfg) {
  Camera cam;
  Eigen::Vector3d z = (target - eye).normalized();
  Eigen::Vector3d up(0, 1, 0);
  if (std::abs(z.dot(up)) > 0.99) up = Eigen::Vector3d(1, 0, 0);
  const Eigen::Vector3d x = z.cross(up).normalized();
  const Eigen::Vector3d y = z.cross(x);
  cam.rot_wc.row(0) = x;
  cam.rot_wc.row(1) = y;
  cam.rot_wc.row(2) = z;
  cam.t_wc = -cam.rot_wc * eye;
  cam.width = cfg.width;
  cam.height = cfg.height;
  const double fov = cfg.fov_deg * std::numbers::pi / 180.0;
  cam.fx = cam.fy = 0.5 * cfg.width / std::tan(0.5 * fov);
  cam.cx = 0.5 * (cfg.width - 1);
  cam.cy = 0.5 * (cfg.height - 1);
  cam.near = cfg.near;
  return cam;
}

// Fibonacci sphere of inward-looking cameras.
inline std::vector<Camera> camera_sphere(const CameraRigConfig& cfg) {
  std::vector<Camera> cams;
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < cfg.count; ++i) {
    const double y = 1.0 - 2.0 * (i + 0.5) / cfg.count;
    const double r = std::sqrt(std::max(0.0, 1.0 - y * y));
    const double phi = golden * i;
    const Eigen::Vector3d eye =
        cfg.radius * Eigen::Vector3d(r * std::cos(phi), y, r * std::sin(phi));
    cams.push_back(look_at_camera(eye, Eigen::Vector3d::Zero(), cfg));
  }
  return cams;
}

struct Dataset {
  std::vector<Camera> cameras;
  std::vector<Image> images;
  std::vector<size_t> train_indices;
  std::vector<size_t> test_indices;

  void check_usable() const {
    if (train_indices.empty()) throw std::invalid_argument("Dataset: empty train split");
    for (const auto& img : images) {
      if (img.width != images[0].width || img.height != images[0].height) {
        throw std::invalid_argument("Dataset: inconsistent image resolutions");
      }
    }
  }
};

// Reference views rendered from a ground-truth cloud; every `test_every`-th
// camera is held out (0 keeps everything in train).
inline Dataset make_dataset(const GaussianCloud& cloud, std::vector<Camera> cameras,
                            const Eigen::Vector3d& background, int test_every = 5) {
  Dataset ds;
  ds.cameras = std::move(cameras);
  RenderOptions opts;
  opts.background = background;
  const RenderAttributes attrs = activate(cloud);
  for (size_t i = 0; i < ds.cameras.size(); ++i) {
    ds.images.push_back(render(attrs, ds.cameras[i], opts).image);
    if (test_every > 0 && i % test_every == 0) {
      ds.test_indices.push_back(i);
    } else {
      ds.train_indices.push_back(i);
    }
  }
  ds.check_usable();
  return ds;
}

inline void save_cameras(const std::vector<Camera>& cams, const std::string& path) {
  nlohmann::json root;
  root["cameras"] = nlohmann::json::array();
  for (const Camera& c : cams) {
    nlohmann::json j;
    j["width"] = c.width;
    j["height"] = c.height;
    j["fx"] = c.fx;
    j["fy"] = c.fy;
    j["cx"] = c.cx;
    j["cy"] = c.cy;
    j["near"] = c.near;
    std::vector<double> rot(9), t(3);
    for (int r = 0; r < 3; ++r) {
      for (int k = 0; k < 3; ++k) rot[r * 3 + k] = c.rot_wc(r, k);
      t[r] = c.t_wc[r];
    }
    j["rot_wc"] = rot;
    j["t_wc"] = t;
    root["cameras"].push_back(j);
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_cameras: cannot open " + path);
  out << root.dump(2) << "\n";
}

inline std::vector<Camera> load_cameras(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("load_cameras: cannot open " + path);
  nlohmann::json root;
  try {
    in >> root;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("load_cameras: bad JSON in " + path + ": " + e.what());
  }
  std::vector<Camera> cams;
  for (const auto& j : root.at("cameras")) {
    Camera c;
    c.width = j.at("width");
    c.height = j.at("height");
    c.fx = j.at("fx");
    c.fy = j.at("fy");
    c.cx = j.at("cx");
    c.cy = j.at("cy");
    c.near = j.at("near");
    const auto rot = j.at("rot_wc").get<std::vector<double>>();
    const auto t = j.at("t_wc").get<std::vector<double>>();
    if (rot.size() != 9 || t.size() != 3) {
      throw ParseError("load_cameras: rot_wc/t_wc have wrong arity");
    }
    for (int r = 0; r < 3; ++r) {
      for (int k = 0; k < 3; ++k) c.rot_wc(r, k) = rot[r * 3 + k];
      c.t_wc[r] = t[r];
    }
    c.validate();
    cams.push_back(c);
  }
  if (cams.empty()) throw ParseError("load_cameras: no cameras in " + path);
  return cams;
}

}  // namespace grdo
