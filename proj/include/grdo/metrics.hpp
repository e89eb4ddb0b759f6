#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "grdo/image.hpp"

namespace grdo {

namespace detail {

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

inline const std::array<double, kSsimWindow>& ssim_kernel() {
  static const std::array<double, kSsimWindow> k = [] {
    std::array<double, kSsimWindow> v{};
    double sum = 0.0;
    for (int i = 0; i < kSsimWindow; ++i) {
      const double d = i - kSsimWindow / 2;
      v[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
      sum += v[i];
    }
    for (double& x : v) x /= sum;
    return v;
  }();
  return k;
}

// Separable Gaussian filter with zero padding (the reference convention for
// the SSIM window). Operates on a single H*W plane.
inline void gauss_filter(const std::vector<double>& src, int w, int h,
                         std::vector<double>& tmp, std::vector<double>& dst) {
  const auto& k = ssim_kernel();
  const int r = kSsimWindow / 2;
  tmp.assign(src.size(), 0.0);
  dst.assign(src.size(), 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int t = -r; t <= r; ++t) {
        const int xx = x + t;
        if (xx >= 0 && xx < w) acc += k[t + r] * src[static_cast<size_t>(y) * w + xx];
      }
      tmp[static_cast<size_t>(y) * w + x] = acc;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int t = -r; t <= r; ++t) {
        const int yy = y + t;
        if (yy >= 0 && yy < h) acc += k[t + r] * tmp[static_cast<size_t>(yy) * w + x];
      }
      dst[static_cast<size_t>(y) * w + x] = acc;
    }
  }
}

inline void extract_plane(const Image& img, int c, std::vector<double>& plane) {
  plane.resize(img.pixel_count());
  for (size_t p = 0; p < img.pixel_count(); ++p) plane[p] = img.data[p * 3 + c];
}

}  // namespace detail

inline void check_same_shape(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height) {
    throw std::invalid_argument("image dimension mismatch");
  }
}

// Mean absolute error over all pixels and channels.
inline double l1_loss(const Image& img, const Image& ref) {
  check_same_shape(img, ref);
  double sum = 0.0;
  for (size_t i = 0; i < img.data.size(); ++i) sum += std::abs(img.data[i] - ref.data[i]);
  return sum / static_cast<double>(img.data.size());
}

inline void l1_backward(const Image& img, const Image& ref, double upstream, Image& grad) {
  const double scale = upstream / static_cast<double>(img.data.size());
  for (size_t i = 0; i < img.data.size(); ++i) {
    const double d = img.data[i] - ref.data[i];
    grad.data[i] += d > 0 ? scale : (d < 0 ? -scale : 0.0);
  }
}

// Mean SSIM over channels with an 11x11 Gaussian window (sigma 1.5) and the
// standard stabilizers for unit peak. If grad is non-null it receives
// d(mean SSIM)/d(img) scaled by `upstream`, accumulated in place.
inline double ssim(const Image& img, const Image& ref, Image* grad = nullptr,
                   double upstream = 1.0) {
  check_same_shape(img, ref);
  using namespace detail;
  const int w = img.width, h = img.height;
  const size_t np = img.pixel_count();
  std::vector<double> x, y, tmp, mx, my, x2f, y2f, xyf, prod;
  std::vector<double> gvx, gvxy, amx, fa, fb, fc;
  double total = 0.0;
  for (int c = 0; c < 3; ++c) {
    extract_plane(img, c, x);
    extract_plane(ref, c, y);
    gauss_filter(x, w, h, tmp, mx);
    gauss_filter(y, w, h, tmp, my);
    prod.resize(np);
    for (size_t p = 0; p < np; ++p) prod[p] = x[p] * x[p];
    gauss_filter(prod, w, h, tmp, x2f);
    for (size_t p = 0; p < np; ++p) prod[p] = y[p] * y[p];
    gauss_filter(prod, w, h, tmp, y2f);
    for (size_t p = 0; p < np; ++p) prod[p] = x[p] * y[p];
    gauss_filter(prod, w, h, tmp, xyf);

    if (grad) {
      gvx.assign(np, 0.0);
      gvxy.assign(np, 0.0);
      amx.assign(np, 0.0);
    }
    const double weight = 1.0 / (3.0 * static_cast<double>(np));
    for (size_t p = 0; p < np; ++p) {
      const double vx = x2f[p] - mx[p] * mx[p];
      const double vy = y2f[p] - my[p] * my[p];
      const double vxy = xyf[p] - mx[p] * my[p];
      const double a1 = 2.0 * mx[p] * my[p] + kSsimC1;
      const double a2 = 2.0 * vxy + kSsimC2;
      const double b1 = mx[p] * mx[p] + my[p] * my[p] + kSsimC1;
      const double b2 = vx + vy + kSsimC2;
      const double s = (a1 * a2) / (b1 * b2);
      total += s * weight;
      if (grad) {
        const double u = upstream * weight;
        const double ds_da1 = a2 / (b1 * b2);
        const double ds_da2 = a1 / (b1 * b2);
        const double ds_db1 = -a1 * a2 / (b1 * b1 * b2);
        const double ds_db2 = -a1 * a2 / (b1 * b2 * b2);
        const double gmx = u * (2.0 * my[p] * ds_da1 + 2.0 * mx[p] * ds_db1);
        gvx[p] = u * ds_db2;
        gvxy[p] = u * 2.0 * ds_da2;
        // means feed the variance terms too
        amx[p] = gmx - 2.0 * mx[p] * gvx[p] - my[p] * gvxy[p];
      }
    }
    if (grad) {
      gauss_filter(amx, w, h, tmp, fa);
      gauss_filter(gvx, w, h, tmp, fb);
      gauss_filter(gvxy, w, h, tmp, fc);
      for (size_t p = 0; p < np; ++p) {
        grad->data[p * 3 + c] += fa[p] + 2.0 * x[p] * fb[p] + y[p] * fc[p];
      }
    }
  }
  return total;
}

inline double d_ssim(const Image& img, const Image& ref) {
  return (1.0 - ssim(img, ref)) / 2.0;
}

inline double psnr_from_mse(double mse) {
  if (mse <= 0.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(mse);
}

struct ImageMetrics {
  double l1 = 0.0;
  double d_ssim = 0.0;
  double psnr = 0.0;  // +inf sentinel for identical images
  double ssim = 0.0;
};

// Evaluation metrics; both images are clamped to [0,1] first.
inline ImageMetrics metrics(const Image& img, const Image& ref) {
  check_same_shape(img, ref);
  const Image a = img.clamped01();
  const Image b = ref.clamped01();
  ImageMetrics m;
  m.l1 = l1_loss(a, b);
  m.ssim = ssim(a, b);
  m.d_ssim = (1.0 - m.ssim) / 2.0;
  double mse = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.data.size());
  m.psnr = psnr_from_mse(mse);
  return m;
}

}  // namespace grdo
