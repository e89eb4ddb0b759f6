#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

namespace grdo {

// Adam with first/second moment buffers over a flat parameter array. The
// epsilon follows the reference 3DGS training setup.
class Adam {
 public:
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-15;

  void step(double* params, const double* grads, size_t n, double lr) {
    step(params, grads, n, [lr](size_t) { return lr; });
  }

  // Per-element learning rate (used for SH: DC and higher degrees differ).
  template <class LrFn>
  void step(double* params, const double* grads, size_t n, LrFn&& lr_of) {
    if (m_.size() != n) {
      m_.assign(n, 0.0);
      v_.assign(n, 0.0);
      t_ = 0;
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
    for (size_t i = 0; i < n; ++i) {
      const double g = grads[i];
      m_[i] = beta1 * m_[i] + (1.0 - beta1) * g;
      v_[i] = beta2 * v_[i] + (1.0 - beta2) * g * g;
      const double mhat = m_[i] / c1;
      const double vhat = v_[i] / c2;
      params[i] -= lr_of(i) * mhat / (std::sqrt(vhat) + eps);
    }
  }

 private:
  std::vector<double> m_, v_;
  long t_ = 0;
};

}  // namespace grdo
