#pragma once

#include "kgrec/common.hpp"

#include <cmath>
#include <string_view>
#include <vector>

namespace kgrec {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Linear decay from lr_start at step 0 to lr_end at total_steps.
inline double lr_at(double lr_start, double lr_end, Index step, Index total_steps) {
  if (total_steps < 1) fail("lr_at: total_steps must be >= 1");
  if (step < 0 || step > total_steps) fail("lr_at: step ", step, " outside [0, ", total_steps, "]");
  return lr_start + (lr_end - lr_start) * (static_cast<double>(step) / static_cast<double>(total_steps));
}

// Moment buffers for a parameter set with a `for_each(name, matrix)` visitor.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  Index steps() const { return step_; }

  template <typename Params>
  void step(Params& params, const Params& grads, double lr) {
    std::vector<const Matrix*> g;
    grads.for_each([&](std::string_view, const Matrix& m) { g.push_back(&m); });
    std::size_t idx = 0;
    params.for_each([&](std::string_view name, const Matrix& m) {
      const Matrix& gm = *g.at(idx);
      if (gm.rows() != m.rows() || gm.cols() != m.cols()) {
        fail("adam: gradient for ", name, " is ", gm.rows(), "x", gm.cols(), ", parameter is ", m.rows(), "x",
             m.cols());
      }
      if (!gm.allFinite()) fail("adam: non-finite gradient in ", name);
      ++idx;
    });
    if (m_.empty()) {
      params.for_each([&](std::string_view, const Matrix& m) {
        m_.push_back(Matrix::Zero(m.rows(), m.cols()));
        v_.push_back(Matrix::Zero(m.rows(), m.cols()));
      });
    }
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    idx = 0;
    params.for_each([&](std::string_view, Matrix& p) {
      const Matrix& gm = *g[idx];
      Matrix& m = m_[idx];
      Matrix& v = v_[idx];
      m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * gm;
      v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * gm.cwiseProduct(gm);
      p.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg_.eps);
      ++idx;
    });
  }

 private:
  AdamConfig cfg_;
  Index step_ = 0;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
};

}  // namespace kgrec
