#pragma once

#include <cmath>
#include <vector>

#include "bit/autodiff.hpp"

namespace bit {

// Adaptive moment estimation without weight decay.
template <typename S>
class Adam {
 public:
  Adam(ad::ParameterStore<S>& store, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : store_(store), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : store_.parameters()) {
      m_.push_back(Matrix<S>::Zero(p.value.rows(), p.value.cols()));
      v_.push_back(Matrix<S>::Zero(p.value.rows(), p.value.cols()));
    }
  }

  // Rescales all gradients so their global L2 norm is at most max_norm.
  // Returns the norm before clipping.
  double clip_grad_norm(double max_norm) {
    double sq = 0;
    for (const auto& p : store_.parameters()) sq += static_cast<double>(p.grad.squaredNorm());
    const double norm = std::sqrt(sq);
    if (max_norm > 0 && norm > max_norm) {
      const S factor = static_cast<S>(max_norm / (norm + 1e-6));
      for (auto& p : store_.parameters()) p.grad *= factor;
    }
    return norm;
  }

  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    const S step = static_cast<S>(lr_ / c1);
    const S inv_c2 = static_cast<S>(1.0 / c2);
    std::size_t i = 0;
    for (auto& p : store_.parameters()) {
      Matrix<S>& m = m_[i];
      Matrix<S>& v = v_[i];
      m = static_cast<S>(beta1_) * m + static_cast<S>(1.0 - beta1_) * p.grad;
      v = static_cast<S>(beta2_) * v + static_cast<S>(1.0 - beta2_) * p.grad.cwiseProduct(p.grad);
      p.value.array() -= step * m.array() / ((v.array() * inv_c2).sqrt() + static_cast<S>(eps_));
      ++i;
    }
  }

  long steps() const { return t_; }

 private:
  ad::ParameterStore<S>& store_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Matrix<S>> m_, v_;
};

}  // namespace bit
