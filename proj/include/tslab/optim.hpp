#pragma once

#include <cmath>
#include <vector>

#include "tslab/param.hpp"

namespace tslab {

// Adam with per-parameter learning-rate multipliers. The effective step for
// parameter p is base_lr * p.lr_multiplier; moment buffers advance for every
// parameter regardless of its multiplier.
class Adam {
 public:
  explicit Adam(std::vector<Parameter*> params, real beta1 = 0.9, real beta2 = 0.999, real eps = 1e-7)
      : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(params_[i]->value.size(), 0.0);
      v_[i].assign(params_[i]->value.size(), 0.0);
    }
  }

  std::size_t step_count() const { return step_; }

  void zero_grad() {
    for (Parameter* p : params_) p->value.zero_grad();
  }

  void step(real base_lr) {
    ++step_;
    const real bc1 = 1.0 - std::pow(beta1_, static_cast<real>(step_));
    const real bc2 = 1.0 - std::pow(beta2_, static_cast<real>(step_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Parameter& p = *params_[i];
      if (!p.value.requires_grad()) throw state_error("adam: parameter " + p.name + " has no gradient buffer");
      const auto& g = p.value.grad();
      auto& vals = p.value.values();
      const real lr = base_lr * p.lr_multiplier;
      for (std::size_t j = 0; j < vals.size(); ++j) {
        m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g[j];
        v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g[j] * g[j];
        const real mhat = m_[i][j] / bc1;
        const real vhat = v_[i][j] / bc2;
        vals[j] -= lr * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

 private:
  std::vector<Parameter*> params_;
  real beta1_, beta2_, eps_;
  std::size_t step_ = 0;
  std::vector<std::vector<real>> m_;
  std::vector<std::vector<real>> v_;
};

}  // namespace tslab
