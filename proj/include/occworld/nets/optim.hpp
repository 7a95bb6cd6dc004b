// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "occworld/nets/mlp.hpp"

namespace occworld::nets {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update of `w` in place; `step` is the 1-based
/// index of this update.
template <typename T>
void adam_update(std::vector<T>& w, const std::vector<T>& g, std::vector<T>& m,
                 std::vector<T>& v, std::uint64_t step, const AdamConfig& cfg) {
  if (g.size() != w.size() || m.size() != w.size() || v.size() != w.size()) {
    throw ShapeError(detail::concat("adam update: ", w.size(), " parameters, ", g.size(),
                                    " gradients, ", m.size(), "/", v.size(), " moments"));
  }
  if (step == 0) throw UsageError("adam step index is 1-based");
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double gi = g[i];
    const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
    const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    w[i] = static_cast<T>(w[i] - cfg.lr * (mi / c1) / (std::sqrt(vi / c2) + cfg.eps));
  }
}

template <typename T>
void sgd_update(std::vector<T>& w, const std::vector<T>& g, double lr) {
  if (g.size() != w.size()) {
    throw ShapeError(detail::concat("sgd update: ", w.size(), " parameters, ", g.size(),
                                    " gradients"));
  }
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<T>(w[i] - lr * g[i]);
}

/// Adam over a parameter table. Tensors without a gradient are treated as
/// having a zero gradient.
template <typename T>
class Adam {
 public:
  Adam() = default;
  Adam(const ParameterSet<T>& params, const AdamConfig& cfg) : cfg_(cfg) {
    for (const auto& e : params.entries()) {
      m_.emplace_back(e.tensor.size(), T(0));
      v_.emplace_back(e.tensor.size(), T(0));
    }
  }

  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  std::uint64_t step_count() const { return step_; }
  std::vector<std::vector<T>>& first_moments() { return m_; }
  std::vector<std::vector<T>>& second_moments() { return v_; }
  const std::vector<std::vector<T>>& first_moments() const { return m_; }
  const std::vector<std::vector<T>>& second_moments() const { return v_; }
  void set_step_count(std::uint64_t s) { step_ = s; }

  void step(ParameterSet<T>& params) {
    if (params.size() != m_.size()) {
      throw ShapeError(detail::concat("optimizer tracks ", m_.size(), " tensors, got ",
                                      params.size()));
    }
    ++step_;
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& t = params.entries()[i].tensor;
      if (!t.requires_grad()) continue;
      adam_update(t.mutable_values(), t.grad(), m_[i], v_[i], step_, cfg_);
    }
  }

 private:
  AdamConfig cfg_{};
  std::uint64_t step_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

}  // namespace occworld::nets
