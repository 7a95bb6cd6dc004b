// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "occworld/autodiff/ops.hpp"
#include "occworld/core/rng.hpp"

namespace occworld::ad {

struct GradcheckResult {
  bool ok = true;
  std::size_t checked = 0;
  std::size_t failures = 0;
  double max_abs_err = 0.0;
  double max_rel_err = 0.0;  // over elements above the absolute floor
  std::string worst;
};

struct GradcheckOptions {
  double step = 1e-4;
  double rel_tol = 1e-4;
  double abs_floor = 1e-6;
  /// Upper bound on perturbed elements per input (evenly strided).
  std::size_t max_per_input = 4096;
};

/// Compares reverse-mode gradients of the scalar `f(inputs)` against central
/// finite differences. An element passes when |analytic - numeric| is below
/// the absolute floor or below rel_tol times the larger magnitude.
inline GradcheckResult gradcheck(
    const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& f,
    std::vector<Tensor<double>> inputs, const GradcheckOptions& opt = {}) {
  for (auto& in : inputs) {
    in.set_requires_grad(true);
    in.zero_grad();
  }
  const Tensor<double> out = f(inputs);
  out.backward();
  std::vector<std::vector<double>> analytic;
  for (const auto& in : inputs) analytic.push_back(in.grad());

  GradcheckResult res;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    auto& values = inputs[t].mutable_values();
    const std::size_t n = values.size();
    const std::size_t stride = std::max<std::size_t>(1, n / opt.max_per_input);
    for (std::size_t i = 0; i < n; i += stride) {
      const double saved = values[i];
      values[i] = saved + opt.step;
      const double up = f(inputs).item();
      values[i] = saved - opt.step;
      const double down = f(inputs).item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * opt.step);
      const double a = analytic[t][i];
      const double abs_err = std::abs(a - numeric);
      const double scale = std::max(std::abs(a), std::abs(numeric));
      const double rel_err = scale > 0.0 ? abs_err / scale : 0.0;
      ++res.checked;
      res.max_abs_err = std::max(res.max_abs_err, abs_err);
      if (abs_err > opt.abs_floor) res.max_rel_err = std::max(res.max_rel_err, rel_err);
      const bool pass = abs_err <= opt.abs_floor || rel_err < opt.rel_tol;
      if (!pass) {
        ++res.failures;
        if (res.ok) {
          std::ostringstream oss;
          oss << "input " << t << " element " << i << ": analytic " << a
              << " numeric " << numeric;
          res.worst = oss.str();
        }
        res.ok = false;
      }
    }
  }
  return res;
}

/// Fixed random weights for turning a tensor output into a scalar via
/// `project`; draw them once, outside the function being checked.
inline Tensor<double> projection_weights(const Shape& shape, Rng& rng) {
  std::vector<double> w(numel(shape));
  for (auto& v : w) v = rng.uniform(-1.0, 1.0);
  return Tensor<double>::constant(shape, std::move(w));
}

inline Tensor<double> project(const Tensor<double>& y, const Tensor<double>& w) {
  return sum(mul(y, w));
}

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0,
                                    double hi = 1.0) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor<double>::parameter(std::move(shape), std::move(v));
}

}  // namespace occworld::ad
