/* Copyright 2026 The CAMEx Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "camex/errors.hpp"
#include "camex/tensor/ops.hpp"
#include "camex/tensor/tensor.hpp"

namespace camex {

struct GradCheckReport {
  std::vector<double> analytic;
  std::vector<double> numeric;
  /// |analytic - numeric| / max(1, |analytic|, |numeric|) per entry.
  std::vector<double> rel_error;
  double max_rel_error = 0.0;
  double tol = 0.0;
  bool passed = false;
};

namespace detail {

inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

inline double evaluate_scalar(const std::function<Tensor()>& f) {
  NoGradGuard guard;
  return f().item();
}

}  // namespace detail

/// Compares backward() against central differences for every entry of every
/// parameter. `f` must rebuild its graph on each call from the parameters'
/// current values. Parameters are restored bit-exactly on return.
inline GradCheckReport fd_check_params(const std::function<Tensor()>& f,
                                       std::vector<Tensor> params, double step,
                                       double tol) {
  const double base = detail::evaluate_scalar(f);
  if (detail::evaluate_scalar(f) != base) {
    throw OracleError("fd_check: function is not deterministic");
  }

  for (auto& p : params) {
    if (!p.is_leaf()) throw ContractError("fd_check: parameters must be leaves");
    p.set_requires_grad(true);
    p.zero_grad();
  }
  backward(f());

  GradCheckReport report;
  report.tol = tol;
  for (auto& p : params) {
    const Tensor g = p.grad_tensor();
    auto values = p.mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = detail::evaluate_scalar(f);
      values[i] = saved - step;
      const double down = detail::evaluate_scalar(f);
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      report.analytic.push_back(g[i]);
      report.numeric.push_back(numeric);
      report.rel_error.push_back(detail::relative_error(g[i], numeric));
    }
  }
  report.max_rel_error = report.rel_error.empty()
                             ? 0.0
                             : *std::max_element(report.rel_error.begin(), report.rel_error.end());
  report.passed = report.max_rel_error <= tol;
  return report;
}

/// Single-input form: checks d f(x) / d x.
inline GradCheckReport fd_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                                double step = 1e-5, double tol = 1e-5) {
  return fd_check_params([&] { return f(x); }, {x}, step, tol);
}

}  // namespace camex
