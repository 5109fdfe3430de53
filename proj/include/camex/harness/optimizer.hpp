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
#include <cstddef>
#include <vector>

#include "camex/curvature/identities.hpp"
#include "camex/errors.hpp"
#include "camex/tensor/tensor.hpp"

namespace camex {

/// Linear warm-up to `base_lr` over `warmup` steps, then linear decay to zero
/// at `total` steps. `step` is zero-based.
inline double scheduled_lr(double base_lr, std::size_t step, std::size_t warmup,
                           std::size_t total) {
  if (warmup > 0 && step < warmup) {
    return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
  }
  if (total <= warmup) return base_lr;
  const double remaining = static_cast<double>(total - std::min(step, total));
  return base_lr * remaining / static_cast<double>(total - warmup);
}

struct OptimizerSettings {
  OptimizerKind kind = OptimizerKind::adamw;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-6;
  double weight_decay = 0.0;
};

/// AdamW with decoupled weight decay, or plain gradient descent. Operates in
/// place on leaf tensors; parameters without a gradient are skipped.
class Optimizer {
 public:
  Optimizer(std::vector<Tensor> params, OptimizerSettings settings)
      : params_(std::move(params)), settings_(settings) {
    for (const auto& p : params_) {
      if (!p.is_leaf()) throw ContractError("optimizer parameters must be leaves");
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  void step(double lr) {
    ++t_;
    const auto& s = settings_;
    const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Tensor& p = params_[k];
      if (!p.has_grad()) continue;
      auto w = p.mutable_values();
      auto g = p.grad();
      if (s.kind == OptimizerKind::gradient_descent) {
        for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * g[i];
        continue;
      }
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < w.size(); ++i) {
        w[i] *= 1.0 - lr * s.weight_decay;
        m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * g[i];
        v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * g[i] * g[i];
        w[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + s.eps);
      }
    }
  }

  std::size_t steps_taken() const { return t_; }

 private:
  std::vector<Tensor> params_;
  OptimizerSettings settings_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace camex
