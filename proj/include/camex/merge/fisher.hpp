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

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "camex/errors.hpp"
#include "camex/moe/expert.hpp"
#include "camex/tensor/ops.hpp"

namespace camex {

/// Precision-weighted elementwise average (sum_i F_i E_i) / (sum_i F_i) with
/// diagonal Fisher weights. Value-only.
inline Tensor fisher_diag_merge(std::span<const Tensor> experts, std::span<const Tensor> fishers) {
  if (experts.empty() || experts.size() != fishers.size()) {
    throw ContractError("fisher_diag_merge: need one Fisher per expert");
  }
  const Shape& shape = experts.front().shape();
  const std::size_t n = experts.front().numel();
  std::vector<double> num(n, 0.0), den(n, 0.0);
  for (std::size_t i = 0; i < experts.size(); ++i) {
    if (experts[i].shape() != shape || fishers[i].shape() != shape) {
      throw DimensionError("fisher_diag_merge: shape " + shape_str(shape) + " vs " +
                           shape_str(experts[i].shape()) + " / " + shape_str(fishers[i].shape()));
    }
    auto e = experts[i].values();
    auto f = fishers[i].values();
    for (std::size_t k = 0; k < n; ++k) {
      if (f[k] < 0.0) throw ContractError("fisher_diag_merge: negative Fisher entry");
      num[k] += f[k] * e[k];
      den[k] += f[k];
    }
  }
  for (std::size_t k = 0; k < n; ++k) {
    if (!(den[k] > 0.0)) {
      throw DegenerateWeightError("fisher_diag_merge: total Fisher is zero at entry " +
                                  std::to_string(k));
    }
    num[k] /= den[k];
  }
  return Tensor(shape, std::move(num));
}

inline Expert fisher_diag_merge(const std::vector<Expert>& experts,
                                const std::vector<Expert>& fishers) {
  if (experts.empty() || experts.size() != fishers.size()) {
    throw ContractError("fisher_diag_merge: need one Fisher per expert");
  }
  return map_tensors(experts.front(), [&](std::size_t slot) {
    std::vector<Tensor> e, f;
    for (std::size_t i = 0; i < experts.size(); ++i) {
      e.push_back(*experts[i].tensors()[slot]);
      f.push_back(*fishers[i].tensors()[slot]);
    }
    return fisher_diag_merge(e, f);
  });
}

/// Empirical diagonal Fisher: per-parameter mean over examples of the squared
/// gradient of `example_loss(i)`. Label choice (empirical or sampled) is the
/// caller's, made inside example_loss.
inline std::vector<Tensor> estimate_diag_fisher(std::vector<Tensor> params, std::size_t examples,
                                                const std::function<Tensor(std::size_t)>& example_loss) {
  if (examples == 0) throw ContractError("estimate_diag_fisher: empty batch");
  std::vector<Tensor> fisher;
  fisher.reserve(params.size());
  for (auto& p : params) {
    p.set_requires_grad(true);
    fisher.push_back(Tensor::zeros(p.shape()));
  }
  for (std::size_t ex = 0; ex < examples; ++ex) {
    for (auto& p : params) p.zero_grad();
    backward(example_loss(ex));
    for (std::size_t j = 0; j < params.size(); ++j) {
      auto g = params[j].grad();
      if (g.empty()) continue;
      auto f = fisher[j].mutable_values();
      for (std::size_t k = 0; k < f.size(); ++k) f[k] += g[k] * g[k];
    }
  }
  const double inv = 1.0 / static_cast<double>(examples);
  for (auto& f : fisher)
    for (double& v : f.mutable_values()) v *= inv;
  return fisher;
}

}  // namespace camex
