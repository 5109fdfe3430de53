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
#include <string>
#include <vector>

#include "camex/errors.hpp"
#include "camex/moe/expert.hpp"
#include "camex/tensor/ops.hpp"

namespace camex {

/// Linear gate W_g[N_scores, d_model]. Merging layers score the N-1 domain
/// experts only; vanilla SMoE layers score all N.
struct Router {
  Tensor W_g;

  std::size_t num_scores() const { return W_g.dim(0); }
  std::size_t d_model() const { return W_g.dim(1); }
};

/// softmax(h W_g^T) row-wise: scores[T, N_scores].
inline Tensor route_tokens(const Router& router, const Tensor& h) {
  if (h.rank() != 2 || h.dim(1) != router.d_model()) {
    throw DimensionError("route_tokens: input shape " + shape_str(h.shape()) + " vs W_g " +
                         shape_str(router.W_g.shape()));
  }
  return softmax(matmul(h, transpose(router.W_g)), 1);
}

/// Token-level top-k SMoE: y_t = sum_{i in topk(t)} G(t,i) FFN_i(h_t).
/// Expert i of the bank (0 = base) is scored by router column i.
inline Tensor smoe_forward(const ExpertBank& bank, const Router& router, const Tensor& h,
                           std::size_t k) {
  if (k < 1) throw ContractError("smoe_forward: k must be >= 1");
  if (router.num_scores() != bank.size()) {
    throw DimensionError("smoe_forward: router scores " + std::to_string(router.num_scores()) +
                         " experts, bank has " + std::to_string(bank.size()));
  }
  if (k > router.num_scores()) {
    throw ContractError("smoe_forward: k=" + std::to_string(k) + " exceeds " +
                        std::to_string(router.num_scores()) + " experts");
  }
  const std::size_t tokens = h.dim(0);
  const std::size_t n = bank.size();
  Tensor scores = route_tokens(router, h);
  if (tokens == 0) return Tensor::zeros({0, bank.base.d_model()});

  Tensor mask = Tensor::zeros({tokens, n});
  {
    auto mv = mask.mutable_values();
    const auto selected = topk_indices(scores, k);
    for (std::size_t t = 0; t < tokens; ++t)
      for (std::size_t i : selected[t]) mv[t * n + i] = 1.0;
  }
  Tensor gates = mul(scores, mask);

  Tensor y;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor contribution =
        scale_rows(expert_forward(bank.at(i), h), gather_cols(gates, std::vector<std::size_t>(tokens, i)));
    y = y.defined() ? add(y, contribution) : contribution;
  }
  return y;
}

}  // namespace camex
