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
#include <span>
#include <string>
#include <vector>

#include "camex/errors.hpp"
#include "camex/merge/domain_vectors.hpp"
#include "camex/moe/expert.hpp"
#include "camex/tensor/ops.hpp"

namespace camex {

/// Rows of flatten(x_i): [n, numel].
inline Tensor stack_flat(std::span<const Tensor> xs) {
  if (xs.empty()) throw ContractError("stack_flat: nothing to stack");
  std::vector<Tensor> rows;
  rows.reserve(xs.size());
  for (const auto& x : xs) {
    if (x.shape() != xs.front().shape()) {
      throw DimensionError("stack_flat: shape " + shape_str(xs.front().shape()) + " vs " +
                           shape_str(x.shape()));
    }
    rows.push_back(reshape(x, {1, x.numel()}));
  }
  return concat_rows(rows);
}

/// Batched merge of one parameter tensor: row b of the result is
/// flatten(base) + alpha * sum_i scores[b, i] * flatten(deltas[i]).
inline Tensor merge_rows(const Tensor& base, std::span<const Tensor> deltas, const Tensor& scores,
                         double alpha) {
  if (scores.rank() != 2 || scores.dim(1) != deltas.size()) {
    throw DimensionError("merge_rows: scores " + shape_str(scores.shape()) + " for " +
                         std::to_string(deltas.size()) + " domain vectors");
  }
  for (const auto& d : deltas) {
    if (d.shape() != base.shape()) {
      throw DimensionError("merge_rows: shape " + shape_str(base.shape()) + " vs " +
                           shape_str(d.shape()));
    }
  }
  Tensor update = mul_scalar(matmul(scores, stack_flat(deltas)), alpha);
  return add_bias(update, flatten(base));
}

/// E_m + alpha * sum_i s_i tau_i for one parameter tensor; scores[n].
inline Tensor merge_tensor(const Tensor& base, std::span<const Tensor> taus, const Tensor& scores,
                           double alpha) {
  if (scores.rank() != 1 || scores.dim(0) != taus.size()) {
    throw DimensionError("merge: " + std::to_string(taus.size()) + " domain vectors but scores " +
                         shape_str(scores.shape()));
  }
  if (alpha == 0.0) return base;
  Tensor row = merge_rows(base, taus, reshape(scores, {1, taus.size()}), alpha);
  return reshape(row, base.shape());
}

/// Domain-specific merging applied tensor-wise with shared router scores.
inline Expert merge_domain_specific(const Expert& base, const std::vector<Expert>& taus,
                                    const Tensor& scores, double alpha) {
  return map_tensors(base, [&](std::size_t slot) {
    return merge_tensor(*base.tensors()[slot], tensor_slot(taus, slot), scores, alpha);
  });
}

}  // namespace camex
