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

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "camex/errors.hpp"
#include "camex/harness/config.hpp"
#include "camex/harness/model.hpp"
#include "camex/merge/fisher.hpp"
#include "camex/rng.hpp"

namespace camex {

/// Diagonal Fisher of each expert of `layer`, each measured with that expert
/// standing in for the whole SMoE block. One example is one sequence. With
/// FisherLabels::sampled the targets are drawn from the model's own
/// predictive distribution.
inline std::vector<Expert> estimate_layer_fishers(const Model& m, std::size_t layer,
                                                  const Dataset& ds, FisherLabels labels,
                                                  std::uint64_t seed) {
  if (ds.sequences.empty()) throw ContractError("Fisher estimation needs a nonempty dataset");
  std::vector<Expert> out;
  const auto& experts = m.layers.at(layer).experts;
  for (std::size_t i = 0; i < experts.size(); ++i) {
    Expert probe = experts[i].clone(true);
    std::vector<Tensor> params;
    for (const Tensor* t : probe.tensors()) params.push_back(*t);
    Rng rng(derive_seed({seed, layer, i, 0xf15e}));
    auto example_loss = [&](std::size_t ex) {
      Batch b = make_batch(ds, {ex});
      Tensor logp = log_softmax(batch_logits(m, b, {}, LayerOverride{layer, &probe}));
      if (labels == FisherLabels::sampled) {
        const std::size_t cols = logp.dim(1);
        for (std::size_t r = 0; r < b.targets.size(); ++r) {
          std::vector<double> row(cols);
          for (std::size_t c = 0; c < cols; ++c) row[c] = std::exp(logp.at(r, c));
          b.targets[r] = detail::sample_row(row, rng);
        }
      }
      return neg(mean(gather_cols(logp, b.targets)));
    };
    std::vector<Tensor> f = estimate_diag_fisher(params, ds.sequences.size(), example_loss);
    out.push_back(map_tensors(probe, [&](std::size_t slot) { return f[slot]; }));
  }
  return out;
}

}  // namespace camex
