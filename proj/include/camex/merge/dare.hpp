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

#include <cstdint>
#include <vector>

#include "camex/errors.hpp"
#include "camex/moe/expert.hpp"
#include "camex/rng.hpp"
#include "camex/tensor/ops.hpp"

namespace camex {

/// Bernoulli keep-mask: each entry survives with probability 1 - p.
inline Tensor dare_keep_mask(const Shape& shape, double p, std::uint64_t seed) {
  if (!(p >= 0.0 && p < 1.0)) throw ContractError("DARE drop probability must lie in [0, 1)");
  Rng rng(seed);
  Tensor mask = Tensor::zeros(shape);
  for (double& m : mask.mutable_values()) m = rng.uniform() < p ? 0.0 : 1.0;
  return mask;
}

/// tau * mask / (1 - p) with an explicit mask.
inline Tensor dare_apply(const Tensor& tau, const Tensor& keep_mask, double p) {
  if (!(p >= 0.0 && p < 1.0)) throw ContractError("DARE drop probability must lie in [0, 1)");
  if (p == 0.0) return tau;
  return mul_scalar(mul(tau, keep_mask), 1.0 / (1.0 - p));
}

inline Tensor dare_mask(const Tensor& tau, double p, std::uint64_t seed) {
  if (p == 0.0) return tau;
  return dare_apply(tau, dare_keep_mask(tau.shape(), p, seed), p);
}

/// Seed of one mask draw: hash(rng_seed, layer, expert, step, tensor slot).
inline std::uint64_t dare_seed(std::uint64_t rng_seed, std::uint64_t layer, std::uint64_t expert,
                               std::uint64_t step, std::uint64_t slot) {
  return derive_seed({rng_seed, layer, expert, step, slot});
}

/// DARE over every tensor of every domain vector; masks are drawn fresh per call.
inline std::vector<Expert> dare_mask(const std::vector<Expert>& taus, double p,
                                     std::uint64_t rng_seed, std::uint64_t layer = 0,
                                     std::uint64_t step = 0) {
  std::vector<Expert> out;
  out.reserve(taus.size());
  for (std::size_t i = 0; i < taus.size(); ++i) {
    out.push_back(map_tensors(taus[i], [&](std::size_t slot) {
      return dare_mask(*taus[i].tensors()[slot], p, dare_seed(rng_seed, layer, i, step, slot));
    }));
  }
  return out;
}

}  // namespace camex
