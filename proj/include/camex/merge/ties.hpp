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
#include <numeric>
#include <span>
#include <vector>

#include "camex/errors.hpp"
#include "camex/merge/domain_vectors.hpp"
#include "camex/moe/expert.hpp"
#include "camex/tensor/ops.hpp"

namespace camex {

struct TiesResult {
  std::vector<Tensor> taus;
  /// Elected sign per entry; 0 where the (trimmed) sum is exactly zero.
  Tensor elected_sign;
};

/// Keep-mask that zeroes the floor(fraction * n) smallest-magnitude entries;
/// equal magnitudes are dropped lowest index first.
inline std::vector<double> trim_mask(std::span<const double> values, double fraction) {
  std::vector<double> keep(values.size(), 1.0);
  const auto drop = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(values.size())));
  if (drop == 0) return keep;
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(values[a]) < std::abs(values[b]);
  });
  for (std::size_t i = 0; i < drop; ++i) keep[order[i]] = 0.0;
  return keep;
}

/// TIES interference removal over same-shape domain vectors: optional
/// magnitude trim, per-entry sign election from the sum, then every entry
/// disagreeing with the elected sign is zeroed. A zero sum elects nothing.
/// Masks are constants; gradients flow through surviving entries.
inline TiesResult ties_mask(std::span<const Tensor> taus, double trim_fraction = 0.0) {
  if (taus.empty()) throw ContractError("ties_mask: needs at least one domain vector");
  if (!(trim_fraction >= 0.0 && trim_fraction < 1.0)) {
    throw ContractError("ties_mask: trim fraction must lie in [0, 1)");
  }
  const Shape& shape = taus.front().shape();
  const std::size_t n = taus.front().numel();
  std::vector<std::vector<double>> keep;
  keep.reserve(taus.size());
  std::vector<double> total(n, 0.0);
  for (const auto& tau : taus) {
    if (tau.shape() != shape) {
      throw DimensionError("ties_mask: shape " + shape_str(shape) + " vs " + shape_str(tau.shape()));
    }
    keep.push_back(trim_mask(tau.values(), trim_fraction));
    auto v = tau.values();
    for (std::size_t e = 0; e < n; ++e) total[e] += keep.back()[e] * v[e];
  }
  std::vector<double> elected(n);
  for (std::size_t e = 0; e < n; ++e) elected[e] = sign_of(total[e]);

  TiesResult result;
  result.elected_sign = Tensor(shape, elected);
  for (std::size_t i = 0; i < taus.size(); ++i) {
    auto v = taus[i].values();
    auto& mask = keep[i];
    for (std::size_t e = 0; e < n; ++e) {
      if (elected[e] == 0.0 || sign_of(v[e]) != elected[e]) mask[e] = 0.0;
    }
    result.taus.push_back(mul(taus[i], Tensor(shape, std::move(mask))));
  }
  return result;
}

struct ExpertTiesResult {
  std::vector<Expert> taus;
  Expert elected_sign;
};

inline ExpertTiesResult ties_mask(const std::vector<Expert>& taus, double trim_fraction = 0.0) {
  if (taus.empty()) throw ContractError("ties_mask: needs at least one domain vector");
  ExpertTiesResult out;
  out.taus.resize(taus.size());
  out.elected_sign.activation = taus.front().activation;
  for (std::size_t slot = 0; slot < kExpertTensors; ++slot) {
    auto r = ties_mask(tensor_slot(taus, slot), trim_fraction);
    for (std::size_t i = 0; i < taus.size(); ++i) {
      out.taus[i].activation = taus[i].activation;
      *out.taus[i].tensors()[slot] = r.taus[i];
    }
    *out.elected_sign.tensors()[slot] = r.elected_sign;
  }
  return out;
}

}  // namespace camex
