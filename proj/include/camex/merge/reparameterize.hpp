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

#include <vector>

#include "camex/curvature/factors.hpp"
#include "camex/errors.hpp"
#include "camex/moe/expert.hpp"
#include "camex/tensor/ops.hpp"

namespace camex {

/// Folds curvature into stored experts, E'_i = E_m + M_i tau_i, so that plain
/// domain-specific merging over E'_i reproduces the curvature-aware merge.
/// The equivalence only holds at alpha = 1; any other alpha is rejected.
inline std::vector<Expert> reparameterize(const Expert& base, const std::vector<Expert>& taus,
                                          const CurvatureBank& curvature, double alpha = 1.0) {
  if (alpha != 1.0) {
    throw ContractError("reparameterization is exact only at alpha = 1");
  }
  const auto curved = apply_curvature(curvature, taus);
  std::vector<Expert> out;
  out.reserve(curved.size());
  for (const auto& c : curved) {
    out.push_back(map_tensors(base, [&](std::size_t slot) {
      return add(*base.tensors()[slot], *c.tensors()[slot]);
    }));
  }
  return out;
}

}  // namespace camex
