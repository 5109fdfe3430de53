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

#include <string>
#include <vector>

#include "camex/curvature/factors.hpp"
#include "camex/errors.hpp"
#include "camex/merge/domain_specific.hpp"
#include "camex/moe/expert.hpp"

namespace camex {

/// Curvature-aware merge E_m + alpha * sum_i M_i (s_i tau_i). M_i is linear,
/// so it is applied to tau_i once and the scores weight the curved vectors.
inline Expert merge_ca(const Expert& base, const std::vector<Expert>& taus, const Tensor& scores,
                       double alpha, const CurvatureBank& bank) {
  if (scores.rank() != 1 || scores.dim(0) != taus.size()) {
    throw ContractError("merge_ca: " + std::to_string(taus.size()) + " domain vectors but scores " +
                        shape_str(scores.shape()));
  }
  return merge_domain_specific(base, apply_curvature(bank, taus), scores, alpha);
}

/// Base expert of the next layer: E_m + alpha/(N-1) * sum_i M_i tau_i.
/// `curved` are the already curvature-applied domain vectors of this layer.
inline Expert propagate_base(const Expert& base, const std::vector<Expert>& curved, double alpha) {
  if (curved.empty()) throw ContractError("dynamic merging needs N >= 2 experts");
  const auto n = static_cast<double>(curved.size());
  Tensor uniform = Tensor::full({curved.size()}, 1.0 / n);
  return merge_domain_specific(base, curved, uniform, alpha);
}

struct DynamicMergeResult {
  Expert next_base;  // E_m^{l+1}
  Expert merged;     // merged expert of layer l+1
};

/// Two-step dynamic merge across consecutive layers: propagate the global
/// base with uniform weights, then curvature-aware merge at layer l+1.
inline DynamicMergeResult merge_dynamic(const Expert& base_l, const std::vector<Expert>& taus_l,
                                        const std::vector<Expert>& taus_next,
                                        const Tensor& scores_next, double alpha,
                                        const CurvatureBank& bank_l, const CurvatureBank& bank_next) {
  if (taus_l.empty() || taus_next.empty()) throw ContractError("dynamic merging needs N >= 2 experts");
  DynamicMergeResult r;
  r.next_base = propagate_base(base_l, apply_curvature(bank_l, taus_l), alpha);
  r.merged = merge_ca(r.next_base, taus_next, scores_next, alpha, bank_next);
  return r;
}

}  // namespace camex
