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

// Dense-oracle checks of how curvature matrices learn.
//
// These work on a single matrix parameter with a materialized curvature
// matrix M_j[n, n], n = numel(tau) <= kDenseOracleCap. They back the runtime
// verification suites and the test harness.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "camex/errors.hpp"
#include "camex/merge/domain_specific.hpp"
#include "camex/tensor/ops.hpp"

namespace camex {

inline constexpr std::size_t kDenseOracleCap = 64;

enum class OptimizerKind { gradient_descent, adamw };

inline void require_dense_cap(std::size_t n) {
  if (n > kDenseOracleCap) {
    throw ContractError("dense oracle refuses vec length " + std::to_string(n) + " (cap " +
                        std::to_string(kDenseOracleCap) + ")");
  }
}

/// reshape(M vec(tau)).
inline Tensor dense_apply(const Tensor& m, const Tensor& tau) {
  return reshape(matmul(m, reshape(tau, {tau.numel(), 1})), tau.shape());
}

/// E_m + alpha * sum_j M_j (s_j tau_j) with dense M_j.
inline Tensor dense_ca_merge(const Tensor& base, const std::vector<Tensor>& taus,
                             const Tensor& scores, double alpha, const std::vector<Tensor>& curvature) {
  if (curvature.size() != taus.size()) throw ContractError("dense_ca_merge: one M per tau required");
  require_dense_cap(base.numel());
  std::vector<Tensor> curved;
  curved.reserve(taus.size());
  for (std::size_t j = 0; j < taus.size(); ++j) curved.push_back(dense_apply(curvature[j], taus[j]));
  return merge_tensor(base, curved, scores, alpha);
}

/// Closed-form dL/dM_j = alpha s_j vec(g) vec(tau_j)^T, g = dL/dE_hat.
inline Tensor curvature_grad_identity(const Tensor& loss_grad, double score, const Tensor& tau,
                                      double alpha) {
  if (loss_grad.shape() != tau.shape()) {
    throw DimensionError("curvature_grad_identity: shape " + shape_str(loss_grad.shape()) +
                         " vs " + shape_str(tau.shape()));
  }
  const std::size_t n = tau.numel();
  require_dense_cap(n);
  Tensor out = Tensor::zeros({n, n});
  auto o = out.mutable_values();
  auto g = loss_grad.values();
  auto t = tau.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < n; ++k) o[i * n + k] = alpha * score * g[i] * t[k];
  return out;
}

struct GradIdentityReport {
  /// Per expert: max |autodiff - formula| / max(1e-300, max |formula|).
  std::vector<double> rel_error;
  double max_rel_error = 0.0;
  bool passed = false;
};

/// Autodiff gradient of dense M_j against the closed form, for every j.
inline GradIdentityReport check_curvature_grad_identity(
    const Tensor& base, const std::vector<Tensor>& taus, const Tensor& scores, double alpha,
    const std::vector<Tensor>& curvature, const std::function<Tensor(const Tensor&)>& loss,
    double tol = 1e-8) {
  std::vector<Tensor> ms;
  for (const auto& m : curvature) ms.push_back(m.clone(true));
  Tensor merged = dense_ca_merge(base, taus, scores, alpha, ms);
  backward(loss(merged));
  const Tensor g = merged.grad_tensor();

  GradIdentityReport r;
  for (std::size_t j = 0; j < ms.size(); ++j) {
    const Tensor expected = curvature_grad_identity(g, scores[j], taus[j], alpha);
    const Tensor got = ms[j].grad_tensor();
    double scale = 0.0, diff = 0.0;
    for (std::size_t k = 0; k < expected.numel(); ++k) {
      scale = std::max(scale, std::abs(expected[k]));
      diff = std::max(diff, std::abs(expected[k] - got[k]));
    }
    r.rel_error.push_back(scale > 0.0 ? diff / scale : diff);
  }
  r.max_rel_error = r.rel_error.empty() ? 0.0 : *std::max_element(r.rel_error.begin(), r.rel_error.end());
  r.passed = r.max_rel_error <= tol;
  return r;
}

/// Merging state at step t and t+1 for the two-step decomposition.
struct TwoStepState {
  Tensor base;
  std::vector<Tensor> taus_t;
  std::vector<Tensor> taus_next;
  Tensor scores_t;
  Tensor scores_next;
  std::vector<Tensor> curvature_t;  // dense M_j^t
  std::function<Tensor(const Tensor&)> loss;
};

struct TwoStepReport {
  Tensor simulated;    // merge with M^{t+1} after one gradient step
  Tensor closed_form;  // curvature-aware merge with M^t minus the correction term
  /// <tau_j^t, dL/dE_hat^t> per expert.
  std::vector<double> matching_weights;
  double max_abs_diff = 0.0;
  double tol = 0.0;
  bool passed = false;
};

/// Takes one plain gradient step M^{t+1} = M^t - lr dL/dM^t, merges with it,
/// and compares against
///   E_m + alpha sum_j s_j^{t+1} M_j^t tau_j^{t+1}
///       - alpha^2 lr sum_j s_j^t s_j^{t+1} <tau_j^t, tau_j^{t+1}> dL/dE_hat^t.
inline TwoStepReport verify_two_step_decomposition(const TwoStepState& state, double lr,
                                                   double alpha,
                                                   OptimizerKind optimizer = OptimizerKind::gradient_descent,
                                                   double tol = 1e-9) {
  if (optimizer != OptimizerKind::gradient_descent) {
    throw ContractError("two-step decomposition assumes plain gradient descent on M");
  }
  const std::size_t experts = state.taus_t.size();
  if (state.taus_next.size() != experts || state.curvature_t.size() != experts) {
    throw ContractError("two-step state: inconsistent expert counts");
  }

  std::vector<Tensor> ms;
  for (const auto& m : state.curvature_t) ms.push_back(m.clone(true));
  Tensor merged_t = dense_ca_merge(state.base, state.taus_t, state.scores_t, alpha, ms);
  backward(state.loss(merged_t));
  const Tensor g = merged_t.grad_tensor();

  TwoStepReport r;
  r.tol = tol;
  std::vector<Tensor> stepped;
  for (auto& m : ms) {
    Tensor next = m.clone();
    auto nv = next.mutable_values();
    auto gm = m.grad_tensor();
    for (std::size_t k = 0; k < nv.size(); ++k) nv[k] -= lr * gm[k];
    stepped.push_back(next);
  }
  {
    NoGradGuard guard;
    r.simulated = dense_ca_merge(state.base, state.taus_next, state.scores_next, alpha, stepped);

    std::vector<Tensor> frozen;
    for (const auto& m : state.curvature_t) frozen.push_back(m.clone());
    Tensor first = dense_ca_merge(state.base, state.taus_next, state.scores_next, alpha, frozen);
    std::vector<double> closed(first.values().begin(), first.values().end());
    for (std::size_t j = 0; j < experts; ++j) {
      double overlap = 0.0, matching = 0.0;
      auto a = state.taus_t[j].values();
      auto b = state.taus_next[j].values();
      for (std::size_t k = 0; k < a.size(); ++k) {
        overlap += a[k] * b[k];
        matching += a[k] * g[k];
      }
      r.matching_weights.push_back(matching);
      const double coeff = alpha * alpha * lr * state.scores_t[j] * state.scores_next[j] * overlap;
      for (std::size_t k = 0; k < closed.size(); ++k) closed[k] -= coeff * g[k];
    }
    r.closed_form = Tensor(first.shape(), std::move(closed));
  }
  for (std::size_t k = 0; k < r.simulated.numel(); ++k) {
    r.max_abs_diff = std::max(r.max_abs_diff, std::abs(r.simulated[k] - r.closed_form[k]));
  }
  r.passed = r.max_abs_diff <= tol;
  return r;
}

}  // namespace camex
