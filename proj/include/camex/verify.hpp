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

// Built-in self-checks behind `camex verify`. Each suite draws its own
// random instances from a fixed seed and reports the worst error it saw.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "camex/curvature/ca_merge.hpp"
#include "camex/curvature/factors.hpp"
#include "camex/curvature/identities.hpp"
#include "camex/io/checkpoint.hpp"
#include "camex/merge/domain_specific.hpp"
#include "camex/merge/domain_vectors.hpp"
#include "camex/merge/reparameterize.hpp"
#include "camex/moe/expert.hpp"
#include "camex/moe/router.hpp"
#include "camex/rng.hpp"
#include "camex/routing/segment.hpp"
#include "camex/tensor/gradcheck.hpp"

namespace camex {

struct SuiteResult {
  std::string name;
  bool passed = false;
  std::size_t checks = 0;
  double worst = 0.0;  // worst error, in the suite's own metric
  double tol = 0.0;
  std::string detail;
};

inline std::vector<std::string> verify_suite_names() {
  return {"gradcheck", "kronecker", "causal", "two_step", "reparam"};
}

namespace detail {

/// Factors drawn around the identity so that M stays well conditioned.
inline CurvatureBank random_curvature(const Expert& shape_of, std::size_t domains, std::size_t rank,
                                      Rng& rng, double spread = 0.3) {
  CurvatureBank bank = CurvatureBank::identity(shape_of, domains, rank);
  for (auto& e : bank.experts)
    for (auto& s : e.slots)
      for (auto& t : s.terms)
        for (Tensor* f : t.factors())
          for (double& v : f->mutable_values()) v += rng.normal(spread);
  return bank;
}

inline ExpertBank random_bank(std::size_t d, std::size_t dff, std::size_t n, Rng& rng) {
  ExpertBank bank{Expert::random(d, dff, rng), {}};
  for (std::size_t i = 1; i < n; ++i) bank.domain.push_back(Expert::random(d, dff, rng));
  return bank;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double max_abs_diff(const Expert& a, const Expert& b) {
  double m = 0.0;
  for (std::size_t s = 0; s < kExpertTensors; ++s) m = std::max(m, max_abs_diff(*a.tensors()[s], *b.tensors()[s]));
  return m;
}

inline bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::equal(a.values().begin(), a.values().end(), b.values().begin());
}

inline std::vector<Tensor> expert_params(const Expert& e) {
  std::vector<Tensor> out;
  for (const Tensor* t : e.tensors()) out.push_back(*t);
  return out;
}

inline std::string fmt_worst(double worst, double tol) {
  std::ostringstream os;
  os << "worst " << worst << " (tol " << tol << ")";
  return os.str();
}

}  // namespace detail

/// Finite differences against backward() for the merged-expert pipeline.
inline SuiteResult verify_gradcheck() {
  SuiteResult r{"gradcheck", true, 0, 0.0, 1e-5, {}};
  Rng rng(derive_seed({0x6c, 1}));
  const std::size_t d = 4, dff = 4, n = 3, L = 8, S = 4;
  ExpertBank bank = detail::random_bank(d, dff, n, rng);
  CurvatureBank curv = detail::random_curvature(bank.base, n - 1, 2, rng);
  Router router{rng.normal_tensor({n - 1, d}, 0.5)};
  const Tensor h = rng.normal_tensor({2 * L, d}, 1.0);
  const Tensor w = rng.normal_tensor({2 * L, d}, 1.0);
  MergeSpec spec;
  spec.ca_enabled = true;
  spec.alpha = 0.9;

  std::vector<Tensor> params;
  for (std::size_t i = 0; i < bank.size(); ++i)
    for (const auto& p : detail::expert_params(bank.at(i))) params.push_back(p);
  for (const auto& p : curv.parameters()) params.push_back(p);

  auto run = [&](RoutingMode mode, std::size_t seg, std::vector<Tensor> ps) {
    const SegmentPlan plan = plan_segments(L, seg);
    auto f = [&] {
      return sum(mul(segment_merged_forward(bank, &curv, router, h, plan, spec, {}, mode), w));
    };
    const GradCheckReport rep = fd_check_params(f, std::move(ps), 1e-6, r.tol);
    r.checks += rep.rel_error.size();
    r.worst = std::max(r.worst, rep.max_rel_error);
    r.passed = r.passed && rep.passed;
  };
  // Under causal routing segment 0 sees W_g through a stop-gradient, so the
  // router is checked in pooled mode where every path is differentiable.
  run(RoutingMode::causal_segments, S, params);
  run(RoutingMode::sequence_pooled, L, {router.W_g});
  r.detail = detail::fmt_worst(r.worst, r.tol);
  return r;
}

/// Factored application against the dense Kronecker product for every
/// factorization with vec length <= 64.
inline SuiteResult verify_kronecker(std::size_t instances = 5) {
  SuiteResult r{"kronecker", true, 0, 0.0, 1e-10, {}};
  Rng rng(derive_seed({0x6b, 2}));
  for (std::size_t o1 = 1; o1 <= 8; ++o1)
    for (std::size_t o2 = 1; o1 * o2 <= 64; ++o2)
      for (std::size_t i1 = 1; o1 * o2 * i1 <= 64; ++i1)
        for (std::size_t i2 = 1; o1 * o2 * i1 * i2 <= 64; ++i2) {
          const DimFactorization dims{o1, o2, i1, i2};
          for (std::size_t k = 0; k < instances; ++k) {
            CurvatureFactors f = CurvatureFactors::identity(dims, 1 + k % 2);
            for (auto& t : f.terms)
              for (Tensor* m : t.factors())
                for (double& v : m->mutable_values()) v = rng.normal(1.0);
            const Tensor tau = rng.normal_tensor({o1 * o2, i1 * i2}, 1.0);
            const double err = detail::max_abs_diff(apply_curvature(f, tau), dense_apply(materialize(f), tau));
            r.worst = std::max(r.worst, err);
            ++r.checks;
          }
        }
  r.passed = r.worst <= r.tol;
  r.detail = std::to_string(r.checks) + " instances, " + detail::fmt_worst(r.worst, r.tol);
  return r;
}

/// Perturbing later segments leaves earlier outputs bit-identical, segment k
/// scores follow segment k-1 only, and segment-0 scores pass no gradient.
inline SuiteResult verify_causal() {
  SuiteResult r{"causal", true, 0, 0.0, 0.0, {}};
  Rng rng(derive_seed({0xca, 3}));
  const std::size_t d = 4, dff = 6, n = 4, L = 16, S = 4, K = L / S;
  ExpertBank bank = detail::random_bank(d, dff, n, rng);
  Router router{rng.normal_tensor({n - 1, d}, 1.0)};
  const SegmentPlan plan = plan_segments(L, S);
  MergeSpec spec;
  const Tensor h = rng.normal_tensor({L, d}, 1.0);
  const Tensor out = segment_merged_forward(bank, nullptr, router, h, plan, spec);
  const Tensor scores = segment_scores(router, h, plan).scores;

  std::vector<std::string> failures;
  for (std::size_t k = 0; k < K; ++k) {
    // Perturb segment k: outputs before k must not move, scores of every
    // segment other than k+1 (and k itself when k = 0) must not move.
    Tensor hp = h.clone();
    for (std::size_t t = k * S; t < (k + 1) * S; ++t)
      for (std::size_t c = 0; c < d; ++c) hp.mutable_values()[t * d + c] += rng.normal(1.0);
    const Tensor outp = segment_merged_forward(bank, nullptr, router, hp, plan, spec);
    const Tensor scoresp = segment_scores(router, hp, plan).scores;
    for (std::size_t row = 0; row < k * S * d; ++row) {
      ++r.checks;
      if (out[row] != outp[row]) {
        failures.push_back("output before segment " + std::to_string(k) + " moved");
        break;
      }
    }
    for (std::size_t j = 0; j < K; ++j) {
      const bool may_move = j == k + 1 || (k == 0 && j == 0);
      bool same = true;
      for (std::size_t c = 0; c < n - 1; ++c) same = same && scores.at(j, c) == scoresp.at(j, c);
      ++r.checks;
      if (!may_move && !same) failures.push_back("scores of segment " + std::to_string(j) + " moved");
    }
  }

  // Loss that reaches W_g only through segment-0 scores.
  Router probe{router.W_g.clone(true)};
  const Tensor first = segment_merged_forward(bank, nullptr, probe, h, plan, spec);
  backward(sum(gather_rows(first, {0, 1, 2, 3})));
  for (double g : probe.W_g.grad()) {
    ++r.checks;
    r.worst = std::max(r.worst, std::abs(g));
  }
  if (r.worst != 0.0) failures.push_back("segment-0 scores passed gradient to W_g");

  r.passed = failures.empty();
  r.detail = failures.empty() ? std::to_string(r.checks) + " checks" : failures.front();
  return r;
}

/// One gradient step on dense M followed by merging, against the closed form.
inline SuiteResult verify_two_step(std::size_t instances = 20) {
  SuiteResult r{"two_step", true, 0, 0.0, 1e-9, {}};
  Rng rng(derive_seed({0xe8, 4}));
  for (std::size_t k = 0; k < instances; ++k) {
    const std::size_t rows = 2 + k % 3, cols = 2 + (k / 3) % 3, n = 2 + k % 3;
    TwoStepState st;
    st.base = rng.normal_tensor({rows, cols}, 1.0);
    for (std::size_t j = 0; j < n; ++j) {
      st.taus_t.push_back(rng.normal_tensor({rows, cols}, 1.0));
      st.taus_next.push_back(rng.normal_tensor({rows, cols}, 1.0));
      Tensor m = Tensor::eye(rows * cols);
      for (double& v : m.mutable_values()) v += rng.normal(0.2);
      st.curvature_t.push_back(m);
    }
    st.scores_t = softmax(rng.normal_tensor({n}, 1.0), 0);
    st.scores_next = softmax(rng.normal_tensor({n}, 1.0), 0);
    const Tensor target = rng.normal_tensor({rows, cols}, 1.0);
    st.loss = [target](const Tensor& e) {
      Tensor diff = sub(e, target);
      return mul_scalar(sum(mul(diff, diff)), 0.5);
    };
    const TwoStepReport rep = verify_two_step_decomposition(st, rng.uniform(0.01, 0.2), rng.uniform(0.5, 1.0));
    r.worst = std::max(r.worst, rep.max_abs_diff);
    ++r.checks;
  }
  r.passed = r.worst <= r.tol;
  r.detail = detail::fmt_worst(r.worst, r.tol);
  return r;
}

/// E'_i = E_m + M_i tau_i merged plainly equals the curvature-aware merge,
/// also after the E'_i pass through the checkpoint codec.
inline SuiteResult verify_reparam(std::size_t instances = 50) {
  SuiteResult r{"reparam", true, 0, 0.0, 1e-12, {}};
  Rng rng(derive_seed({0x4e, 5}));
  for (std::size_t k = 0; k < instances; ++k) {
    const std::size_t n = 2 + k % 4;
    ExpertBank bank = detail::random_bank(3 + k % 3, 4 + k % 2, n, rng);
    const auto taus = domain_vectors(bank).taus;
    const CurvatureBank curv = detail::random_curvature(bank.base, n - 1, 1 + k % 2, rng);
    const Tensor scores = softmax(rng.normal_tensor({n - 1}, 1.0), 0);
    const Expert direct = merge_ca(bank.base, taus, scores, 1.0, curv);

    const auto stored = reparameterize(bank.base, taus, curv);
    CheckpointData ckpt;
    for (std::size_t i = 0; i < stored.size(); ++i)
      for (std::size_t s = 0; s < kExpertTensors; ++s)
        ckpt.tensors.push_back({expert_prefix(0, i) + std::string(kExpertTensorNames[s]), *stored[i].tensors()[s]});
    const CheckpointData loaded = decode_checkpoint(encode_checkpoint(ckpt));
    std::vector<Expert> reloaded;
    for (std::size_t i = 0; i < stored.size(); ++i) {
      reloaded.push_back(map_tensors(bank.base, [&](std::size_t s) {
        return *loaded.find(expert_prefix(0, i) + std::string(kExpertTensorNames[s]));
      }));
    }
    for (const std::vector<Expert>* experts : {&stored, static_cast<const std::vector<Expert>*>(&reloaded)}) {
      const ExpertBank folded{bank.base, *experts};
      const Expert via = merge_domain_specific(bank.base, domain_vectors(folded).taus, scores, 1.0);
      r.worst = std::max(r.worst, detail::max_abs_diff(direct, via));
      ++r.checks;
    }
  }
  r.passed = r.worst <= r.tol;
  r.detail = detail::fmt_worst(r.worst, r.tol);
  return r;
}

inline SuiteResult run_verify_suite(const std::string& name) {
  if (name == "gradcheck") return verify_gradcheck();
  if (name == "kronecker") return verify_kronecker();
  if (name == "causal") return verify_causal();
  if (name == "two_step" || name == "eq8") return verify_two_step();
  if (name == "reparam") return verify_reparam();
  throw ContractError("unknown verify suite '" + name + "'");
}

}  // namespace camex
