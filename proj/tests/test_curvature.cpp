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

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "camex/curvature/ca_merge.hpp"
#include "camex/curvature/factors.hpp"
#include "camex/curvature/identities.hpp"
#include "camex/errors.hpp"
#include "camex/merge/domain_vectors.hpp"
#include "camex/tensor/gradcheck.hpp"
#include "camex/rng.hpp"
#include "test_util.hpp"

namespace camex {
namespace {

using testing::bit_equal;
using testing::Mat;
using testing::max_abs_diff;

CurvatureFactors random_factors(const DimFactorization& dims, std::size_t rank, Rng& rng, double scale = 1.0) {
  CurvatureFactors f{dims, {}};
  for (std::size_t r = 0; r < rank; ++r) {
    f.terms.push_back({rng.normal_tensor({dims.out1, dims.out1}, scale), rng.normal_tensor({dims.out2, dims.out2}, scale),
                       rng.normal_tensor({dims.in1, dims.in1}, scale), rng.normal_tensor({dims.in2, dims.in2}, scale)});
  }
  return f;
}

CurvatureBank random_bank_curvature(const Expert& shape_of, std::size_t n, std::size_t rank, Rng& rng) {
  CurvatureBank b = CurvatureBank::identity(shape_of, n, rank);
  for (auto& p : b.parameters())
    for (double& v : p.mutable_values()) v += rng.normal(0.3);
  return b;
}

using testing::loop_operator;

std::vector<double> values_of(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

// --------------------------------------------------------- factorization

TEST(DimFactorization, NearSquareReconstructsDims) {
  for (std::size_t n = 1; n <= 200; ++n) {
    auto [a, b] = near_square_split(n);
    EXPECT_EQ(a * b, n);
    EXPECT_LE(a, b);
  }
  auto f = DimFactorization::for_shape({12, 32});
  EXPECT_EQ(f.out1, 3u);
  EXPECT_EQ(f.out2, 4u);
  EXPECT_EQ(f.in1, 4u);
  EXPECT_EQ(f.in2, 8u);
  auto v = DimFactorization::for_shape({6});
  EXPECT_EQ(v.d_out(), 6u);
  EXPECT_EQ(v.d_in(), 1u);
  EXPECT_THROW(DimFactorization::for_shape({2, 2, 2}), DimensionError);
}

TEST(CurvatureFactors, IdentityInitialization) {
  auto f = CurvatureFactors::identity(DimFactorization::for_shape({4, 6}), 3);
  ASSERT_EQ(f.rank(), 3u);
  EXPECT_TRUE(bit_equal(f.terms[0].out1, Tensor::eye(2)));
  EXPECT_TRUE(bit_equal(f.terms[0].in2, Tensor::eye(3)));
  for (std::size_t r = 1; r < 3; ++r)
    for (double v : f.terms[r].out1.values()) EXPECT_EQ(v, 0.0);
  Mat m = loop_operator(f);
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m.size(); ++j) EXPECT_EQ(m[i][j], i == j ? 1.0 : 0.0);
}

TEST(CurvatureFactors, ParamCountClosedForm) {
  for (auto shape : std::vector<Shape>{{16, 32}, {32, 16}, {32}, {16}, {64, 128}, {6, 10}}) {
    auto dims = DimFactorization::for_shape(shape);
    for (std::size_t rank = 1; rank <= 4; ++rank) {
      auto f = CurvatureFactors::identity(dims, rank);
      std::size_t counted = 0;
      for (const auto& p : f.parameters()) counted += p.numel();
      const std::size_t formula = rank * (dims.out1 * dims.out1 + dims.out2 * dims.out2 +
                                          dims.in1 * dims.in1 + dims.in2 * dims.in2);
      EXPECT_EQ(counted, formula);
      EXPECT_EQ(f.param_count(), formula);
    }
  }
}

TEST(CurvatureFactors, FactoredSmallerThanDenseForConfiguredSizes) {
  // Expert tensor shapes of the shipped configurations at rank 1.
  for (auto [d, dff] : std::vector<std::pair<std::size_t, std::size_t>>{{16, 32}, {32, 64}, {64, 256}, {8, 16}}) {
    Expert e = Expert::zeros(d, dff);
    auto c = ExpertCurvature::identity(e, 1);
    for (const auto& s : c.slots) EXPECT_LT(s.param_count(), s.dense_param_count());
  }
}

TEST(CurvatureBank, HoldsOneFactorSetPerDomainExpertAndTensor) {
  Expert e = Expert::zeros(4, 6);
  auto bank = CurvatureBank::identity(e, 3, 2);
  EXPECT_EQ(bank.experts.size(), 3u);
  std::size_t sets = 0;
  for (const auto& x : bank.experts) sets += x.slots.size();
  EXPECT_EQ(sets, 3 * kExpertTensors);
  for (const auto& x : bank.experts)
    for (std::size_t s = 0; s < kExpertTensors; ++s)
      EXPECT_TRUE(x.slots[s].dims.matches(e.tensors()[s]->shape()));
}

// ----------------------------------------------------------- application

TEST(ApplyCurvature, IdentityIsExact) {
  Rng rng(1);
  for (auto shape : std::vector<Shape>{{4, 6}, {6, 4}, {5}, {7, 9}}) {
    Tensor tau = rng.normal_tensor(shape, 1.0);
    auto f = CurvatureFactors::identity(DimFactorization::for_shape(shape), 1);
    EXPECT_TRUE(bit_equal(apply_curvature(f, tau), tau));
  }
}

TEST(ApplyCurvature, MatchesLoopKroneckerOracle2x2x2x2) {
  Rng rng(2);
  DimFactorization dims{2, 2, 2, 2};
  for (int trial = 0; trial < 20; ++trial) {
    auto f = random_factors(dims, 1 + trial % 3, rng);
    Tensor tau = rng.normal_tensor({4, 4}, 1.0);
    auto expect = testing::mat_vec(loop_operator(f), values_of(tau));
    EXPECT_LE(max_abs_diff(apply_curvature(f, tau), expect), 1e-10);
  }
}

TEST(ApplyCurvature, MatchesDenseOracleAllSmallShapes) {
  Rng rng(3);
  for (std::size_t r = 1; r <= 8; ++r)
    for (std::size_t c = 1; c <= 8; ++c) {
      if (r * c > kDenseOracleCap) continue;
      Shape shape{r, c};
      auto f = random_factors(DimFactorization::for_shape(shape), 2, rng);
      Tensor tau = rng.normal_tensor(shape, 1.0);
      auto expect = testing::mat_vec(loop_operator(f), values_of(tau));
      EXPECT_LE(max_abs_diff(apply_curvature(f, tau), expect), 1e-10) << shape_str(shape);
      EXPECT_LE(max_abs_diff(dense_apply(materialize(f), tau), expect), 1e-10);
    }
}

TEST(ApplyCurvature, LinearInTau) {
  Rng rng(4);
  auto f = random_factors(DimFactorization::for_shape({6, 8}), 2, rng);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = rng.normal_tensor({6, 8}, 1.0), y = rng.normal_tensor({6, 8}, 1.0);
    const double a = rng.normal(1.0), b = rng.normal(1.0);
    Tensor lhs = apply_curvature(f, add(mul_scalar(x, a), mul_scalar(y, b)));
    Tensor rhs = add(mul_scalar(apply_curvature(f, x), a), mul_scalar(apply_curvature(f, y), b));
    EXPECT_LE(max_abs_diff(lhs, rhs), 1e-12);
  }
}

TEST(ApplyCurvature, MultilinearInEachFactor) {
  Rng rng(5);
  auto dims = DimFactorization::for_shape({6, 8});
  Tensor tau = rng.normal_tensor({6, 8}, 1.0);
  for (std::size_t k = 0; k < 4; ++k) {
    auto f = random_factors(dims, 1, rng);
    const double c = 2.75;
    auto g = f.clone();
    *g.terms[0].factors()[k] = mul_scalar(*f.terms[0].factors()[k], c);
    EXPECT_LE(max_abs_diff(apply_curvature(g, tau), mul_scalar(apply_curvature(f, tau), c)), 1e-12);

    // Superposition in factor k: M(F + G) = M(F) + M(G) with the others fixed.
    auto h1 = f.clone(), h2 = f.clone(), sum_f = f.clone();
    Tensor other = rng.normal_tensor(f.terms[0].factors()[k]->shape(), 1.0);
    *h2.terms[0].factors()[k] = other;
    *sum_f.terms[0].factors()[k] = add(*f.terms[0].factors()[k], other);
    EXPECT_LE(max_abs_diff(apply_curvature(sum_f, tau), add(apply_curvature(h1, tau), apply_curvature(h2, tau))),
              1e-12);
  }
}

TEST(ApplyCurvature, RankTermsAdd) {
  Rng rng(6);
  auto dims = DimFactorization::for_shape({4, 6});
  auto f = random_factors(dims, 3, rng);
  Tensor tau = rng.normal_tensor({4, 6}, 1.0);
  Tensor total = Tensor::zeros({4, 6});
  for (const auto& t : f.terms) total = add(total, apply_curvature(CurvatureFactors{dims, {t}}, tau));
  EXPECT_LE(max_abs_diff(apply_curvature(f, tau), total), 1e-12);
}

TEST(ApplyCurvature, FactorizationMismatch) {
  auto f = CurvatureFactors::identity(DimFactorization::for_shape({4, 6}), 1);
  EXPECT_THROW(apply_curvature(f, Tensor::zeros({6, 4})), DimensionError);
  EXPECT_THROW(apply_curvature(CurvatureFactors{f.dims, {}}, Tensor::zeros({4, 6})), ContractError);
}

TEST(ApplyCurvature, GradientsPassFiniteDifferences) {
  Rng rng(7);
  auto f = random_factors(DimFactorization::for_shape({4, 6}), 2, rng);
  Tensor tau = rng.normal_tensor({4, 6}, 1.0);
  Tensor w = rng.normal_tensor({4, 6}, 1.0);
  std::vector<Tensor> params = f.parameters();
  params.push_back(tau);
  auto report = fd_check_params([&] { return sum(mul(w, tanh(apply_curvature(f, tau)))); }, params, 1e-5, 1e-5);
  EXPECT_TRUE(report.passed) << report.max_rel_error;
}

// ------------------------------------------------------------------ merges

TEST(MergeCa, IdentityCurvatureEqualsDomainSpecific) {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    auto bank = testing::random_bank(4, 6, 4, rng);
    const auto taus = domain_vectors(bank).taus;
    Tensor s = softmax(rng.normal_tensor({3}, 1.0), 0);
    Expert a = merge_ca(bank.base, taus, s, 0.7, CurvatureBank::identity(bank.base, 3, 2));
    Expert b = merge_domain_specific(bank.base, taus, s, 0.7);
    EXPECT_LE(max_abs_diff(a, b), 1e-14);
  }
}

TEST(MergeCa, AlphaZeroIsBase) {
  Rng rng(9);
  auto bank = testing::random_bank(4, 6, 3, rng);
  Expert m = merge_ca(bank.base, domain_vectors(bank).taus, Tensor::vector({0.3, 0.7}), 0.0,
                      random_bank_curvature(bank.base, 2, 2, rng));
  EXPECT_TRUE(bit_equal(m, bank.base));
}

TEST(MergeCa, MatchesDenseOracle) {
  Rng rng(10);
  for (int trial = 0; trial < 10; ++trial) {
    auto bank = testing::random_bank(4, 6, 4, rng);
    const auto taus = domain_vectors(bank).taus;
    auto curv = random_bank_curvature(bank.base, 3, 2, rng);
    Tensor s = softmax(rng.normal_tensor({3}, 1.0), 0);
    const double alpha = 0.9;
    Expert m = merge_ca(bank.base, taus, s, alpha, curv);
    for (std::size_t slot = 0; slot < kExpertTensors; ++slot) {
      const Tensor& base = *bank.base.tensors()[slot];
      if (base.numel() > kDenseOracleCap) continue;
      std::vector<double> ref = values_of(base);
      for (std::size_t i = 0; i < 3; ++i) {
        auto curved = testing::mat_vec(loop_operator(curv.experts[i].slots[slot]), values_of(*taus[i].tensors()[slot]));
        for (std::size_t k = 0; k < ref.size(); ++k) ref[k] += alpha * s[i] * curved[k];
      }
      EXPECT_LE(max_abs_diff(*m.tensors()[slot], ref), 1e-10);
      std::vector<Tensor> dense_m, t;
      for (std::size_t i = 0; i < 3; ++i) {
        dense_m.push_back(materialize(curv.experts[i].slots[slot]));
        t.push_back(*taus[i].tensors()[slot]);
      }
      EXPECT_LE(max_abs_diff(dense_ca_merge(base, t, s, alpha, dense_m), ref), 1e-10);
    }
  }
}

TEST(MergeCa, CountMismatch) {
  Rng rng(11);
  auto bank = testing::random_bank(4, 6, 3, rng);
  const auto taus = domain_vectors(bank).taus;
  EXPECT_THROW(merge_ca(bank.base, taus, Tensor::vector({1.0}), 1.0, CurvatureBank::identity(bank.base, 2, 1)),
               ContractError);
  EXPECT_THROW(merge_ca(bank.base, taus, Tensor::vector({0.5, 0.5}), 1.0, CurvatureBank::identity(bank.base, 3, 1)),
               ContractError);
}

TEST(MergeCa, FactorGradientsThroughFfnAndLoss) {
  Rng rng(12);
  auto bank = testing::random_bank(4, 6, 3, rng);
  const auto taus = domain_vectors(bank).taus;
  auto curv = random_bank_curvature(bank.base, 2, 2, rng);
  Tensor s = Tensor::vector({0.4, 0.6});
  Tensor h = rng.normal_tensor({3, 4}, 1.0);
  Tensor target = rng.normal_tensor({3, 4}, 1.0);
  auto report = fd_check_params(
      [&] {
        Tensor y = expert_forward(merge_ca(bank.base, taus, s, 0.8, curv), h);
        Tensor d = sub(y, target);
        return mean(mul(d, d));
      },
      curv.parameters(), 1e-5, 1e-5);
  EXPECT_TRUE(report.passed) << report.max_rel_error;
}

TEST(MergeDynamic, ZeroVectorsKeepBase) {
  Rng rng(13);
  Expert base = Expert::random(4, 6, rng);
  std::vector<Expert> zero{Expert::zeros(4, 6), Expert::zeros(4, 6)};
  auto next = testing::random_bank(4, 6, 3, rng);
  auto r = merge_dynamic(base, zero, domain_vectors(next).taus, Tensor::vector({0.5, 0.5}), 1.0,
                         random_bank_curvature(base, 2, 1, rng), random_bank_curvature(base, 2, 1, rng));
  EXPECT_TRUE(bit_equal(r.next_base, base));
}

TEST(MergeDynamic, OpposingVectorsCancel) {
  Rng rng(14);
  Expert base = Expert::random(4, 6, rng);
  Expert x = Expert::random(4, 6, rng);
  Expert minus_x = map_tensors(x, [&](std::size_t s) { return neg(*x.tensors()[s]); });
  auto id = CurvatureBank::identity(base, 2, 1);
  auto r = merge_dynamic(base, {x, minus_x}, {x, minus_x}, Tensor::vector({0.5, 0.5}), 1.0, id, id);
  EXPECT_TRUE(bit_equal(r.next_base, base));
}

TEST(MergeDynamic, TwoStepMatchesLoopOracle) {
  Rng rng(15);
  Expert base = Expert::random(3, 4, rng);
  auto l0 = testing::random_bank(3, 4, 4, rng), l1 = testing::random_bank(3, 4, 4, rng);
  const auto t0 = domain_vectors(l0).taus, t1 = domain_vectors(l1).taus;
  auto c0 = random_bank_curvature(base, 3, 1, rng), c1 = random_bank_curvature(base, 3, 1, rng);
  Tensor s = Tensor::vector({0.2, 0.3, 0.5});
  const double alpha = 0.6;
  auto r = merge_dynamic(base, t0, t1, s, alpha, c0, c1);
  for (std::size_t slot = 0; slot < kExpertTensors; ++slot) {
    std::vector<double> nb = values_of(*base.tensors()[slot]);
    for (std::size_t i = 0; i < 3; ++i) {
      auto curved = testing::mat_vec(loop_operator(c0.experts[i].slots[slot]), values_of(*t0[i].tensors()[slot]));
      for (std::size_t k = 0; k < nb.size(); ++k) nb[k] += alpha / 3.0 * curved[k];
    }
    EXPECT_LE(max_abs_diff(*r.next_base.tensors()[slot], nb), 1e-12);
    std::vector<double> merged = nb;
    for (std::size_t i = 0; i < 3; ++i) {
      auto curved = testing::mat_vec(loop_operator(c1.experts[i].slots[slot]), values_of(*t1[i].tensors()[slot]));
      for (std::size_t k = 0; k < merged.size(); ++k) merged[k] += alpha * s[i] * curved[k];
    }
    EXPECT_LE(max_abs_diff(*r.merged.tensors()[slot], merged), 1e-12);
  }
}

TEST(MergeDynamic, NeedsTwoExperts) {
  Expert base = Expert::zeros(2, 2);
  CurvatureBank empty;
  EXPECT_THROW(merge_dynamic(base, {}, {}, Tensor::vector({}), 1.0, empty, empty), ContractError);
  EXPECT_THROW(propagate_base(base, {}, 1.0), ContractError);
}

// ------------------------------------------------------- gradient identity

struct DenseInstance {
  Tensor base;
  std::vector<Tensor> taus;
  std::vector<Tensor> ms;
  Tensor scores;
};

DenseInstance dense_instance(Rng& rng, std::size_t n_experts, Shape shape = {4, 4}) {
  DenseInstance d;
  d.base = rng.normal_tensor(shape, 1.0);
  const std::size_t n = shape_numel(shape);
  std::vector<double> raw;
  for (std::size_t j = 0; j < n_experts; ++j) {
    d.taus.push_back(rng.normal_tensor(shape, 1.0));
    d.ms.push_back(add(Tensor::eye(n), rng.normal_tensor({n, n}, 0.2)));
  }
  d.scores = softmax(rng.normal_tensor({n_experts}, 1.0), 0);
  return d;
}

std::function<Tensor(const Tensor&)> smooth_loss(const Tensor& w) {
  return [w](const Tensor& e) { return sum(mul(w, tanh(e))); };
}

TEST(CurvatureGradIdentity, ZeroLossGradientGivesZero) {
  Rng rng(16);
  Tensor tau = rng.normal_tensor({4, 4}, 1.0);
  const Tensor grad = curvature_grad_identity(Tensor::zeros({4, 4}), 0.7, tau, 1.0);
  for (double v : grad.values()) EXPECT_EQ(v, 0.0);
}

TEST(CurvatureGradIdentity, UnselectedExpertGetsZero) {
  Rng rng(17);
  auto d = dense_instance(rng, 2);
  d.scores = Tensor::vector({1.0, 0.0});
  auto expected = curvature_grad_identity(rng.normal_tensor({4, 4}, 1.0), 0.0, d.taus[1], 1.0);
  for (double v : expected.values()) EXPECT_EQ(v, 0.0);
  std::vector<Tensor> ms;
  for (const auto& m : d.ms) ms.push_back(m.clone(true));
  Tensor w = rng.normal_tensor({4, 4}, 1.0);
  backward(smooth_loss(w)(dense_ca_merge(d.base, d.taus, d.scores, 1.0, ms)));
  const Tensor unselected = ms[1].grad_tensor();
  for (double v : unselected.values()) EXPECT_EQ(v, 0.0);
}

TEST(CurvatureGradIdentity, AutodiffMatchesOuterProduct) {
  Rng rng(18);
  for (int trial = 0; trial < 20; ++trial) {
    auto d = dense_instance(rng, 3);
    Tensor w = rng.normal_tensor({4, 4}, 1.0);
    auto r = check_curvature_grad_identity(d.base, d.taus, d.scores, 0.8, d.ms, smooth_loss(w));
    EXPECT_LE(r.max_rel_error, 1e-8);
    EXPECT_TRUE(r.passed);
  }
}

TEST(CurvatureGradIdentity, OuterProductAgainstLoopOracle) {
  Rng rng(19);
  Tensor g = rng.normal_tensor({2, 3}, 1.0), tau = rng.normal_tensor({2, 3}, 1.0);
  Tensor out = curvature_grad_identity(g, 0.25, tau, 0.5);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t k = 0; k < 6; ++k) EXPECT_DOUBLE_EQ(out.at(i, k), 0.5 * 0.25 * g[i] * tau[k]);
}

TEST(CurvatureGradIdentity, RefusesAboveOracleCap) {
  Tensor big = Tensor::zeros({5, 13});
  EXPECT_THROW(curvature_grad_identity(big, 1.0, big, 1.0), ContractError);
  Tensor ok = Tensor::zeros({8, 8});
  EXPECT_NO_THROW(curvature_grad_identity(ok, 1.0, ok, 1.0));
}

// ------------------------------------------------- two-step decomposition

TwoStepState two_step_state(Rng& rng, std::size_t n_experts) {
  auto d = dense_instance(rng, n_experts);
  TwoStepState st;
  st.base = d.base;
  st.taus_t = d.taus;
  for (std::size_t j = 0; j < n_experts; ++j) st.taus_next.push_back(rng.normal_tensor({4, 4}, 1.0));
  st.scores_t = d.scores;
  st.scores_next = softmax(rng.normal_tensor({n_experts}, 1.0), 0);
  st.curvature_t = d.ms;
  st.loss = smooth_loss(rng.normal_tensor({4, 4}, 1.0));
  return st;
}

TEST(TwoStep, ZeroStepIsPlainCaMerge) {
  Rng rng(20);
  auto st = two_step_state(rng, 3);
  auto r = verify_two_step_decomposition(st, 0.0, 0.9);
  Tensor plain = dense_ca_merge(st.base, st.taus_next, st.scores_next, 0.9, st.curvature_t);
  EXPECT_TRUE(bit_equal(r.simulated, plain));
  EXPECT_TRUE(bit_equal(r.closed_form, plain));
}

TEST(TwoStep, OrthogonalVectorsHaveNoCorrection) {
  Rng rng(21);
  auto st = two_step_state(rng, 1);
  Tensor a = Tensor::zeros({4, 4}), b = Tensor::zeros({4, 4});
  a.mutable_values()[0] = 1.5;
  b.mutable_values()[5] = -2.0;
  st.taus_t = {a};
  st.taus_next = {b};
  auto r = verify_two_step_decomposition(st, 0.3, 1.0);
  Tensor plain = dense_ca_merge(st.base, st.taus_next, st.scores_next, 1.0, st.curvature_t);
  EXPECT_LE(max_abs_diff(r.closed_form, plain), 1e-15);
  EXPECT_LE(r.max_abs_diff, 1e-9);
}

TEST(TwoStep, RandomInstancesMatch) {
  Rng rng(22);
  for (int trial = 0; trial < 20; ++trial) {
    auto st = two_step_state(rng, 3);
    auto r = verify_two_step_decomposition(st, 0.05, 0.8);
    EXPECT_TRUE(r.passed) << r.max_abs_diff;
    EXPECT_LE(r.max_abs_diff, 1e-9);
    ASSERT_EQ(r.matching_weights.size(), 3u);
  }
}

TEST(TwoStep, MatchingWeightsAreInnerProducts) {
  Rng rng(23);
  auto st = two_step_state(rng, 2);
  auto r = verify_two_step_decomposition(st, 0.1, 1.0);
  // Independent gradient of the loss w.r.t. the merged expert.
  Tensor merged = dense_ca_merge(st.base, st.taus_t, st.scores_t, 1.0, st.curvature_t).clone(true);
  backward(st.loss(merged));
  for (std::size_t j = 0; j < 2; ++j) {
    double ref = 0.0;
    for (std::size_t k = 0; k < 16; ++k) ref += st.taus_t[j][k] * merged.grad()[k];
    EXPECT_NEAR(r.matching_weights[j], ref, 1e-12);
  }
}

TEST(TwoStep, RejectsAdaptiveOptimizer) {
  Rng rng(24);
  auto st = two_step_state(rng, 2);
  EXPECT_THROW(verify_two_step_decomposition(st, 0.1, 1.0, OptimizerKind::adamw), ContractError);
}

}  // namespace
}  // namespace camex
