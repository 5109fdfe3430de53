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

#include "camex/errors.hpp"
#include "camex/harness/config.hpp"
#include "camex/harness/fisher_estimate.hpp"
#include "camex/harness/model.hpp"
#include "camex/harness/optimizer.hpp"
#include "camex/harness/sweep.hpp"
#include "camex/harness/synthetic_task.hpp"
#include "camex/harness/train.hpp"
#include "camex/tensor/gradcheck.hpp"
#include "test_util.hpp"

namespace camex {
namespace {

using testing::bit_equal;
using testing::Mat;

TrainConfig tiny_config() {
  TrainConfig c;
  c.vocab = 6;
  c.seq_len = 8;
  c.segment_length = 4;
  c.regimes = 2;
  c.experts = 3;
  c.layers = 2;
  c.d_model = 4;
  c.d_ff = 6;
  c.train_sequences = 8;
  c.eval_sequences = 4;
  c.batch_size = 4;
  c.epochs = 1;
  c.warmup_steps = 1;
  c.merge.ca_enabled = true;
  return c;
}

void perturb_curvature(Model& m, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& layer : m.layers)
    for (auto& p : layer.curvature.parameters())
      for (double& v : p.mutable_values()) v += rng.normal(0.2);
}

std::vector<double> flat_values(const std::vector<Tensor>& ts) {
  std::vector<double> v;
  for (const auto& t : ts) v.insert(v.end(), t.values().begin(), t.values().end());
  return v;
}

Expert expert_from_vectors(const Expert& shape_of, const std::vector<std::vector<double>>& slots) {
  Expert e = shape_of.clone();
  for (std::size_t s = 0; s < kExpertTensors; ++s) {
    auto v = e.tensors()[s]->mutable_values();
    std::copy(slots[s].begin(), slots[s].end(), v.begin());
  }
  return e;
}

/// Log-probabilities [L][V] of one input sequence, by plain loops over the
/// merging and dynamic architectures (domain-specific protocol).
Mat loop_log_probs(const Model& m, const std::vector<std::size_t>& tokens) {
  const auto& cfg = m.config;
  const std::size_t L = tokens.size(), d = cfg.d_model, S = cfg.segment_length, V = cfg.vocab;
  const double alpha = cfg.merge.alpha;
  Mat h(L, std::vector<double>(d));
  for (std::size_t t = 0; t < L; ++t)
    for (std::size_t j = 0; j < d; ++j) h[t][j] = m.embedding[tokens[t] * d + j];

  std::vector<std::vector<double>> global;
  if (m.global_base)
    for (const Tensor* t : m.global_base->tensors()) global.emplace_back(t->values().begin(), t->values().end());

  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const auto& layer = m.layers[l];
    const bool dynamic = cfg.architecture == Architecture::dynamic;
    const Expert& shape_of = layer.experts.front();
    std::vector<std::vector<double>> base(kExpertTensors);
    if (dynamic) {
      base = global;
    } else {
      for (std::size_t s = 0; s < kExpertTensors; ++s)
        base[s].assign(shape_of.tensors()[s]->values().begin(), shape_of.tensors()[s]->values().end());
    }
    const std::size_t first = dynamic ? 0 : 1;
    const std::size_t n = layer.experts.size() - first;
    // taus[i][slot]
    std::vector<std::vector<std::vector<double>>> taus(n, std::vector<std::vector<double>>(kExpertTensors));
    const CurvatureBank& bank = cfg.share_curvature ? m.layers.front().curvature : layer.curvature;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t s = 0; s < kExpertTensors; ++s) {
        const Tensor& e = *layer.experts[first + i].tensors()[s];
        std::vector<double> tau(e.numel());
        for (std::size_t q = 0; q < tau.size(); ++q) tau[q] = e[q] - base[s][q];
        if (cfg.curvature_enabled()) tau = testing::mat_vec(testing::loop_operator(bank.experts[i].slots[s]), tau);
        taus[i][s] = tau;
      }

    Mat out(L, std::vector<double>(d));
    for (std::size_t k = 0; k < L / S; ++k) {
      const std::size_t src = k == 0 ? 0 : k - 1;
      std::vector<double> mean(d, 0.0);
      for (std::size_t t = 0; t < S; ++t)
        for (std::size_t j = 0; j < d; ++j) mean[j] += h[src * S + t][j] / S;
      std::vector<double> logits(n, 0.0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) logits[i] += layer.router.W_g.at(i, j) * mean[j];
      const auto score = testing::loop_softmax(logits);
      auto merged = base;
      for (std::size_t s = 0; s < kExpertTensors; ++s)
        for (std::size_t q = 0; q < merged[s].size(); ++q) {
          double acc = 0.0;
          for (std::size_t i = 0; i < n; ++i) acc += score[i] * taus[i][s][q];
          merged[s][q] += alpha * acc;
        }
      std::vector<double> rows;
      for (std::size_t t = 0; t < S; ++t) rows.insert(rows.end(), h[k * S + t].begin(), h[k * S + t].end());
      Mat y = testing::loop_ffn(expert_from_vectors(shape_of, merged), Tensor({S, d}, rows));
      for (std::size_t t = 0; t < S; ++t) out[k * S + t] = y[t];
    }
    for (std::size_t t = 0; t < L; ++t)
      for (std::size_t j = 0; j < d; ++j) h[t][j] += out[t][j];
    if (dynamic) {
      for (std::size_t s = 0; s < kExpertTensors; ++s)
        for (std::size_t q = 0; q < global[s].size(); ++q) {
          double acc = 0.0;
          for (std::size_t i = 0; i < n; ++i) acc += taus[i][s][q];
          global[s][q] += alpha / static_cast<double>(n) * acc;
        }
    }
  }

  Mat logp(L, std::vector<double>(V));
  for (std::size_t t = 0; t < L; ++t) {
    std::vector<double> z(V, 0.0);
    for (std::size_t v = 0; v < V; ++v)
      for (std::size_t j = 0; j < d; ++j) z[v] += h[t][j] * m.embedding[v * d + j];
    const double mx = *std::max_element(z.begin(), z.end());
    double lse = 0.0;
    for (double x : z) lse += std::exp(x - mx);
    lse = mx + std::log(lse);
    for (std::size_t v = 0; v < V; ++v) logp[t][v] = z[v] - lse;
  }
  return logp;
}

/// Mean target NLL of the given sequences by the loop oracle.
double loop_mean_nll(const Model& m, const Dataset& ds, const std::vector<std::size_t>& idx) {
  double nll = 0.0;
  std::size_t count = 0;
  for (std::size_t i : idx) {
    const auto& tok = ds.sequences[i].tokens;
    std::vector<std::size_t> inputs(tok.begin(), tok.end() - 1);
    Mat lp = loop_log_probs(m, inputs);
    for (std::size_t t = 0; t < inputs.size(); ++t) nll -= lp[t][tok[t + 1]];
    count += inputs.size();
  }
  return nll / static_cast<double>(count);
}

std::vector<std::size_t> all_indices(const Dataset& ds) {
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

// -------------------------------------------------------------- synthetic data

SyntheticTask single_regime(std::size_t V, TransitionMatrix t, std::size_t L = 8) {
  SyntheticTask task{TaskKind::markov_lm, V, L, 4, 0.0, {std::move(t)}, 3};
  task.validate();
  return task;
}

TEST(SyntheticTask, DeterministicChainIsFixedCycle) {
  const std::size_t V = 5;
  TransitionMatrix t(V, std::vector<double>(V, 0.0));
  for (std::size_t i = 0; i < V; ++i) t[i][(i + 1) % V] = 1.0;
  auto task = single_regime(V, t);
  auto ds = gen_task(task, 10);
  for (const auto& s : ds.sequences)
    for (std::size_t k = 1; k < s.tokens.size(); ++k) EXPECT_EQ(s.tokens[k], (s.tokens[k - 1] + 1) % V);
  EXPECT_EQ(oracle_perplexity(task, ds), 1.0);
}

TEST(SyntheticTask, UniformChainHasPerplexityV) {
  const std::size_t V = 7;
  auto task = single_regime(V, TransitionMatrix(V, std::vector<double>(V, 1.0 / V)));
  EXPECT_NEAR(oracle_perplexity(task, gen_task(task, 20)), 7.0, 1e-9);
}

TEST(SyntheticTask, SeedSevenRegeneratesIdentically) {
  auto task = SyntheticTask::random(TaskKind::markov_lm, 8, 2, 16, 4, 0.5, 0.3, 7);
  auto again = SyntheticTask::random(TaskKind::markov_lm, 8, 2, 16, 4, 0.5, 0.3, 7);
  EXPECT_EQ(task.transitions, again.transitions);
  auto a = gen_task(task, 16), b = gen_task(again, 16);
  EXPECT_EQ(a.sequences, b.sequences);
  EXPECT_NE(gen_task(task, 16, 1).sequences, a.sequences);
}

TEST(SyntheticTask, RowsAreStochastic) {
  auto task = SyntheticTask::random(TaskKind::markov_lm, 12, 3, 16, 4, 0.5, 0.1, 11);
  for (const auto& m : task.transitions)
    for (const auto& row : m) {
      double total = 0.0;
      for (double p : row) {
        EXPECT_GE(p, 0.0);
        total += p;
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
}

TEST(SyntheticTask, RejectsInvalidRows) {
  TransitionMatrix bad(3, std::vector<double>(3, 0.3));
  EXPECT_THROW(single_regime(3, bad), ContractError);
  TransitionMatrix negative{{1.5, -0.5, 0}, {0, 1, 0}, {0, 0, 1}};
  EXPECT_THROW(single_regime(3, negative), ContractError);
  TransitionMatrix ragged{{1, 0}, {0, 1}, {0, 1}};
  EXPECT_THROW(single_regime(3, ragged), ContractError);
}

TEST(SyntheticTask, RegimesSwitchOnlyAtSegmentBoundaries) {
  auto task = SyntheticTask::random(TaskKind::markov_lm, 6, 3, 16, 4, 0.9, 0.3, 5);
  auto ds = gen_task(task, 30);
  bool switched = false;
  for (const auto& s : ds.sequences)
    for (std::size_t t = 2; t < s.tokens.size(); ++t) {
      if (s.regimes[t] != s.regimes[t - 1]) {
        switched = true;
        EXPECT_EQ((t - 1) % 4, 0u) << "target position " << t;
      }
    }
  EXPECT_TRUE(switched);
}

// ------------------------------------------------------------- parameters

TEST(CountParams, DynamicDropsOneExpertPerExtraLayer) {
  for (std::size_t L : {1u, 2u, 3u, 4u})
    for (std::size_t N : {2u, 3u, 4u, 8u}) {
      TrainConfig c = tiny_config();
      c.layers = L;
      c.experts = N;
      c.architecture = Architecture::merging;
      auto full = count_params(build_model(c));
      c.architecture = Architecture::dynamic;
      auto dyn = count_params(build_model(c));
      const std::size_t epc = expert_param_count(c.d_model, c.d_ff);
      EXPECT_EQ(full.experts, L * N * epc);
      EXPECT_EQ(dyn.experts, (1 + L * (N - 1)) * epc);
      EXPECT_EQ(full.experts - dyn.experts, (L - 1) * epc);
      EXPECT_EQ(full.router, dyn.router);
      EXPECT_EQ(full.curvature, dyn.curvature);
    }
}

TEST(CountParams, ThreeLayersFourExperts) {
  TrainConfig c = tiny_config();
  c.layers = 3;
  c.experts = 4;
  const std::size_t epc = expert_param_count(c.d_model, c.d_ff);
  EXPECT_EQ(count_params(build_model(c)).experts, 12 * epc);
  c.architecture = Architecture::dynamic;
  EXPECT_EQ(count_params(build_model(c)).experts, 10 * epc);
}

TEST(CountParams, ExactSumOfTensorSizes) {
  for (auto arch : {Architecture::vanilla, Architecture::merging, Architecture::dynamic}) {
    TrainConfig c = tiny_config();
    c.architecture = arch;
    Model m = build_model(c);
    std::size_t total = 0;
    for (const auto& p : m.parameters()) total += p.numel();
    EXPECT_EQ(count_params(m).total(), total);
    EXPECT_EQ(count_params(m).backbone, c.vocab * c.d_model);
  }
}

TEST(CountParams, VanillaAndMergingShareExpertCounts) {
  TrainConfig c = tiny_config();
  c.architecture = Architecture::vanilla;
  auto vanilla = count_params(build_model(c));
  c.architecture = Architecture::merging;
  c.merge.ca_enabled = false;
  auto merging = count_params(build_model(c));
  EXPECT_EQ(vanilla.backbone, merging.backbone);
  EXPECT_EQ(vanilla.experts, merging.experts);
  // The vanilla router scores all N experts, the merging router the N-1 domain experts.
  EXPECT_EQ(vanilla.router - merging.router, c.layers * c.d_model);
}

std::size_t square_factor_sum(std::size_t rows, std::size_t cols) {
  auto split = [](std::size_t n) {
    std::size_t a = 1;
    for (std::size_t k = 1; k * k <= n; ++k)
      if (n % k == 0) a = k;
    return std::pair{a, n / a};
  };
  auto [o1, o2] = split(rows);
  auto [i1, i2] = split(cols);
  return o1 * o1 + o2 * o2 + i1 * i1 + i2 * i2;
}

TEST(CountParams, CurvatureShareFormula) {
  for (std::size_t R : {1u, 2u, 3u})
    for (bool share : {false, true}) {
      TrainConfig c = tiny_config();
      c.d_model = 6;
      c.d_ff = 12;
      c.experts = 4;
      c.layers = 3;
      c.kronecker_rank = R;
      c.share_curvature = share;
      const std::size_t per_expert = square_factor_sum(12, 6) + square_factor_sum(12, 1) +
                                     square_factor_sum(6, 12) + square_factor_sum(6, 1);
      const std::size_t layers = share ? 1 : c.layers;
      EXPECT_EQ(count_params(build_model(c)).curvature, R * per_expert * (c.experts - 1) * layers);
    }
}

TEST(CountParams, RankZeroHasNoCurvature) {
  TrainConfig c = tiny_config();
  c.kronecker_rank = 0;
  EXPECT_EQ(count_params(build_model(c)).curvature, 0u);
  c.kronecker_rank = 1;
  c.merge.ca_enabled = false;
  EXPECT_EQ(count_params(build_model(c)).curvature, 0u);
}

TEST(CountParams, DoublingDomainExpertsDoublesTheirShare) {
  TrainConfig c = tiny_config();
  const std::size_t epc = expert_param_count(c.d_model, c.d_ff);
  c.experts = 3;
  auto two = count_params(build_model(c));
  c.experts = 5;
  auto four = count_params(build_model(c));
  const std::size_t base_share = c.layers * epc;
  EXPECT_EQ(four.experts - base_share, 2 * (two.experts - base_share));
  EXPECT_EQ(four.curvature, 2 * two.curvature);
}

TEST(BuildModel, TwoExpertsIsValid) {
  TrainConfig c = tiny_config();
  c.experts = 2;
  c.max_steps = 2;
  auto r = run_training(c);
  EXPECT_EQ(r.model.layers[0].router.num_scores(), 1u);
  EXPECT_TRUE(std::isfinite(r.log.final_metric()));
}

TEST(BuildModel, RejectsInvalidDims) {
  TrainConfig c = tiny_config();
  c.d_model = 0;
  EXPECT_THROW(build_model(c), ContractError);
  c = tiny_config();
  c.segment_length = 3;
  EXPECT_THROW(build_model(c), ContractError);
  c = tiny_config();
  c.experts = 1;
  EXPECT_THROW(build_model(c), ContractError);
}

// ------------------------------------------------------------------ forward

TEST(Forward, MatchesLoopOracleForMergingAndDynamic) {
  for (auto arch : {Architecture::merging, Architecture::dynamic})
    for (bool ca : {false, true})
      for (bool share : {false, true}) {
        TrainConfig c = tiny_config();
        c.architecture = arch;
        c.merge.ca_enabled = ca;
        c.merge.alpha = 0.8;
        c.share_curvature = share;
        Model m = build_model(c);
        perturb_curvature(m, 3);
        auto [train_set, eval_set] = make_datasets(c);
        const auto idx = all_indices(eval_set);
        NoGradGuard guard;
        const double lib = batch_loss(m, make_batch(eval_set, idx)).item();
        EXPECT_NEAR(lib, loop_mean_nll(m, eval_set, idx), 1e-12)
            << to_string(arch) << " ca=" << ca << " share=" << share;
      }
}

TEST(Evaluate, MatchesLoopNllOracle) {
  TrainConfig c = tiny_config();
  c.batch_size = 3;  // exercises a ragged final batch
  Model m = build_model(c);
  perturb_curvature(m, 4);
  auto [train_set, eval_set] = make_datasets(c);
  const double ppl = evaluate(m, eval_set);
  EXPECT_NEAR(std::log(ppl), loop_mean_nll(m, eval_set, all_indices(eval_set)), 1e-12);
}

TEST(Evaluate, UniformOutputGivesPerplexityV) {
  TrainConfig c = tiny_config();
  Model m = build_model(c);
  for (double& v : m.embedding.mutable_values()) v = 0.0;
  auto [train_set, eval_set] = make_datasets(c);
  EXPECT_NEAR(evaluate(m, eval_set), static_cast<double>(c.vocab), 1e-9);
}

TEST(Evaluate, PerfectModelOnDeterministicChain) {
  const std::size_t V = 8;
  TransitionMatrix t(V, std::vector<double>(V, 0.0));
  for (std::size_t i = 0; i < V; ++i) t[i][(i + 1) % V] = 1.0;
  auto task = single_regime(V, t);

  TrainConfig c = tiny_config();
  c.vocab = V;
  c.d_model = V;
  c.d_ff = V;
  c.layers = 1;
  c.activation = Activation::identity;
  c.merge.ca_enabled = false;
  Model m = build_model(c);
  // Every expert maps h to 40 P h - h with P the cyclic shift, so the block
  // output is 40 P h and the tied head puts all mass on the next token.
  Expert shift = Expert::zeros(V, V, Activation::identity);
  for (std::size_t i = 0; i < V; ++i) {
    shift.W1.mutable_values()[i * V + i] = 1.0;
    shift.W2.mutable_values()[((i + 1) % V) * V + i] = 40.0;
    shift.W2.mutable_values()[i * V + i] -= 1.0;
  }
  for (auto& e : m.layers[0].experts) e = shift.clone();
  m.embedding = Tensor::eye(V);
  EXPECT_NEAR(evaluate(m, gen_task(task, 6)), 1.0, 1e-9);
}

TEST(Evaluate, EmptyDataset) {
  Model m = build_model(tiny_config());
  EXPECT_THROW(evaluate(m, Dataset{}), ContractError);
}

TEST(Evaluate, ClassificationAccuracyMatchesArgmaxCount) {
  TrainConfig c = tiny_config();
  c.task = TaskKind::classification;
  c.routing = RoutingMode::sequence_pooled;
  c.segment_length = c.seq_len;
  Model m = build_model(c);
  auto [train_set, eval_set] = make_datasets(c);
  NoGradGuard guard;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < eval_set.size(); ++i) {
    Tensor logits = batch_logits(m, make_batch(eval_set, {i}));
    std::size_t best = 0;
    for (std::size_t k = 1; k < logits.dim(1); ++k)
      if (logits[k] > logits[best]) best = k;
    correct += best == eval_set.sequences[i].label;
  }
  EXPECT_DOUBLE_EQ(evaluate(m, eval_set), static_cast<double>(correct) / eval_set.size());
}

// ---------------------------------------------------------------- gradients

TEST(FullPipeline, GradientsPassFiniteDifferences) {
  for (auto arch : {Architecture::merging, Architecture::dynamic}) {
    TrainConfig c = tiny_config();
    c.architecture = arch;
    c.experts = 3;
    c.layers = 2;
    c.d_model = 4;
    Model m = build_model(c);
    perturb_curvature(m, 5);
    auto [train_set, eval_set] = make_datasets(c);
    const Batch b = make_batch(train_set, {0, 1});
    // Segment-0 scores are detached, so any h-dependence of the scores would
    // show up in finite differences but not in the gradient. A zero router
    // makes the scores constant in h; W_g itself is checked in pooled mode.
    for (auto& layer : m.layers)
      for (double& v : layer.router.W_g.mutable_values()) v = 0.0;
    std::vector<Tensor> params;
    for (const auto& p : m.parameters()) {
      bool router = false;
      for (const auto& layer : m.layers) router = router || p.same_node(layer.router.W_g);
      if (!router) params.push_back(p);
    }
    auto report = fd_check_params([&] { return batch_loss(m, b); }, params, 1e-5, 1e-5);
    EXPECT_TRUE(report.passed) << to_string(arch) << " " << report.max_rel_error;
  }
}

TEST(FullPipeline, RouterGradientsInSequencePooledMode) {
  TrainConfig c = tiny_config();
  c.task = TaskKind::classification;
  c.routing = RoutingMode::sequence_pooled;
  c.segment_length = c.seq_len;
  Model m = build_model(c);
  perturb_curvature(m, 6);
  auto [train_set, eval_set] = make_datasets(c);
  const Batch b = make_batch(train_set, {0, 1, 2});
  auto report = fd_check_params([&] { return batch_loss(m, b); }, m.parameters(), 1e-5, 1e-5);
  EXPECT_TRUE(report.passed) << report.max_rel_error;
}

// ----------------------------------------------------------------- optimizer

TEST(Schedule, WarmupThenLinearDecay) {
  EXPECT_DOUBLE_EQ(scheduled_lr(1.0, 0, 4, 20), 0.25);
  EXPECT_DOUBLE_EQ(scheduled_lr(1.0, 3, 4, 20), 1.0);
  EXPECT_DOUBLE_EQ(scheduled_lr(1.0, 4, 4, 20), 1.0);
  EXPECT_DOUBLE_EQ(scheduled_lr(1.0, 12, 4, 20), 0.5);
  EXPECT_DOUBLE_EQ(scheduled_lr(1.0, 20, 4, 20), 0.0);
  EXPECT_DOUBLE_EQ(scheduled_lr(2.0, 5, 0, 10), 1.0);
}

TEST(Optimizer, AdamWMatchesScalarReference) {
  Tensor w = Tensor::vector({0.5, -1.0});
  w.set_requires_grad(true);
  OptimizerSettings s{OptimizerKind::adamw, 0.9, 0.98, 1e-6, 0.01};
  Optimizer opt({w}, s);
  double ref[2] = {0.5, -1.0}, m1[2] = {0, 0}, v1[2] = {0, 0};
  for (int t = 1; t <= 5; ++t) {
    opt.zero_grad();
    backward(sum(mul(mul(w, w), w)));
    const double lr = 0.1 / t;
    for (int i = 0; i < 2; ++i) {
      const double g = 3 * ref[i] * ref[i];
      ref[i] *= 1 - lr * 0.01;
      m1[i] = 0.9 * m1[i] + 0.1 * g;
      v1[i] = 0.98 * v1[i] + 0.02 * g * g;
      ref[i] -= lr * (m1[i] / (1 - std::pow(0.9, t))) / (std::sqrt(v1[i] / (1 - std::pow(0.98, t))) + 1e-6);
    }
    opt.step(lr);
  }
  EXPECT_NEAR(w[0], ref[0], 1e-14);
  EXPECT_NEAR(w[1], ref[1], 1e-14);
  EXPECT_EQ(opt.steps_taken(), 5u);
}

// ------------------------------------------------------------------ training

TEST(Train, ZeroLearningRateLeavesParametersUnchanged) {
  TrainConfig c = tiny_config();
  c.lr = 0.0;
  c.epochs = 3;
  Model m = build_model(c);
  const auto before = flat_values(m.parameters());
  auto [train_set, eval_set] = make_datasets(c);
  train(m, train_set, eval_set);
  EXPECT_EQ(flat_values(m.parameters()), before);
}

TEST(Train, FirstBatchLossEqualsIndependentEvaluation) {
  TrainConfig c = tiny_config();
  c.max_steps = 1;
  Model fresh = build_model(c);
  auto [train_set, eval_set] = make_datasets(c);
  auto r = run_training(c);
  const auto order = shuffled_indices(train_set.size(), derive_seed({c.seed, 0x5eed5, 0}));
  const std::vector<std::size_t> first(order.begin(), order.begin() + c.batch_size);
  EXPECT_NEAR(r.log.steps.at(0).loss, loop_mean_nll(fresh, train_set, first), 1e-12);
}

TEST(Train, CurvatureAwareAndPlainAgreeAtStepZero) {
  TrainConfig c = tiny_config();
  c.max_steps = 1;
  c.merge.ca_enabled = true;
  auto ca = run_training(c);
  c.merge.ca_enabled = false;
  auto plain = run_training(c);
  EXPECT_NEAR(ca.log.steps.at(0).loss, plain.log.steps.at(0).loss, 1e-12);
  EXPECT_NEAR(ca.log.initial_metric, plain.log.initial_metric, 1e-12);
}

TEST(Train, BitIdenticalAcrossRuns) {
  TrainConfig c = tiny_config();
  c.epochs = 2;
  c.merge.protocol = MergeProtocol::dare;
  c.merge.dare_drop_prob = 0.3;
  auto a = run_training(c), b = run_training(c);
  EXPECT_EQ(a.log.to_csv(), b.log.to_csv());
  EXPECT_EQ(flat_values(a.model.parameters()), flat_values(b.model.parameters()));
  c.seed = 1;
  EXPECT_NE(run_training(c).log.to_csv(), a.log.to_csv());
}

TEST(Train, LogShape) {
  TrainConfig c = tiny_config();
  c.epochs = 3;
  auto r = run_training(c);
  ASSERT_EQ(r.log.steps.size(), 6u);
  ASSERT_EQ(r.log.epochs.size(), 3u);
  for (std::size_t i = 0; i < r.log.steps.size(); ++i) {
    EXPECT_EQ(r.log.steps[i].step, i);
    EXPECT_EQ(r.log.steps[i].epoch, i / 2);
    EXPECT_EQ(r.log.steps[i].metric.has_value(), i % 2 == 1);
  }
  EXPECT_EQ(r.log.metric_name, "perplexity");
  const auto nll = dataset_nll(r.model, make_datasets(c).second);
  EXPECT_DOUBLE_EQ(r.log.final_metric(), std::exp(nll.nll / nll.count));
  auto csv = r.log.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "step,epoch,loss,metric,seed,config_hash");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);
  auto j = r.log.summary();
  EXPECT_EQ(j["params"]["total"].get<std::size_t>(), count_params(r.model).total());
}

TEST(Train, MaxStepsWrapsEpochs) {
  TrainConfig c = tiny_config();
  c.max_steps = 5;
  auto r = run_training(c);
  ASSERT_EQ(r.log.steps.size(), 5u);
  EXPECT_EQ(r.log.steps.back().epoch, 2u);
  EXPECT_TRUE(r.log.steps.back().metric.has_value());
}

TEST(Train, NonFiniteLossIsDivergence) {
  TrainConfig c = tiny_config();
  c.lr = 1e200;
  c.epochs = 4;
  try {
    run_training(c);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("step"), std::string::npos);
  }
}

TEST(Train, LossDecreasesOnLearnableTask) {
  TrainConfig c = tiny_config();
  c.d_model = 8;
  c.d_ff = 16;
  c.train_sequences = 32;
  c.epochs = 8;
  c.lr = 2e-2;
  auto r = run_training(c);
  EXPECT_LT(r.log.final_metric(), r.log.initial_metric);
}

// --------------------------------------------------------------------- sweep

TEST(Sweep, AlphaZeroLeavesDomainExpertsWithoutEffect) {
  TrainConfig c = tiny_config();
  auto result = sweep(c, parse_grid("alpha=0"), {0, 1});
  for (const auto& row : result.rows) {
    TrainConfig rc = c;
    rc.merge.alpha = 0.0;
    rc.seed = row.seed;
    auto r = run_training(rc);
    EXPECT_EQ(row.metric, r.log.final_metric());
    // Frozen-base model: any domain experts give the same metric.
    Rng rng(row.seed + 10);
    for (auto& layer : r.model.layers)
      for (std::size_t i = 1; i < layer.experts.size(); ++i)
        layer.experts[i] = Expert::random(c.d_model, c.d_ff, rng);
    perturb_curvature(r.model, 7);
    EXPECT_EQ(evaluate(r.model, make_datasets(rc).second), row.metric);
  }
}

TEST(Sweep, SinglePointEqualsSingleRun) {
  TrainConfig c = tiny_config();
  auto result = sweep(c, parse_grid("rank=2"), {3});
  ASSERT_EQ(result.rows.size(), 1u);
  c.kronecker_rank = 2;
  c.seed = 3;
  EXPECT_EQ(result.rows[0].metric, run_training(c).log.final_metric());
  EXPECT_EQ(result.rows[0].mean_metric, result.rows[0].metric);
}

TEST(Sweep, NineRowsDeterministic) {
  TrainConfig c = tiny_config();
  auto grid = parse_grid("alpha=0.5,0.8,1.0");
  auto a = sweep(c, grid, {0, 1, 2});
  auto b = sweep(c, grid, {0, 1, 2});
  ASSERT_EQ(a.rows.size(), 9u);
  EXPECT_EQ(a.to_csv(), b.to_csv());
  for (std::size_t g = 0; g < 3; ++g) {
    double total = 0.0;
    for (std::size_t s = 0; s < 3; ++s) total += a.rows[g * 3 + s].metric;
    for (std::size_t s = 0; s < 3; ++s) EXPECT_NEAR(a.rows[g * 3 + s].mean_metric, total / 3, 1e-12);
  }
  auto csv = a.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "param,value,seed,metric,mean_metric");
}

TEST(Sweep, GridParsing) {
  auto g = parse_grid("experts=2,4,8");
  EXPECT_EQ(g.param, SweepParam::experts);
  EXPECT_EQ(g.values, (std::vector<double>{2, 4, 8}));
  EXPECT_THROW(parse_grid("beta=1"), ContractError);
  EXPECT_THROW(parse_grid("alpha="), ContractError);
  EXPECT_THROW(parse_grid("rank=1.5"), ContractError);
  EXPECT_THROW(parse_grid("alpha=x"), ContractError);
}

TEST(Sweep, PropagatesFailures) {
  TrainConfig c = tiny_config();
  EXPECT_THROW(sweep(c, parse_grid("experts=1"), {0}), ContractError);
  EXPECT_THROW(sweep(c, parse_grid("alpha=1"), {}), ContractError);
}

// -------------------------------------------------------------------- Fisher

TEST(LayerFisher, SingleSequenceIsSquaredGradient) {
  TrainConfig c = tiny_config();
  Model m = build_model(c);
  auto [train_set, eval_set] = make_datasets(c);
  Dataset one = train_set;
  one.sequences.resize(1);
  auto fishers = estimate_layer_fishers(m, 1, one, FisherLabels::empirical, 0);
  ASSERT_EQ(fishers.size(), m.layers[1].experts.size());
  for (std::size_t i = 0; i < fishers.size(); ++i) {
    Expert probe = m.layers[1].experts[i].clone(true);
    Tensor logp = log_softmax(batch_logits(m, make_batch(one, {0}), {}, LayerOverride{1, &probe}));
    backward(neg(mean(gather_cols(logp, make_batch(one, {0}).targets))));
    for (std::size_t s = 0; s < kExpertTensors; ++s) {
      const Tensor g = probe.tensors()[s]->grad_tensor();
      const Tensor& f = *fishers[i].tensors()[s];
      for (std::size_t k = 0; k < g.numel(); ++k) EXPECT_NEAR(f[k], g[k] * g[k], 1e-15);
    }
  }
}

TEST(LayerFisher, SampledLabelsAreSeeded) {
  TrainConfig c = tiny_config();
  Model m = build_model(c);
  auto [train_set, eval_set] = make_datasets(c);
  auto a = estimate_layer_fishers(m, 0, eval_set, FisherLabels::sampled, 5);
  auto b = estimate_layer_fishers(m, 0, eval_set, FisherLabels::sampled, 5);
  auto d = estimate_layer_fishers(m, 0, eval_set, FisherLabels::sampled, 6);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_TRUE(bit_equal(a[i], b[i]));
    for (const Tensor* t : a[i].tensors())
      for (double v : t->values()) EXPECT_GE(v, 0.0);
  }
  EXPECT_FALSE(bit_equal(a[0], d[0]));
}

}  // namespace
}  // namespace camex
