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

// Desk-scale synthetic data.
//
// markov_lm: token sequences from a regime-switching first-order Markov
// chain. The regime may change only at segment boundaries, so the previous
// segment usually identifies the regime of the current one.
// classification: each sequence is drawn from a single regime, which is its
// label.

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "camex/errors.hpp"
#include "camex/harness/config.hpp"
#include "camex/rng.hpp"

namespace camex {

using TransitionMatrix = std::vector<std::vector<double>>;

struct SyntheticTask {
  TaskKind kind = TaskKind::markov_lm;
  std::size_t vocab = 0;
  std::size_t seq_len = 0;
  std::size_t segment_length = 0;
  double switch_prob = 0.0;
  std::vector<TransitionMatrix> transitions;  // one row-stochastic [V, V] per regime
  std::uint64_t seed = 0;

  std::size_t regimes() const { return transitions.size(); }

  void validate() const {
    if (vocab == 0 || seq_len == 0 || transitions.empty()) {
      throw ContractError("synthetic task needs vocab, length and at least one regime");
    }
    if (segment_length == 0 || seq_len % segment_length != 0) {
      throw ContractError("synthetic task: segment length must divide sequence length");
    }
    for (const auto& t : transitions) {
      if (t.size() != vocab) throw ContractError("transition matrix has wrong row count");
      for (const auto& row : t) {
        if (row.size() != vocab) throw ContractError("transition matrix has wrong column count");
        double total = 0.0;
        for (double p : row) {
          if (!(p >= 0.0)) throw ContractError("transition probabilities must be nonnegative");
          total += p;
        }
        if (std::abs(total - 1.0) > 1e-12) {
          throw ContractError("transition row sums to " + std::to_string(total));
        }
      }
    }
  }

  /// Regime transition rows ~ Dirichlet(concentration), drawn from `seed`.
  static SyntheticTask random(TaskKind kind, std::size_t vocab, std::size_t regimes,
                              std::size_t seq_len, std::size_t segment_length, double switch_prob,
                              double concentration, std::uint64_t seed) {
    SyntheticTask task{kind, vocab, seq_len, segment_length, switch_prob, {}, seed};
    Rng rng(derive_seed({seed, 0x7a5c}));
    for (std::size_t r = 0; r < regimes; ++r) {
      TransitionMatrix m(vocab, std::vector<double>(vocab));
      for (auto& row : m) {
        double total = 0.0;
        for (double& p : row) total += (p = rng.gamma(concentration));
        if (!(total > 0.0)) {
          for (double& p : row) p = 1.0;
          total = static_cast<double>(vocab);
        }
        for (double& p : row) p /= total;
      }
      task.transitions.push_back(std::move(m));
    }
    task.validate();
    return task;
  }

  static SyntheticTask from_config(const TrainConfig& cfg) {
    return random(cfg.task, cfg.vocab, cfg.regimes, cfg.seq_len, cfg.segment_length,
                  cfg.switch_prob, cfg.concentration, cfg.task_seed);
  }
};

struct Sequence {
  /// markov_lm: L + 1 tokens (inputs are [0, L), targets [1, L]);
  /// classification: L tokens.
  std::vector<std::size_t> tokens;
  /// Regime generating each token.
  std::vector<std::size_t> regimes;
  std::size_t label = 0;

  bool operator==(const Sequence&) const = default;
};

struct Dataset {
  TaskKind kind = TaskKind::markov_lm;
  std::size_t vocab = 0;
  std::size_t seq_len = 0;
  std::size_t num_classes = 0;
  std::vector<Sequence> sequences;

  bool empty() const { return sequences.empty(); }
  std::size_t size() const { return sequences.size(); }
};

namespace detail {

inline std::size_t sample_row(const std::vector<double>& row, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t j = 0; j < row.size(); ++j) {
    acc += row[j];
    if (u < acc) return j;
  }
  // u landed in the rounding gap above the last cumulative sum.
  for (std::size_t j = row.size(); j-- > 0;) {
    if (row[j] > 0.0) return j;
  }
  return row.size() - 1;
}

}  // namespace detail

/// `count` sequences drawn from the task, deterministic in (task.seed, stream).
inline Dataset gen_task(const SyntheticTask& task, std::size_t count, std::uint64_t stream = 0) {
  task.validate();
  Dataset ds{task.kind, task.vocab, task.seq_len, task.regimes(), {}};
  Rng rng(derive_seed({task.seed, stream, 0x5e9}));
  const std::size_t length = task.kind == TaskKind::markov_lm ? task.seq_len + 1 : task.seq_len;
  for (std::size_t n = 0; n < count; ++n) {
    Sequence seq;
    std::size_t regime = rng.index(task.regimes());
    seq.label = regime;
    std::size_t token = rng.index(task.vocab);
    seq.tokens.push_back(token);
    seq.regimes.push_back(regime);
    for (std::size_t t = 1; t < length; ++t) {
      // Target position t belongs to segment (t - 1) / S of the inputs.
      if (task.kind == TaskKind::markov_lm && t > 1 && (t - 1) % task.segment_length == 0 &&
          task.regimes() > 1 && rng.uniform() < task.switch_prob) {
        regime = (regime + 1 + rng.index(task.regimes() - 1)) % task.regimes();
      }
      token = detail::sample_row(task.transitions[regime][token], rng);
      seq.tokens.push_back(token);
      seq.regimes.push_back(regime);
    }
    ds.sequences.push_back(std::move(seq));
  }
  return ds;
}

/// Perplexity of the true generating chain (regimes known) on a dataset.
inline double oracle_perplexity(const SyntheticTask& task, const Dataset& ds) {
  if (ds.empty()) throw ContractError("oracle_perplexity: empty dataset");
  double nll = 0.0;
  std::size_t count = 0;
  for (const auto& seq : ds.sequences)
    for (std::size_t t = 1; t < seq.tokens.size(); ++t) {
      nll -= std::log(task.transitions[seq.regimes[t]][seq.tokens[t - 1]][seq.tokens[t]]);
      ++count;
    }
  return std::exp(nll / static_cast<double>(count));
}

}  // namespace camex
