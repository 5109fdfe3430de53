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
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "camex/errors.hpp"
#include "camex/harness/config.hpp"
#include "camex/harness/model.hpp"
#include "camex/harness/optimizer.hpp"
#include "camex/harness/synthetic_task.hpp"
#include "camex/io/run_config.hpp"
#include "camex/rng.hpp"

namespace camex {

struct StepRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double loss = 0.0;
  /// Evaluation metric, present on the last step of each epoch.
  std::optional<double> metric;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double metric = 0.0;
  double wall_seconds = 0.0;
};

struct MetricsLog {
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  std::string metric_name;  // "perplexity" or "accuracy"
  ParamCount params;
  double initial_metric = 0.0;
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  double wall_seconds = 0.0;

  double final_metric() const {
    return epochs.empty() ? initial_metric : epochs.back().metric;
  }

  /// Columns: step, epoch, loss, metric, seed, config_hash.
  std::string to_csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "step,epoch,loss,metric,seed,config_hash\n";
    for (const auto& r : steps) {
      os << r.step << ',' << r.epoch << ',' << r.loss << ',';
      if (r.metric) os << *r.metric;
      os << ',' << seed << ',' << config_hash << '\n';
    }
    return os.str();
  }

  nlohmann::json summary() const {
    nlohmann::json j;
    j["seed"] = seed;
    j["config_hash"] = config_hash;
    j["metric_name"] = metric_name;
    j["initial_metric"] = initial_metric;
    j["final_metric"] = final_metric();
    j["steps"] = steps.size();
    j["final_loss"] = steps.empty() ? 0.0 : steps.back().loss;
    j["wall_seconds"] = wall_seconds;
    j["params"] = {{"backbone", params.backbone},
                   {"experts", params.experts},
                   {"curvature", params.curvature},
                   {"router", params.router},
                   {"total", params.total()}};
    nlohmann::json ep = nlohmann::json::array();
    for (const auto& e : epochs) {
      ep.push_back({{"epoch", e.epoch}, {"metric", e.metric}, {"wall_seconds", e.wall_seconds}});
    }
    j["epochs"] = ep;
    return j;
  }
};

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << text;
  if (!out) throw IoError("write failed for '" + path + "'");
}

/// Summed target NLL and target count over a dataset, without gradients.
struct NllTotals {
  double nll = 0.0;
  std::size_t count = 0;
  std::size_t correct = 0;  // classification only
};

inline NllTotals dataset_nll(const Model& m, const Dataset& ds) {
  if (ds.sequences.empty()) throw ContractError("evaluate: empty dataset");
  NoGradGuard guard;
  NllTotals totals;
  const std::size_t bs = m.config.batch_size;
  for (std::size_t start = 0; start < ds.sequences.size(); start += bs) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(start + bs, ds.sequences.size()); ++i) idx.push_back(i);
    const Batch b = make_batch(ds, idx);
    const Tensor logits = batch_logits(m, b);
    const Tensor logp = log_softmax(logits);
    const std::size_t cols = logp.dim(1);
    for (std::size_t r = 0; r < b.targets.size(); ++r) {
      totals.nll -= logp.at(r, b.targets[r]);
      std::size_t best = 0;
      for (std::size_t c = 1; c < cols; ++c)
        if (logits.at(r, c) > logits.at(r, best)) best = c;
      totals.correct += best == b.targets[r];
    }
    totals.count += b.targets.size();
  }
  return totals;
}

/// Perplexity exp(mean NLL) for language modelling, accuracy for classification.
inline double evaluate(const Model& m, const Dataset& ds) {
  const NllTotals t = dataset_nll(m, ds);
  if (m.config.task == TaskKind::markov_lm) {
    return std::exp(t.nll / static_cast<double>(t.count));
  }
  return static_cast<double>(t.correct) / static_cast<double>(t.count);
}

/// Fisher-Yates with the project RNG, so the order is platform independent.
inline std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.index(i)]);
  return idx;
}

inline std::size_t steps_per_epoch(const TrainConfig& cfg, std::size_t sequences) {
  return (sequences + cfg.batch_size - 1) / cfg.batch_size;
}

/// Number of optimizer steps a run takes: max_steps when set, else
/// epochs x steps_per_epoch.
inline std::size_t total_steps(const TrainConfig& cfg, std::size_t sequences) {
  return cfg.max_steps > 0 ? cfg.max_steps : cfg.epochs * steps_per_epoch(cfg, sequences);
}

/// Trains in place. With max_steps set, epochs wrap around the data until the
/// step budget is spent. A non-finite loss aborts with DivergenceError.
inline MetricsLog train(Model& m, const Dataset& train_set, const Dataset& eval_set) {
  const TrainConfig& cfg = m.config;
  if (train_set.sequences.empty()) throw ContractError("train: empty dataset");
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  MetricsLog log;
  log.seed = cfg.seed;
  log.config_hash = config_hash(cfg);
  log.metric_name = cfg.task == TaskKind::markov_lm ? "perplexity" : "accuracy";
  log.params = count_params(m);
  log.initial_metric = evaluate(m, eval_set);

  const std::size_t n = train_set.sequences.size();
  const std::size_t per_epoch = steps_per_epoch(cfg, n);
  const std::size_t total = total_steps(cfg, n);
  Optimizer opt(m.parameters(), {cfg.optimizer, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay});

  std::vector<std::size_t> order;
  for (std::size_t step = 0; step < total; ++step) {
    const std::size_t epoch = step / per_epoch;
    const std::size_t within = step % per_epoch;
    if (within == 0) order = shuffled_indices(n, derive_seed({cfg.seed, 0x5eed5, epoch}));
    const std::size_t lo = within * cfg.batch_size;
    const std::vector<std::size_t> idx(order.begin() + lo,
                                       order.begin() + std::min(lo + cfg.batch_size, n));
    const Batch batch = make_batch(train_set, idx);

    const auto where = " at step " + std::to_string(step) + " (epoch " + std::to_string(epoch) + ")";
    opt.zero_grad();
    double value = 0.0;
    try {
      const Tensor loss = batch_loss(m, batch, MergeContext{0, step, true});
      value = loss.item();
      if (!std::isfinite(value)) {
        throw DivergenceError("loss became " + std::to_string(value) + where);
      }
      backward(loss);
    } catch (const NumericError& e) {
      throw DivergenceError(std::string(e.what()) + where);
    }
    opt.step(scheduled_lr(cfg.lr, step, cfg.warmup_steps, total));

    log.steps.push_back({step, epoch, value, std::nullopt});
    if (within + 1 == per_epoch || step + 1 == total) {
      double metric = 0.0;
      try {
        metric = evaluate(m, eval_set);
      } catch (const NumericError& e) {
        throw DivergenceError(std::string(e.what()) + " during evaluation" + where);
      }
      log.steps.back().metric = metric;
      log.epochs.push_back({epoch, metric, elapsed()});
    }
  }
  log.wall_seconds = elapsed();
  return log;
}

/// Model, data and training for one configuration.
struct RunResult {
  MetricsLog log;
  Model model;
};

inline std::pair<Dataset, Dataset> make_datasets(const TrainConfig& cfg) {
  const SyntheticTask task = SyntheticTask::from_config(cfg);
  return {gen_task(task, cfg.train_sequences, 0), gen_task(task, cfg.eval_sequences, 1)};
}

inline RunResult run_training(const TrainConfig& cfg) {
  auto [train_set, eval_set] = make_datasets(cfg);
  Model m = build_model(cfg);
  MetricsLog log = train(m, train_set, eval_set);
  return {std::move(log), std::move(m)};
}

}  // namespace camex
