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
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "camex/errors.hpp"
#include "camex/harness/config.hpp"
#include "camex/harness/train.hpp"

namespace camex {

enum class SweepParam { alpha, rank, experts };

inline std::string_view to_string(SweepParam p) {
  switch (p) {
    case SweepParam::alpha: return "alpha";
    case SweepParam::rank: return "rank";
    case SweepParam::experts: return "experts";
  }
  return "?";
}

struct SweepGrid {
  SweepParam param = SweepParam::alpha;
  std::vector<double> values;
};

/// Parses "alpha=0.5,0.8,1", "rank=0,1,2" or "experts=2,4,8".
inline SweepGrid parse_grid(std::string_view spec) {
  const auto eq = spec.find('=');
  if (eq == std::string_view::npos) throw ContractError("grid spec must look like name=v1,v2,...");
  const std::string_view name = spec.substr(0, eq);
  SweepGrid grid;
  if (name == "alpha") {
    grid.param = SweepParam::alpha;
  } else if (name == "rank") {
    grid.param = SweepParam::rank;
  } else if (name == "experts") {
    grid.param = SweepParam::experts;
  } else {
    throw ContractError("unknown grid parameter '" + std::string(name) + "'");
  }
  std::string rest(spec.substr(eq + 1));
  std::stringstream ss(rest);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) {
      throw ContractError("grid value '" + item + "' is not a number");
    }
    if (grid.param != SweepParam::alpha && (v < 0.0 || v != static_cast<double>(static_cast<std::size_t>(v)))) {
      throw ContractError("grid value '" + item + "' must be a nonnegative integer");
    }
    grid.values.push_back(v);
  }
  if (grid.values.empty()) throw ContractError("grid is empty");
  return grid;
}

inline TrainConfig apply_grid_point(TrainConfig cfg, SweepParam param, double value) {
  switch (param) {
    case SweepParam::alpha: cfg.merge.alpha = value; break;
    case SweepParam::rank: cfg.kronecker_rank = static_cast<std::size_t>(value); break;
    case SweepParam::experts: cfg.experts = static_cast<std::size_t>(value); break;
  }
  cfg.validate();
  return cfg;
}

struct SweepRow {
  double value = 0.0;
  std::uint64_t seed = 0;
  double metric = 0.0;
  double mean_metric = 0.0;  // over seeds at this grid point
};

struct SweepResult {
  SweepParam param = SweepParam::alpha;
  std::vector<SweepRow> rows;  // grid-major, seeds in the given order

  /// Columns: param, value, seed, metric, mean_metric.
  std::string to_csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "param,value,seed,metric,mean_metric\n";
    for (const auto& r : rows) {
      os << to_string(param) << ',' << r.value << ',' << r.seed << ',' << r.metric << ','
         << r.mean_metric << '\n';
    }
    return os.str();
  }
};

/// Worker count: CAMEX_THREADS if set and positive, else the hardware count.
inline std::size_t sweep_threads() {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("CAMEX_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v > 0) n = static_cast<std::size_t>(v);
    } catch (const std::exception&) {
    }
  }
  return n;
}

/// One training run per (grid point, seed). Runs are independent and are
/// spread over worker threads; the first failure is rethrown.
inline SweepResult sweep(const TrainConfig& base, const SweepGrid& grid,
                         const std::vector<std::uint64_t>& seeds) {
  if (grid.values.empty()) throw ContractError("sweep: empty grid");
  if (seeds.empty()) throw ContractError("sweep: no seeds");
  std::vector<TrainConfig> jobs;
  SweepResult result;
  result.param = grid.param;
  for (double v : grid.values) {
    for (std::uint64_t s : seeds) {
      TrainConfig cfg = apply_grid_point(base, grid.param, v);
      cfg.seed = s;
      jobs.push_back(cfg);
      result.rows.push_back({v, s, 0.0, 0.0});
    }
  }

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto worker = [&] {
    for (std::size_t j = next++; j < jobs.size(); j = next++) {
      try {
        result.rows[j].metric = run_training(jobs[j]).log.final_metric();
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t workers = std::min(sweep_threads(), jobs.size());
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  for (std::size_t g = 0; g < grid.values.size(); ++g) {
    double total = 0.0;
    for (std::size_t s = 0; s < seeds.size(); ++s) total += result.rows[g * seeds.size() + s].metric;
    const double mean = total / static_cast<double>(seeds.size());
    for (std::size_t s = 0; s < seeds.size(); ++s) result.rows[g * seeds.size() + s].mean_metric = mean;
  }
  return result;
}

}  // namespace camex
