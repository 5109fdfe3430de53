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

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

#include "camex/curvature/identities.hpp"
#include "camex/errors.hpp"
#include "camex/merge/merge_spec.hpp"
#include "camex/moe/expert.hpp"
#include "camex/routing/segment.hpp"

namespace camex {

enum class TaskKind { markov_lm, classification };
enum class Architecture { vanilla, merging, dynamic };
enum class FisherLabels { empirical, sampled };

/// Everything needed to reproduce one training run.
struct TrainConfig {
  // task
  TaskKind task = TaskKind::markov_lm;
  std::size_t vocab = 16;
  std::size_t seq_len = 64;
  std::size_t regimes = 2;
  double switch_prob = 0.25;
  double concentration = 0.2;
  std::size_t train_sequences = 64;
  std::size_t eval_sequences = 32;
  std::uint64_t task_seed = 1234;

  // model
  Architecture architecture = Architecture::merging;
  std::size_t experts = 8;
  std::size_t layers = 2;
  std::size_t d_model = 16;
  std::size_t d_ff = 32;
  std::size_t segment_length = 16;
  std::size_t top_k = 2;
  Activation activation = Activation::gelu_tanh;
  RoutingMode routing = RoutingMode::causal_segments;
  std::size_t kronecker_rank = 1;
  bool share_curvature = false;

  // merging
  MergeSpec merge;

  // optimisation
  OptimizerKind optimizer = OptimizerKind::adamw;
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-6;
  double weight_decay = 0.01;
  std::size_t warmup_steps = 16;
  std::size_t batch_size = 8;
  std::size_t epochs = 1;
  std::size_t max_steps = 0;  // 0: run all epochs

  FisherLabels fisher_labels = FisherLabels::empirical;
  std::uint64_t seed = 0;

  bool curvature_enabled() const {
    return architecture != Architecture::vanilla && merge.ca_enabled && kronecker_rank > 0;
  }

  /// Merge settings as the model applies them: rank 0 or the vanilla
  /// architecture switch curvature off.
  MergeSpec effective_merge() const {
    MergeSpec m = merge;
    m.ca_enabled = curvature_enabled();
    return m;
  }

  std::size_t num_classes() const { return regimes; }

  void validate() const {
    auto positive = [](std::size_t v, const char* name) {
      if (v == 0) throw ContractError(std::string(name) + " must be positive");
    };
    positive(vocab, "vocab");
    positive(seq_len, "seq_len");
    positive(regimes, "regimes");
    positive(layers, "layers");
    positive(d_model, "d_model");
    positive(d_ff, "d_ff");
    positive(segment_length, "segment_length");
    positive(batch_size, "batch_size");
    positive(top_k, "top_k");
    if (experts < 2) throw ContractError("experts must be >= 2");
    if (seq_len % segment_length != 0) {
      throw ContractError("segment_length must divide seq_len");
    }
    if (routing == RoutingMode::sequence_pooled && segment_length != seq_len) {
      throw ContractError("sequence-pooled routing needs segment_length == seq_len");
    }
    if (architecture == Architecture::vanilla && top_k > experts) {
      throw ContractError("top_k exceeds the number of experts");
    }
    if (merge.protocol == MergeProtocol::fisher_diag) {
      throw ContractError("fisher_diag is an offline merge and cannot be trained");
    }
    if (!(switch_prob >= 0.0 && switch_prob <= 1.0)) throw ContractError("switch_prob must lie in [0, 1]");
    if (!(concentration > 0.0)) throw ContractError("concentration must be positive");
    if (!(lr >= 0.0)) throw ContractError("lr must be nonnegative");
    merge.validate();
  }

  bool operator==(const TrainConfig&) const = default;
};

inline std::string_view to_string(TaskKind k) {
  return k == TaskKind::markov_lm ? "markov_lm" : "classification";
}
inline std::string_view to_string(Architecture a) {
  switch (a) {
    case Architecture::vanilla: return "vanilla";
    case Architecture::merging: return "merging";
    case Architecture::dynamic: return "dynamic";
  }
  return "?";
}
inline std::string_view to_string(Activation a) {
  return a == Activation::gelu_tanh ? "gelu_tanh" : "identity";
}
inline std::string_view to_string(RoutingMode m) {
  return m == RoutingMode::causal_segments ? "causal_segments" : "sequence_pooled";
}
inline std::string_view to_string(OptimizerKind o) {
  return o == OptimizerKind::adamw ? "adamw" : "gradient_descent";
}
inline std::string_view to_string(FisherLabels f) {
  return f == FisherLabels::empirical ? "empirical" : "sampled";
}

}  // namespace camex
