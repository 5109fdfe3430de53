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

// Causal segment routing.
//
// A sequence of L tokens is cut into K = L / S segments. All tokens of
// segment k are processed by one merged expert whose router scores come from
// the mean hidden state of segment k-1. Segment 0 uses its own mean, behind a
// stop-gradient. Batches are stacked row-wise: h[B*L, d], segments of
// sequence b occupy rows [b*L, (b+1)*L).

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "camex/curvature/factors.hpp"
#include "camex/errors.hpp"
#include "camex/merge/dare.hpp"
#include "camex/merge/domain_specific.hpp"
#include "camex/merge/domain_vectors.hpp"
#include "camex/merge/merge_spec.hpp"
#include "camex/merge/ties.hpp"
#include "camex/moe/expert.hpp"
#include "camex/moe/router.hpp"
#include "camex/tensor/ops.hpp"

namespace camex {

struct SegmentPlan {
  std::size_t length = 0;          // L
  std::size_t segment_length = 0;  // S

  std::size_t count() const { return length / segment_length; }  // K

  /// Half-open token ranges [begin, end) of each segment.
  std::vector<std::pair<std::size_t, std::size_t>> boundaries() const {
    std::vector<std::pair<std::size_t, std::size_t>> b;
    for (std::size_t k = 0; k < count(); ++k) {
      b.emplace_back(k * segment_length, (k + 1) * segment_length);
    }
    return b;
  }
};

/// No implicit padding: S must divide L.
inline SegmentPlan plan_segments(std::size_t length, std::size_t segment_length) {
  if (length == 0 || segment_length == 0) {
    throw ContractError("plan_segments: lengths must be positive");
  }
  if (length % segment_length != 0) {
    throw ContractError("plan_segments: segment length " + std::to_string(segment_length) +
                        " does not divide sequence length " + std::to_string(length));
  }
  return {length, segment_length};
}

enum class ScoreProvenance { own_mean_detached, previous_segment_mean, own_mean };

enum class RoutingMode {
  causal_segments,  // language modelling
  sequence_pooled,  // one merge per sequence from its own mean (classification)
};

struct SegmentScores {
  Tensor scores;  // [B*K, N-1]
  std::vector<ScoreProvenance> provenance;  // per segment index k
  std::size_t batch = 0;
};

namespace detail {

inline std::size_t batch_of(const Tensor& h, const SegmentPlan& plan, const Router& router) {
  if (h.rank() != 2 || h.dim(1) != router.d_model() || h.dim(0) % plan.length != 0) {
    throw DimensionError("segment routing: hidden states " + shape_str(h.shape()) +
                         " do not fit sequence length " + std::to_string(plan.length) +
                         " and W_g " + shape_str(router.W_g.shape()));
  }
  return h.dim(0) / plan.length;
}

}  // namespace detail

/// Mean hidden state of each segment: [B*K, d].
inline Tensor segment_means(const Tensor& h, const SegmentPlan& plan) {
  const std::size_t segments = h.dim(0) / plan.segment_length;
  return mean(reshape(h, {segments, plan.segment_length, h.dim(1)}), 1);
}

/// Scores of every segment: segment k >= 1 from the mean of segment k-1,
/// segment 0 from its own mean with the gradient stopped.
inline SegmentScores segment_scores(const Router& router, const Tensor& h, const SegmentPlan& plan,
                                    RoutingMode mode = RoutingMode::causal_segments) {
  SegmentScores out;
  out.batch = detail::batch_of(h, plan, router);
  const std::size_t k_count = plan.count();
  if (mode == RoutingMode::sequence_pooled) {
    if (k_count != 1) throw ContractError("sequence-pooled routing needs one segment per sequence");
    out.scores = route_tokens(router, segment_means(h, plan));
    out.provenance = {ScoreProvenance::own_mean};
    return out;
  }

  Tensor own = route_tokens(router, segment_means(h, plan));  // [B*K, n]
  const std::size_t rows = own.dim(0), n = own.dim(1);
  std::vector<std::size_t> source(rows);
  Tensor keep = Tensor::zeros({rows, n});
  Tensor stop = Tensor::zeros({rows, n});
  for (std::size_t b = 0; b < out.batch; ++b)
    for (std::size_t k = 0; k < k_count; ++k) {
      const std::size_t row = b * k_count + k;
      source[row] = b * k_count + (k == 0 ? 0 : k - 1);
      auto& mask = k == 0 ? stop : keep;
      for (std::size_t j = 0; j < n; ++j) mask.mutable_values()[row * n + j] = 1.0;
    }
  Tensor rolled = gather_rows(own, source);
  out.scores = add(mul(rolled, keep), mul(detach(rolled), stop));
  out.provenance.assign(k_count, ScoreProvenance::previous_segment_mean);
  out.provenance[0] = ScoreProvenance::own_mean_detached;
  return out;
}

struct MergeContext {
  std::size_t layer = 0;
  std::uint64_t step = 0;
  bool training = false;
};

/// Domain vectors after masking and curvature, ready to be score-weighted.
struct PreparedVectors {
  std::vector<Expert> curved;
  std::optional<Expert> elected_sign;  // TIES only
};

/// Mask-then-curve: TIES/DARE masks act on tau before the curvature matrix.
/// DARE draws masks only in training; evaluation uses the unmasked vectors.
inline PreparedVectors prepare_domain_vectors(const ExpertBank& bank, const CurvatureBank* curvature,
                                              const MergeSpec& spec, const MergeContext& ctx) {
  spec.validate();
  std::vector<Expert> taus = domain_vectors(bank).taus;
  PreparedVectors out;
  switch (spec.protocol) {
    case MergeProtocol::domain_specific:
      break;
    case MergeProtocol::ties: {
      auto r = ties_mask(taus, spec.ties_trim_fraction);
      taus = std::move(r.taus);
      out.elected_sign = std::move(r.elected_sign);
      break;
    }
    case MergeProtocol::dare:
      if (ctx.training) taus = dare_mask(taus, spec.dare_drop_prob, spec.rng_seed, ctx.layer, ctx.step);
      break;
    case MergeProtocol::fisher_diag:
      throw ContractError("fisher_diag is an offline merge, not a routing protocol");
  }
  if (spec.ca_enabled) {
    if (curvature == nullptr) throw ContractError("curvature-aware merging needs a curvature bank");
    out.curved = apply_curvature(*curvature, taus);
  } else {
    out.curved = std::move(taus);
  }
  return out;
}

/// Per-row merged parameters for one tensor slot: [rows, numel].
inline Tensor merged_slot_rows(const Expert& base, const PreparedVectors& prepared,
                               const Tensor& scores, const MergeSpec& spec, std::size_t slot) {
  const Tensor& base_t = *base.tensors()[slot];
  const auto deltas = tensor_slot(prepared.curved, slot);
  if (!(spec.ties_sign_gate && prepared.elected_sign)) {
    return merge_rows(base_t, deltas, scores, spec.alpha);
  }
  Tensor update = mul_scalar(matmul(scores, stack_flat(deltas)), spec.alpha);
  const Tensor& sign = *prepared.elected_sign->tensors()[slot];
  Tensor gate = Tensor::zeros(update.shape());
  auto gv = gate.mutable_values();
  for (std::size_t i = 0; i < gv.size(); ++i) gv[i] = sign[i % sign.numel()];
  return add_bias(mul(update, gate), flatten(base_t));
}

/// Expert assembled from row `row` of per-slot merged parameter rows.
inline Expert expert_from_rows(const std::array<Tensor, kExpertTensors>& rows, std::size_t row,
                               const Expert& shape_of) {
  return map_tensors(shape_of, [&](std::size_t slot) {
    return reshape(gather_rows(rows[slot], {row}), shape_of.tensors()[slot]->shape());
  });
}

/// Segment-wise merged forward with a given base expert and prepared vectors.
inline Tensor apply_segment_merge(const Expert& base, const PreparedVectors& prepared,
                                  const Router& router, const Tensor& h, const SegmentPlan& plan,
                                  const MergeSpec& spec,
                                  RoutingMode mode = RoutingMode::causal_segments) {
  if (router.num_scores() != prepared.curved.size()) {
    throw DimensionError("router scores " + std::to_string(router.num_scores()) + " experts, " +
                         std::to_string(prepared.curved.size()) + " domain vectors present");
  }
  const SegmentScores scores = segment_scores(router, h, plan, mode);
  std::array<Tensor, kExpertTensors> rows;
  for (std::size_t slot = 0; slot < kExpertTensors; ++slot) {
    rows[slot] = merged_slot_rows(base, prepared, scores.scores, spec, slot);
  }
  const std::size_t segments = scores.scores.dim(0);
  std::vector<Tensor> outputs;
  outputs.reserve(segments);
  std::vector<std::size_t> token_rows(plan.segment_length);
  for (std::size_t s = 0; s < segments; ++s) {
    for (std::size_t t = 0; t < plan.segment_length; ++t) token_rows[t] = s * plan.segment_length + t;
    outputs.push_back(merged_forward(expert_from_rows(rows, s, base), gather_rows(h, token_rows)));
  }
  return concat_rows(outputs);
}

/// Full merging path: mask, curve, score per segment, merge, and run every
/// segment through its own merged expert.
inline Tensor segment_merged_forward(const ExpertBank& bank, const CurvatureBank* curvature,
                                     const Router& router, const Tensor& h, const SegmentPlan& plan,
                                     const MergeSpec& spec, const MergeContext& ctx = {},
                                     RoutingMode mode = RoutingMode::causal_segments) {
  const PreparedVectors prepared = prepare_domain_vectors(bank, curvature, spec, ctx);
  return apply_segment_merge(bank.base, prepared, router, h, plan, spec, mode);
}

}  // namespace camex
