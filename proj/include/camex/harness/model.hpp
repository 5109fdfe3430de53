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

// Toy SMoE language model / classifier: token embedding, a stack of
// residual SMoE-FFN blocks, and a tied output head (or a pooled linear
// classifier). No attention: every token's context reaches it only through
// the merged expert chosen from the previous segment.

#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "camex/curvature/ca_merge.hpp"
#include "camex/curvature/factors.hpp"
#include "camex/merge/domain_vectors.hpp"
#include "camex/errors.hpp"
#include "camex/harness/config.hpp"
#include "camex/harness/synthetic_task.hpp"
#include "camex/moe/expert.hpp"
#include "camex/moe/router.hpp"
#include "camex/rng.hpp"
#include "camex/routing/segment.hpp"
#include "camex/tensor/ops.hpp"

namespace camex {

/// One SMoE block.
///   vanilla: experts = all N experts, router scores N.
///   merging: experts[0] is the base E_m, experts[1..N-1] the domain experts.
///   dynamic: experts = the N-1 domain experts; the base arrives from the
///            previous layer.
struct MoeLayer {
  Router router;
  std::vector<Expert> experts;
  CurvatureBank curvature;  // empty when curvature is off or shared from layer 0
};

struct Model {
  TrainConfig config;
  Tensor embedding;                  // [V, d_model], tied with the LM head
  Tensor classifier;                 // [classes, d_model], classification only
  std::optional<Expert> global_base;  // dynamic architecture only
  std::vector<MoeLayer> layers;

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> ps{embedding};
    if (classifier.defined()) ps.push_back(classifier);
    if (global_base) {
      for (const Tensor* t : global_base->tensors()) ps.push_back(*t);
    }
    for (const auto& layer : layers) {
      ps.push_back(layer.router.W_g);
      for (const auto& e : layer.experts)
        for (const Tensor* t : e.tensors()) ps.push_back(*t);
      for (const auto& p : layer.curvature.parameters()) ps.push_back(p);
    }
    return ps;
  }

  void set_requires_grad(bool on = true) {
    for (auto& p : parameters()) p.set_requires_grad(on);
  }

  const CurvatureBank* curvature_for(std::size_t layer) const {
    if (!config.curvature_enabled()) return nullptr;
    if (config.share_curvature) return &layers.front().curvature;
    return &layers.at(layer).curvature;
  }
};

struct ParamCount {
  std::size_t backbone = 0;
  std::size_t experts = 0;
  std::size_t curvature = 0;
  std::size_t router = 0;

  std::size_t total() const { return backbone + experts + curvature + router; }
  bool operator==(const ParamCount&) const = default;
};

inline ParamCount count_params(const Model& m) {
  ParamCount c;
  c.backbone = m.embedding.numel() + (m.classifier.defined() ? m.classifier.numel() : 0);
  if (m.global_base) c.experts += m.global_base->param_count();
  for (const auto& layer : m.layers) {
    c.router += layer.router.W_g.numel();
    for (const auto& e : layer.experts) c.experts += e.param_count();
    c.curvature += layer.curvature.param_count();
  }
  return c;
}

/// Parameters of one expert of the given dimensions.
inline std::size_t expert_param_count(std::size_t d_model, std::size_t d_ff) {
  return 2 * d_model * d_ff + d_model + d_ff;
}

inline Model build_model(const TrainConfig& cfg) {
  cfg.validate();
  Model m;
  m.config = cfg;
  Rng rng(derive_seed({cfg.seed, 0x30de1}));
  const std::size_t d = cfg.d_model;
  const std::size_t n = cfg.experts;
  m.embedding = rng.normal_tensor({cfg.vocab, d}, 1.0 / std::sqrt(static_cast<double>(d)));
  if (cfg.task == TaskKind::classification) {
    m.classifier = rng.normal_tensor({cfg.num_classes(), d}, 1.0 / std::sqrt(static_cast<double>(d)));
  }
  if (cfg.architecture == Architecture::dynamic) {
    m.global_base = Expert::random(d, cfg.d_ff, rng, cfg.activation);
  }
  const std::size_t stored = cfg.architecture == Architecture::dynamic ? n - 1 : n;
  const std::size_t scored = cfg.architecture == Architecture::vanilla ? n : n - 1;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    MoeLayer layer;
    layer.router.W_g = rng.normal_tensor({scored, d}, 1.0 / std::sqrt(static_cast<double>(d)));
    for (std::size_t i = 0; i < stored; ++i) {
      layer.experts.push_back(Expert::random(d, cfg.d_ff, rng, cfg.activation));
    }
    if (cfg.curvature_enabled() && (l == 0 || !cfg.share_curvature)) {
      layer.curvature = CurvatureBank::identity(layer.experts.front(), n - 1, cfg.kronecker_rank);
    }
    m.layers.push_back(std::move(layer));
  }
  m.set_requires_grad(true);
  return m;
}

/// Replaces one block's SMoE layer with a single dense expert.
struct LayerOverride {
  std::size_t layer = 0;
  const Expert* expert = nullptr;
};

/// Hidden states after the SMoE stack for token ids laid out [B*L].
inline Tensor forward_hidden(const Model& m, const std::vector<std::size_t>& token_ids,
                             const MergeContext& ctx = {},
                             std::optional<LayerOverride> override_layer = std::nullopt) {
  const auto& cfg = m.config;
  if (token_ids.size() % cfg.seq_len != 0) {
    throw DimensionError("forward: " + std::to_string(token_ids.size()) +
                         " tokens is not a multiple of seq_len " + std::to_string(cfg.seq_len));
  }
  for (std::size_t id : token_ids) {
    if (id >= cfg.vocab) throw DimensionError("forward: token id out of vocabulary");
  }
  Tensor h = gather_rows(m.embedding, token_ids);
  const SegmentPlan plan = plan_segments(cfg.seq_len, cfg.segment_length);
  const MergeSpec merge = cfg.effective_merge();
  std::optional<Expert> base = m.global_base;
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const MoeLayer& layer = m.layers[l];
    MergeContext layer_ctx = ctx;
    layer_ctx.layer = l;
    Tensor out;
    if (override_layer && override_layer->layer == l) {
      h = add(h, expert_forward(*override_layer->expert, h));
      if (base) {
        const PreparedVectors prepared = prepare_domain_vectors(
            ExpertBank{*base, layer.experts}, m.curvature_for(l), merge, layer_ctx);
        base = propagate_base(*base, prepared.curved, cfg.merge.alpha);
      }
      continue;
    }
    switch (cfg.architecture) {
      case Architecture::vanilla: {
        ExpertBank bank{layer.experts.front(), {layer.experts.begin() + 1, layer.experts.end()}};
        out = smoe_forward(bank, layer.router, h, cfg.top_k);
        break;
      }
      case Architecture::merging: {
        ExpertBank bank{layer.experts.front(), {layer.experts.begin() + 1, layer.experts.end()}};
        out = segment_merged_forward(bank, m.curvature_for(l), layer.router, h, plan, merge,
                                     layer_ctx, cfg.routing);
        break;
      }
      case Architecture::dynamic: {
        ExpertBank bank{*base, layer.experts};
        const PreparedVectors prepared =
            prepare_domain_vectors(bank, m.curvature_for(l), merge, layer_ctx);
        out = apply_segment_merge(*base, prepared, layer.router, h, plan, merge, cfg.routing);
        base = propagate_base(*base, prepared.curved, cfg.merge.alpha);
        break;
      }
    }
    h = add(h, out);
  }
  return h;
}

/// Tied-head logits [B*L, V].
inline Tensor lm_logits(const Model& m, const Tensor& hidden) {
  return matmul(hidden, transpose(m.embedding));
}

/// Pooled classifier logits [B, classes].
inline Tensor class_logits(const Model& m, const Tensor& hidden) {
  const std::size_t batch = hidden.dim(0) / m.config.seq_len;
  Tensor pooled = mean(reshape(hidden, {batch, m.config.seq_len, hidden.dim(1)}), 1);
  return matmul(pooled, transpose(m.classifier));
}

struct Batch {
  std::vector<std::size_t> inputs;   // [B*L]
  std::vector<std::size_t> targets;  // [B*L] next tokens, or [B] labels
};

inline Batch make_batch(const Dataset& ds, const std::vector<std::size_t>& indices) {
  Batch b;
  for (std::size_t i : indices) {
    const Sequence& s = ds.sequences.at(i);
    if (ds.kind == TaskKind::markov_lm) {
      b.inputs.insert(b.inputs.end(), s.tokens.begin(), s.tokens.end() - 1);
      b.targets.insert(b.targets.end(), s.tokens.begin() + 1, s.tokens.end());
    } else {
      b.inputs.insert(b.inputs.end(), s.tokens.begin(), s.tokens.end());
      b.targets.push_back(s.label);
    }
  }
  return b;
}

/// Output logits for a batch: next-token logits or class logits.
inline Tensor batch_logits(const Model& m, const Batch& b, const MergeContext& ctx = {},
                           std::optional<LayerOverride> override_layer = std::nullopt) {
  Tensor hidden = forward_hidden(m, b.inputs, ctx, override_layer);
  return m.config.task == TaskKind::markov_lm ? lm_logits(m, hidden) : class_logits(m, hidden);
}

/// Mean negative log-likelihood of the batch targets.
inline Tensor batch_loss(const Model& m, const Batch& b, const MergeContext& ctx = {}) {
  Tensor logp = log_softmax(batch_logits(m, b, ctx));
  return neg(mean(gather_cols(logp, b.targets)));
}

}  // namespace camex
