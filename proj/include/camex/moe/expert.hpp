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

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "camex/errors.hpp"
#include "camex/rng.hpp"
#include "camex/tensor/ops.hpp"

namespace camex {

enum class Activation { gelu_tanh, identity };

inline constexpr std::size_t kExpertTensors = 4;
inline constexpr std::array<std::string_view, kExpertTensors> kExpertTensorNames = {
    "W1", "b1", "W2", "b2"};

/// Two-layer feed-forward expert: y = W2 act(W1 h + b1) + b2.
///
/// The same aggregate also carries expert-shaped deltas (domain vectors) and
/// per-parameter Fisher estimates; all merging is tensor-wise over the four
/// members.
struct Expert {
  Tensor W1;  // [d_ff, d_model]
  Tensor b1;  // [d_ff]
  Tensor W2;  // [d_model, d_ff]
  Tensor b2;  // [d_model]
  Activation activation = Activation::gelu_tanh;

  std::size_t d_model() const { return W1.dim(1); }
  std::size_t d_ff() const { return W1.dim(0); }

  std::array<Tensor*, kExpertTensors> tensors() { return {&W1, &b1, &W2, &b2}; }
  std::array<const Tensor*, kExpertTensors> tensors() const { return {&W1, &b1, &W2, &b2}; }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const Tensor* t : tensors()) n += t->numel();
    return n;
  }

  /// Throws unless the four tensors have consistent d_model/d_ff.
  void validate() const {
    if (!W1.defined() || !b1.defined() || !W2.defined() || !b2.defined()) {
      throw ContractError("expert is missing a parameter tensor");
    }
    if (W1.rank() != 2 || W2.rank() != 2 || b1.rank() != 1 || b2.rank() != 1 ||
        W2.dim(0) != W1.dim(1) || W2.dim(1) != W1.dim(0) || b1.dim(0) != W1.dim(0) ||
        b2.dim(0) != W1.dim(1)) {
      throw DimensionError("inconsistent expert shapes: W1 " + shape_str(W1.shape()) + ", b1 " +
                           shape_str(b1.shape()) + ", W2 " + shape_str(W2.shape()) + ", b2 " +
                           shape_str(b2.shape()));
    }
  }

  bool same_shape(const Expert& other) const {
    for (std::size_t i = 0; i < kExpertTensors; ++i) {
      if (tensors()[i]->shape() != other.tensors()[i]->shape()) return false;
    }
    return true;
  }

  /// Deep copy; the copy's tensors are leaves.
  Expert clone(bool requires_grad = false) const {
    return {W1.clone(requires_grad), b1.clone(requires_grad), W2.clone(requires_grad),
            b2.clone(requires_grad), activation};
  }

  void set_requires_grad(bool on = true) {
    for (Tensor* t : tensors()) t->set_requires_grad(on);
  }

  static Expert zeros(std::size_t d_model, std::size_t d_ff,
                      Activation act = Activation::gelu_tanh) {
    return {Tensor::zeros({d_ff, d_model}), Tensor::zeros({d_ff}), Tensor::zeros({d_model, d_ff}),
            Tensor::zeros({d_model}), act};
  }

  /// Weights ~ N(0, 1/fan_in), biases ~ N(0, bias_std).
  static Expert random(std::size_t d_model, std::size_t d_ff, Rng& rng,
                       Activation act = Activation::gelu_tanh, double bias_std = 0.02) {
    return {rng.normal_tensor({d_ff, d_model}, 1.0 / std::sqrt(static_cast<double>(d_model))),
            rng.normal_tensor({d_ff}, bias_std),
            rng.normal_tensor({d_model, d_ff}, 1.0 / std::sqrt(static_cast<double>(d_ff))),
            rng.normal_tensor({d_model}, bias_std), act};
  }
};

/// Applies `fn` to each matching tensor pair and reassembles an Expert.
template <class Fn>
Expert map_tensors(const Expert& shape_of, Fn&& fn) {
  Expert out;
  out.activation = shape_of.activation;
  auto dst = out.tensors();
  for (std::size_t i = 0; i < kExpertTensors; ++i) *dst[i] = fn(i);
  return out;
}

// tanh-form GELU constants.
inline constexpr double kGeluSqrt2OverPi = 0.7978845608028654;
inline constexpr double kGeluCubic = 0.044715;

/// 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
inline Tensor gelu_tanh(const Tensor& x) {
  Tensor inner = mul_scalar(add(x, mul_scalar(mul(mul(x, x), x), kGeluCubic)), kGeluSqrt2OverPi);
  return mul(mul_scalar(x, 0.5), add_scalar(tanh(inner), 1.0));
}

inline Tensor activate(const Tensor& x, Activation act) {
  switch (act) {
    case Activation::identity:
      return x;
    case Activation::gelu_tanh:
      return gelu_tanh(x);
  }
  return x;
}

/// Row-wise FFN over h[T, d_model].
inline Tensor expert_forward(const Expert& e, const Tensor& h) {
  if (h.rank() != 2 || h.dim(1) != e.d_model()) {
    throw DimensionError("expert_forward: input shape " + shape_str(h.shape()) +
                         " vs W1 " + shape_str(e.W1.shape()));
  }
  Tensor hidden = activate(add_bias(matmul(h, transpose(e.W1)), e.b1), e.activation);
  return add_bias(matmul(hidden, transpose(e.W2)), e.b2);
}

/// Forward through a merged expert. Same contract as expert_forward; kept as
/// a separate entry point so merged dispatch is visible at call sites.
inline Tensor merged_forward(const Expert& merged, const Tensor& h) {
  return expert_forward(merged, h);
}

/// Base expert E_m plus the N-1 domain experts of one layer.
struct ExpertBank {
  Expert base;
  std::vector<Expert> domain;

  std::size_t size() const { return domain.size() + 1; }

  /// Expert by global index: 0 is the base, 1..N-1 the domain experts.
  const Expert& at(std::size_t i) const { return i == 0 ? base : domain.at(i - 1); }

  void validate() const {
    if (domain.empty()) throw ContractError("expert bank needs N >= 2 experts");
    base.validate();
    for (const auto& e : domain) {
      e.validate();
      if (!e.same_shape(base)) throw DimensionError("expert bank shapes differ");
    }
  }
};

}  // namespace camex
