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

// Kronecker-factored curvature operators.
//
// A curvature matrix M acts on vec(tau) for tau[d_out, d_in]. It is stored as
// a sum over R rank slots of four small factors,
//
//   M = sum_r (A_r (x) B_r) (x) (C_r (x) D_r),
//
// with A_r[o1,o1], B_r[o2,o2], C_r[i1,i1], D_r[i2,i2] and d_out = o1*o2,
// d_in = i1*i2. Application never forms the Kronecker product: tau is viewed
// as a [o1, o2, i1, i2] tensor and each factor is contracted along its own
// axis. Vectors (biases) are treated as [d_out, 1] matrices.

#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "camex/errors.hpp"
#include "camex/moe/expert.hpp"
#include "camex/tensor/ops.hpp"

namespace camex {

/// Largest divisor a <= sqrt(n); returns {a, n / a}.
inline std::array<std::size_t, 2> near_square_split(std::size_t n) {
  if (n == 0) throw ContractError("cannot factor a zero dimension");
  std::size_t best = 1;
  for (std::size_t a = 1; a * a <= n; ++a) {
    if (n % a == 0) best = a;
  }
  return {best, n / best};
}

struct DimFactorization {
  std::size_t out1 = 1, out2 = 1, in1 = 1, in2 = 1;

  std::size_t d_out() const { return out1 * out2; }
  std::size_t d_in() const { return in1 * in2; }
  std::size_t vec_length() const { return d_out() * d_in(); }

  /// Nearest-to-square split of each dimension of a matrix or vector shape.
  static DimFactorization for_shape(const Shape& shape) {
    if (shape.empty() || shape.size() > 2) {
      throw DimensionError("curvature supports vectors and matrices, got " + shape_str(shape));
    }
    const auto out = near_square_split(shape[0]);
    const auto in = near_square_split(shape.size() == 2 ? shape[1] : 1);
    return {out[0], out[1], in[0], in[1]};
  }

  bool matches(const Shape& shape) const {
    if (shape.size() == 1) return d_out() == shape[0] && d_in() == 1;
    return shape.size() == 2 && d_out() == shape[0] && d_in() == shape[1];
  }

  bool operator==(const DimFactorization&) const = default;
};

struct KroneckerTerm {
  Tensor out1;  // A [o1, o1]
  Tensor out2;  // B [o2, o2]
  Tensor in1;   // C [i1, i1]
  Tensor in2;   // D [i2, i2]

  std::array<Tensor*, 4> factors() { return {&out1, &out2, &in1, &in2}; }
  std::array<const Tensor*, 4> factors() const { return {&out1, &out2, &in1, &in2}; }
};

/// Rank-R factor set for one parameter tensor of one expert.
struct CurvatureFactors {
  DimFactorization dims;
  std::vector<KroneckerTerm> terms;

  std::size_t rank() const { return terms.size(); }

  /// Slot 0 is exactly the identity operator. Higher slots start as a no-op
  /// with A = 0 and B = C = D = I, so that they still receive gradient.
  static CurvatureFactors identity(const DimFactorization& dims, std::size_t rank) {
    CurvatureFactors f{dims, {}};
    for (std::size_t r = 0; r < rank; ++r) {
      KroneckerTerm t{r == 0 ? Tensor::eye(dims.out1) : Tensor::zeros({dims.out1, dims.out1}),
                      Tensor::eye(dims.out2), Tensor::eye(dims.in1), Tensor::eye(dims.in2)};
      f.terms.push_back(std::move(t));
    }
    return f;
  }

  /// R * (o1^2 + o2^2 + i1^2 + i2^2).
  std::size_t param_count() const {
    return rank() * (dims.out1 * dims.out1 + dims.out2 * dims.out2 + dims.in1 * dims.in1 +
                     dims.in2 * dims.in2);
  }

  /// Size of the dense operator it stands in for, (d_out d_in)^2.
  std::size_t dense_param_count() const { return dims.vec_length() * dims.vec_length(); }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (const auto& t : terms)
      for (const Tensor* f : t.factors()) out.push_back(*f);
    return out;
  }

  void set_requires_grad(bool on = true) {
    for (auto& t : terms)
      for (Tensor* f : t.factors()) f->set_requires_grad(on);
  }

  CurvatureFactors clone(bool requires_grad = false) const {
    CurvatureFactors c{dims, {}};
    for (const auto& t : terms) {
      c.terms.push_back({t.out1.clone(requires_grad), t.out2.clone(requires_grad),
                         t.in1.clone(requires_grad), t.in2.clone(requires_grad)});
    }
    return c;
  }

  void validate() const {
    for (const auto& t : terms) {
      const std::array<std::size_t, 4> n = {dims.out1, dims.out2, dims.in1, dims.in2};
      for (std::size_t k = 0; k < 4; ++k) {
        const Tensor& f = *t.factors()[k];
        if (f.rank() != 2 || f.dim(0) != n[k] || f.dim(1) != n[k]) {
          throw DimensionError("curvature factor " + std::to_string(k) + " has shape " +
                               shape_str(f.shape()) + ", expected " + std::to_string(n[k]) +
                               " square");
        }
      }
    }
  }
};

/// M * vec(tau) through four axis contractions per rank slot.
inline Tensor apply_curvature(const CurvatureFactors& f, const Tensor& tau) {
  if (!f.dims.matches(tau.shape())) {
    throw DimensionError("apply_curvature: factorization [" + std::to_string(f.dims.out1) + "x" +
                         std::to_string(f.dims.out2) + ", " + std::to_string(f.dims.in1) + "x" +
                         std::to_string(f.dims.in2) + "] does not fit " + shape_str(tau.shape()));
  }
  if (f.terms.empty()) throw ContractError("apply_curvature: rank must be >= 1");
  Tensor view = reshape(tau, {f.dims.out1, f.dims.out2, f.dims.in1, f.dims.in2});
  Tensor total;
  for (const auto& term : f.terms) {
    Tensor x = contract_axis(term.out1, view, 0);
    x = contract_axis(term.out2, x, 1);
    x = contract_axis(term.in1, x, 2);
    x = contract_axis(term.in2, x, 3);
    total = total.defined() ? add(total, x) : x;
  }
  return reshape(total, tau.shape());
}

/// Dense Kronecker product of two matrices.
inline Tensor kron(const Tensor& a, const Tensor& b) {
  const std::size_t ar = a.dim(0), ac = a.dim(1), br = b.dim(0), bc = b.dim(1);
  Tensor out = Tensor::zeros({ar * br, ac * bc});
  auto o = out.mutable_values();
  for (std::size_t i = 0; i < ar; ++i)
    for (std::size_t j = 0; j < ac; ++j)
      for (std::size_t k = 0; k < br; ++k)
        for (std::size_t l = 0; l < bc; ++l)
          o[(i * br + k) * (ac * bc) + j * bc + l] = a.at(i, j) * b.at(k, l);
  return out;
}

/// Materialized M (value-only), for dense-oracle mode on tiny dimensions.
inline Tensor materialize(const CurvatureFactors& f) {
  const std::size_t n = f.dims.vec_length();
  Tensor dense = Tensor::zeros({n, n});
  for (const auto& t : f.terms) {
    Tensor term = kron(kron(t.out1, t.out2), kron(t.in1, t.in2));
    auto d = dense.mutable_values();
    auto v = term.values();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += v[i];
  }
  return dense;
}

/// Factor sets for the four tensors of one domain expert.
struct ExpertCurvature {
  std::array<CurvatureFactors, kExpertTensors> slots;

  static ExpertCurvature identity(const Expert& shape_of, std::size_t rank) {
    ExpertCurvature c;
    for (std::size_t s = 0; s < kExpertTensors; ++s) {
      c.slots[s] = CurvatureFactors::identity(DimFactorization::for_shape(shape_of.tensors()[s]->shape()), rank);
    }
    return c;
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& s : slots) n += s.param_count();
    return n;
  }
};

/// One ExpertCurvature per domain expert of a layer.
struct CurvatureBank {
  std::vector<ExpertCurvature> experts;

  static CurvatureBank identity(const Expert& shape_of, std::size_t domain_experts,
                                std::size_t rank) {
    CurvatureBank b;
    for (std::size_t i = 0; i < domain_experts; ++i) {
      b.experts.push_back(ExpertCurvature::identity(shape_of, rank));
    }
    return b;
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& e : experts) n += e.param_count();
    return n;
  }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (const auto& e : experts)
      for (const auto& s : e.slots)
        for (const auto& p : s.parameters()) out.push_back(p);
    return out;
  }

  void set_requires_grad(bool on = true) {
    for (auto& e : experts)
      for (auto& s : e.slots) s.set_requires_grad(on);
  }
};

inline Expert apply_curvature(const ExpertCurvature& c, const Expert& tau) {
  return map_tensors(tau, [&](std::size_t slot) {
    return apply_curvature(c.slots[slot], *tau.tensors()[slot]);
  });
}

inline std::vector<Expert> apply_curvature(const CurvatureBank& bank,
                                           const std::vector<Expert>& taus) {
  if (bank.experts.size() != taus.size()) {
    throw ContractError("curvature bank holds " + std::to_string(bank.experts.size()) +
                        " factor sets for " + std::to_string(taus.size()) + " domain vectors");
  }
  std::vector<Expert> out;
  out.reserve(taus.size());
  for (std::size_t i = 0; i < taus.size(); ++i) out.push_back(apply_curvature(bank.experts[i], taus[i]));
  return out;
}

}  // namespace camex
