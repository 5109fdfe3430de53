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

#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "camex/errors.hpp"
#include "camex/moe/expert.hpp"
#include "camex/tensor/ops.hpp"

namespace camex {

/// tau_i = E_i - E_m for every domain expert of a bank.
struct DomainVectors {
  std::vector<Expert> taus;
  /// FNV-1a over the bytes of (E_m, E_1..E_{N-1}) at construction.
  std::uint64_t fingerprint = 0;
};

inline std::uint64_t fingerprint_bytes(std::uint64_t h, std::span<const double> values) {
  for (double v : values) {
    unsigned char bytes[sizeof(double)];
    std::memcpy(bytes, &v, sizeof(double));
    for (unsigned char b : bytes) {
      h ^= b;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

inline std::uint64_t bank_fingerprint(const ExpertBank& bank) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < bank.size(); ++i)
    for (const Tensor* t : bank.at(i).tensors()) h = fingerprint_bytes(h, t->values());
  return h;
}

inline Expert domain_vector(const Expert& expert, const Expert& base) {
  if (!expert.same_shape(base)) throw DimensionError("domain_vector: expert shapes differ");
  return map_tensors(base, [&](std::size_t i) {
    return sub(*expert.tensors()[i], *base.tensors()[i]);
  });
}

inline DomainVectors domain_vectors(const ExpertBank& bank) {
  bank.validate();
  DomainVectors dv;
  dv.taus.reserve(bank.domain.size());
  for (const auto& e : bank.domain) dv.taus.push_back(domain_vector(e, bank.base));
  dv.fingerprint = bank_fingerprint(bank);
  return dv;
}

/// Tensors number `slot` (0..3) of each expert-shaped entry.
inline std::vector<Tensor> tensor_slot(const std::vector<Expert>& experts, std::size_t slot) {
  std::vector<Tensor> out;
  out.reserve(experts.size());
  for (const auto& e : experts) out.push_back(*e.tensors()[slot]);
  return out;
}

}  // namespace camex
