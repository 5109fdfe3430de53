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

// Single-file checkpoint.
//
//   "CMEX"            4 bytes
//   version           u32  (kCheckpointVersion)
//   endianness        u32  0x01020304, written little-endian
//   config length     u64, followed by the flat TOML config text
//   tensor count      u64, then per tensor:
//     name length u64, name bytes, dtype u32 (1 = f64), ndim u32,
//     dims u64 x ndim, byte offset u64 into the payload
//   payload length    u64, followed by the little-endian f64 payload
//   CRC32             u32 over every preceding byte
//
// All integers are little-endian.

#pragma once

#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <zlib.h>

#include "camex/errors.hpp"
#include "camex/harness/config.hpp"
#include "camex/harness/model.hpp"
#include "camex/io/run_config.hpp"
#include "camex/tensor/tensor.hpp"

namespace camex {

inline constexpr char kCheckpointMagic[4] = {'C', 'M', 'E', 'X'};
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint32_t kEndianMarker = 0x01020304;
inline constexpr std::uint32_t kDtypeF64 = 1;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Raw checkpoint contents: a config document and an ordered tensor table.
struct CheckpointData {
  std::string config_text;
  std::vector<NamedTensor> tensors;

  const Tensor* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t.tensor;
    return nullptr;
  }
};

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) { put_le(v); }
  void u64(std::uint64_t v) { put_le(v); }
  void f64(double v) { put_le(std::bit_cast<std::uint64_t>(v)); }
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  std::vector<unsigned char>& buffer() { return buf_; }

 private:
  template <typename T>
  void put_le(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  std::vector<unsigned char> buf_;
};

class ByteReader {
 public:
  ByteReader(const unsigned char* data, std::size_t size) : data_(data), size_(size) {}

  std::uint32_t u32() { return get_le<std::uint32_t>(); }
  std::uint64_t u64() { return get_le<std::uint64_t>(); }
  double f64() { return std::bit_cast<double>(get_le<std::uint64_t>()); }
  std::string bytes(std::uint64_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), static_cast<std::size_t>(n));
    pos_ += static_cast<std::size_t>(n);
    return s;
  }
  std::size_t position() const { return pos_; }

 private:
  void need(std::uint64_t n) const {
    if (n > size_ - pos_) throw TruncatedFileError("checkpoint ends early at byte " + std::to_string(pos_));
  }
  template <typename T>
  T get_le() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(data_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return v;
  }
  const unsigned char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(const unsigned char* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  while (n > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace detail

/// Serializes to bytes. Refuses non-finite values and duplicate names.
inline std::vector<unsigned char> encode_checkpoint(const CheckpointData& ckpt) {
  std::map<std::string, int> names;
  for (const auto& t : ckpt.tensors) {
    if (!names.emplace(t.name, 0).second) throw ContractError("duplicate tensor name '" + t.name + "'");
    auto v = t.tensor.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!std::isfinite(v[i])) {
        throw NumericError("tensor '" + t.name + "' holds a non-finite value at index " +
                           std::to_string(i) + "; refusing to save");
      }
    }
  }
  detail::ByteWriter w;
  w.bytes(std::string_view(kCheckpointMagic, 4));
  w.u32(kCheckpointVersion);
  w.u32(kEndianMarker);
  w.u64(ckpt.config_text.size());
  w.bytes(ckpt.config_text);
  w.u64(ckpt.tensors.size());
  std::uint64_t offset = 0;
  for (const auto& t : ckpt.tensors) {
    w.u64(t.name.size());
    w.bytes(t.name);
    w.u32(kDtypeF64);
    w.u32(static_cast<std::uint32_t>(t.tensor.rank()));
    for (std::size_t d : t.tensor.shape()) w.u64(d);
    w.u64(offset);
    offset += t.tensor.numel() * sizeof(double);
  }
  w.u64(offset);
  for (const auto& t : ckpt.tensors)
    for (double v : t.tensor.values()) w.f64(v);
  auto& buf = w.buffer();
  const std::uint32_t crc = detail::crc32_of(buf.data(), buf.size());
  w.u32(crc);
  return std::move(buf);
}

/// Parses bytes. Magic, version and endianness are checked first, then the
/// declared lengths against the file size, then the CRC; tensors are only
/// materialized after all checks pass.
inline CheckpointData decode_checkpoint(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw BadMagicError("not a CMEX checkpoint (bad magic)");
  }
  detail::ByteReader r(bytes.data(), bytes.size());
  r.bytes(4);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw BadVersionError("unsupported checkpoint version " + std::to_string(version) +
                          " (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  if (r.u32() != kEndianMarker) throw FormatError("checkpoint endianness marker is wrong");

  struct Entry {
    std::string name;
    Shape shape;
    std::uint64_t offset;
  };
  CheckpointData out;
  out.config_text = r.bytes(r.u64());
  const std::uint64_t count = r.u64();
  std::vector<Entry> entries;
  for (std::uint64_t i = 0; i < count; ++i) {
    Entry e;
    e.name = r.bytes(r.u64());
    const std::uint32_t dtype = r.u32();
    if (dtype != kDtypeF64) throw FormatError("tensor '" + e.name + "' has unknown dtype " + std::to_string(dtype));
    const std::uint32_t ndim = r.u32();
    for (std::uint32_t d = 0; d < ndim; ++d) e.shape.push_back(static_cast<std::size_t>(r.u64()));
    e.offset = r.u64();
    entries.push_back(std::move(e));
  }
  const std::uint64_t payload = r.u64();
  const std::size_t payload_start = r.position();
  if (payload > bytes.size() || bytes.size() - payload_start < payload + 4) {
    throw TruncatedFileError("checkpoint declares " + std::to_string(payload) +
                             " payload bytes but the file is " + std::to_string(bytes.size()) +
                             " bytes long");
  }
  if (bytes.size() - payload_start != payload + 4) {
    throw FormatError("checkpoint has trailing bytes after the CRC");
  }
  const std::size_t body = bytes.size() - 4;
  detail::ByteReader tail(bytes.data() + body, 4);
  const std::uint32_t stored = tail.u32();
  const std::uint32_t actual = detail::crc32_of(bytes.data(), body);
  if (stored != actual) throw CrcMismatchError("checkpoint CRC mismatch");

  std::uint64_t expected_offset = 0;
  for (auto& e : entries) {
    const std::uint64_t n = shape_numel(e.shape);
    if (e.offset != expected_offset || e.offset + n * sizeof(double) > payload) {
      throw FormatError("tensor '" + e.name + "' has an inconsistent payload offset");
    }
    expected_offset += n * sizeof(double);
    detail::ByteReader pr(bytes.data() + payload_start + e.offset, n * sizeof(double));
    std::vector<double> v(n);
    for (auto& x : v) x = pr.f64();
    out.tensors.push_back({e.name, Tensor(e.shape, std::move(v))});
  }
  if (expected_offset != payload) throw FormatError("checkpoint payload has unreferenced bytes");
  return out;
}

inline void write_checkpoint(const CheckpointData& ckpt, const std::string& path) {
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path + "'");
}

inline CheckpointData read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

// ---------------------------------------------------------------------------
// Model <-> named tensors

inline std::string expert_prefix(std::size_t layer, std::size_t expert) {
  return "layer." + std::to_string(layer) + ".expert." + std::to_string(expert) + ".";
}

inline std::string curvature_prefix(std::size_t layer, std::size_t domain, std::size_t slot,
                                    std::size_t term) {
  return "layer." + std::to_string(layer) + ".curv." + std::to_string(domain) + "." +
         std::string(kExpertTensorNames[slot]) + ".r" + std::to_string(term) + ".";
}

/// Every parameter of a model under its checkpoint name, in a fixed order.
/// The tensors alias the model's parameters.
inline std::vector<NamedTensor> model_tensor_table(const Model& m) {
  std::vector<NamedTensor> table;
  auto add_expert = [&](const std::string& prefix, const Expert& e) {
    auto ts = e.tensors();
    for (std::size_t s = 0; s < kExpertTensors; ++s)
      table.push_back({prefix + std::string(kExpertTensorNames[s]), *ts[s]});
  };
  table.push_back({"embedding", m.embedding});
  if (m.classifier.defined()) table.push_back({"classifier", m.classifier});
  if (m.global_base) add_expert("global_base.", *m.global_base);
  static constexpr const char* kFactorNames[4] = {"A", "B", "C", "D"};
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const MoeLayer& layer = m.layers[l];
    table.push_back({"layer." + std::to_string(l) + ".router.W_g", layer.router.W_g});
    for (std::size_t i = 0; i < layer.experts.size(); ++i) add_expert(expert_prefix(l, i), layer.experts[i]);
    for (std::size_t j = 0; j < layer.curvature.experts.size(); ++j)
      for (std::size_t s = 0; s < kExpertTensors; ++s) {
        const auto& terms = layer.curvature.experts[j].slots[s].terms;
        for (std::size_t r = 0; r < terms.size(); ++r) {
          auto fs = terms[r].factors();
          for (std::size_t k = 0; k < 4; ++k)
            table.push_back({curvature_prefix(l, j, s, r) + kFactorNames[k], *fs[k]});
        }
      }
  }
  return table;
}

/// Comment lines recording the Kronecker factorization of each expert tensor.
inline std::string factorization_comment(const Model& m) {
  if (!m.config.curvature_enabled()) return {};
  const Expert& shape_of = m.layers.front().experts.front();
  std::ostringstream os;
  for (std::size_t s = 0; s < kExpertTensors; ++s) {
    const auto dims = DimFactorization::for_shape(shape_of.tensors()[s]->shape());
    os << "# factorization " << kExpertTensorNames[s] << " = (" << dims.out1 << "x" << dims.out2
       << ") x (" << dims.in1 << "x" << dims.in2 << ")\n";
  }
  return os.str();
}

inline CheckpointData model_checkpoint(const Model& m) {
  CheckpointData ckpt;
  ckpt.config_text = serialize_config(m.config) + factorization_comment(m);
  for (const auto& t : model_tensor_table(m)) ckpt.tensors.push_back({t.name, t.tensor.clone()});
  return ckpt;
}

inline void save_checkpoint(const Model& m, const std::string& path) {
  write_checkpoint(model_checkpoint(m), path);
}

/// Rebuilds the model from the stored config and copies every stored
/// parameter in. Missing or misshapen tensors are errors; extra tensors
/// (merge outputs) are left in the CheckpointData for the caller.
inline Model model_from_checkpoint(const CheckpointData& ckpt) {
  TrainConfig cfg;
  try {
    cfg = parse_config(ckpt.config_text);
  } catch (const ContractError& e) {
    throw FormatError(std::string("checkpoint config is invalid: ") + e.what());
  }
  Model m = build_model(cfg);
  for (auto& [name, t] : model_tensor_table(m)) {
    const Tensor* stored = ckpt.find(name);
    if (stored == nullptr) throw FormatError("checkpoint is missing tensor '" + name + "'");
    if (stored->shape() != t.shape()) {
      throw FormatError("tensor '" + name + "' has shape " + shape_str(stored->shape()) +
                        ", model expects " + shape_str(t.shape()));
    }
    auto dst = t.mutable_values();
    auto src = stored->values();
    std::copy(src.begin(), src.end(), dst.begin());
  }
  return m;
}

inline Model load_checkpoint(const std::string& path) {
  return model_from_checkpoint(read_checkpoint(path));
}

}  // namespace camex
