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

// Flat TOML form of TrainConfig. Only `key = value` lines, `#` comments and
// blank lines are accepted; tables, arrays and inline tables are rejected.

#pragma once

#include <algorithm>
#include <charconv>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "camex/errors.hpp"
#include "camex/harness/config.hpp"

namespace camex {

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, res.ptr);
  // TOML floats need a fractional part or exponent.
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

inline double parse_double(std::string_view key, std::string_view text) {
  double v = 0.0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw FormatError("config key '" + std::string(key) + "': expected a number, got '" +
                      std::string(text) + "'");
  }
  return v;
}

inline std::uint64_t parse_uint(std::string_view key, std::string_view text) {
  std::uint64_t v = 0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw FormatError("config key '" + std::string(key) + "': expected a nonnegative integer, got '" +
                      std::string(text) + "'");
  }
  return v;
}

inline bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true") return true;
  if (text == "false") return false;
  throw FormatError("config key '" + std::string(key) + "': expected true or false");
}

inline std::string parse_string(std::string_view key, std::string_view text) {
  if (text.size() < 2 || text.front() != '"' || text.back() != '"') {
    throw FormatError("config key '" + std::string(key) + "': expected a quoted string");
  }
  std::string_view body = text.substr(1, text.size() - 2);
  if (body.find_first_of("\"\\") != std::string_view::npos) {
    throw FormatError("config key '" + std::string(key) + "': escapes are not supported");
  }
  return std::string(body);
}

inline std::string quote(std::string_view s) { return "\"" + std::string(s) + "\""; }

struct ConfigField {
  std::string_view key;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, std::string_view)> set;
};

template <typename T>
ConfigField size_field(std::string_view key, T TrainConfig::*member) {
  return {key, [member](const TrainConfig& c) { return std::to_string(c.*member); },
          [key, member](TrainConfig& c, std::string_view v) {
            c.*member = static_cast<T>(parse_uint(key, v));
          }};
}

inline ConfigField double_field(std::string_view key, double TrainConfig::*member) {
  return {key, [member](const TrainConfig& c) { return format_double(c.*member); },
          [key, member](TrainConfig& c, std::string_view v) { c.*member = parse_double(key, v); }};
}

inline ConfigField bool_field(std::string_view key, bool TrainConfig::*member) {
  return {key, [member](const TrainConfig& c) { return std::string(c.*member ? "true" : "false"); },
          [key, member](TrainConfig& c, std::string_view v) { c.*member = parse_bool(key, v); }};
}

template <typename Enum>
ConfigField enum_field(std::string_view key, Enum TrainConfig::*member,
                       std::initializer_list<Enum> options) {
  std::vector<Enum> opts(options);
  return {key, [member](const TrainConfig& c) { return quote(to_string(c.*member)); },
          [key, member, opts](TrainConfig& c, std::string_view v) {
            const std::string s = parse_string(key, v);
            for (Enum e : opts) {
              if (to_string(e) == s) {
                c.*member = e;
                return;
              }
            }
            throw FormatError("config key '" + std::string(key) + "': unknown value '" + s + "'");
          }};
}

inline const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = [] {
    std::vector<ConfigField> f;
    f.push_back(enum_field("task", &TrainConfig::task,
                           {TaskKind::markov_lm, TaskKind::classification}));
    f.push_back(size_field("vocab", &TrainConfig::vocab));
    f.push_back(size_field("seq_len", &TrainConfig::seq_len));
    f.push_back(size_field("regimes", &TrainConfig::regimes));
    f.push_back(double_field("switch_prob", &TrainConfig::switch_prob));
    f.push_back(double_field("concentration", &TrainConfig::concentration));
    f.push_back(size_field("train_sequences", &TrainConfig::train_sequences));
    f.push_back(size_field("eval_sequences", &TrainConfig::eval_sequences));
    f.push_back(size_field("task_seed", &TrainConfig::task_seed));

    f.push_back(enum_field("architecture", &TrainConfig::architecture,
                           {Architecture::vanilla, Architecture::merging, Architecture::dynamic}));
    f.push_back(size_field("experts", &TrainConfig::experts));
    f.push_back(size_field("layers", &TrainConfig::layers));
    f.push_back(size_field("d_model", &TrainConfig::d_model));
    f.push_back(size_field("d_ff", &TrainConfig::d_ff));
    f.push_back(size_field("segment_length", &TrainConfig::segment_length));
    f.push_back(size_field("top_k", &TrainConfig::top_k));
    f.push_back(enum_field("activation", &TrainConfig::activation,
                           {Activation::gelu_tanh, Activation::identity}));
    f.push_back(enum_field("routing", &TrainConfig::routing,
                           {RoutingMode::causal_segments, RoutingMode::sequence_pooled}));
    f.push_back(size_field("kronecker_rank", &TrainConfig::kronecker_rank));
    f.push_back(bool_field("share_curvature", &TrainConfig::share_curvature));

    f.push_back({"protocol", [](const TrainConfig& c) { return quote(to_string(c.merge.protocol)); },
                 [](TrainConfig& c, std::string_view v) {
                   try {
                     c.merge.protocol = parse_merge_protocol(parse_string("protocol", v));
                   } catch (const ContractError& e) {
                     throw FormatError(std::string("config key 'protocol': ") + e.what());
                   }
                 }});
    f.push_back({"alpha", [](const TrainConfig& c) { return format_double(c.merge.alpha); },
                 [](TrainConfig& c, std::string_view v) { c.merge.alpha = parse_double("alpha", v); }});
    f.push_back({"curvature_aware",
                 [](const TrainConfig& c) { return std::string(c.merge.ca_enabled ? "true" : "false"); },
                 [](TrainConfig& c, std::string_view v) {
                   c.merge.ca_enabled = parse_bool("curvature_aware", v);
                 }});
    f.push_back({"dare_p", [](const TrainConfig& c) { return format_double(c.merge.dare_drop_prob); },
                 [](TrainConfig& c, std::string_view v) {
                   c.merge.dare_drop_prob = parse_double("dare_p", v);
                 }});
    f.push_back({"ties_trim",
                 [](const TrainConfig& c) { return format_double(c.merge.ties_trim_fraction); },
                 [](TrainConfig& c, std::string_view v) {
                   c.merge.ties_trim_fraction = parse_double("ties_trim", v);
                 }});
    f.push_back({"ties_sign_gate",
                 [](const TrainConfig& c) { return std::string(c.merge.ties_sign_gate ? "true" : "false"); },
                 [](TrainConfig& c, std::string_view v) {
                   c.merge.ties_sign_gate = parse_bool("ties_sign_gate", v);
                 }});
    f.push_back({"merge_seed", [](const TrainConfig& c) { return std::to_string(c.merge.rng_seed); },
                 [](TrainConfig& c, std::string_view v) {
                   c.merge.rng_seed = parse_uint("merge_seed", v);
                 }});

    f.push_back(enum_field("optimizer", &TrainConfig::optimizer,
                           {OptimizerKind::adamw, OptimizerKind::gradient_descent}));
    f.push_back(double_field("lr", &TrainConfig::lr));
    f.push_back(double_field("beta1", &TrainConfig::beta1));
    f.push_back(double_field("beta2", &TrainConfig::beta2));
    f.push_back(double_field("eps", &TrainConfig::eps));
    f.push_back(double_field("weight_decay", &TrainConfig::weight_decay));
    f.push_back(size_field("warmup_steps", &TrainConfig::warmup_steps));
    f.push_back(size_field("batch_size", &TrainConfig::batch_size));
    f.push_back(size_field("epochs", &TrainConfig::epochs));
    f.push_back(size_field("max_steps", &TrainConfig::max_steps));
    f.push_back(enum_field("fisher_labels", &TrainConfig::fisher_labels,
                           {FisherLabels::empirical, FisherLabels::sampled}));
    f.push_back(size_field("seed", &TrainConfig::seed));
    return f;
  }();
  return fields;
}

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

/// Drops a trailing `# comment` that is not inside a quoted string.
inline std::string_view strip_comment(std::string_view line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

}  // namespace detail

/// Every key in serialization order.
inline std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : detail::config_fields()) keys.emplace_back(f.key);
  return keys;
}

inline std::string serialize_config(const TrainConfig& cfg) {
  std::ostringstream os;
  for (const auto& f : detail::config_fields()) os << f.key << " = " << f.get(cfg) << '\n';
  return os.str();
}

/// Parses a document on top of the defaults. Unknown or repeated keys are
/// errors; the result is validated.
inline TrainConfig parse_config(std::string_view text) {
  TrainConfig cfg;
  std::set<std::string, std::less<>> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    const std::string_view raw =
        text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    const std::string_view line = detail::trim(detail::strip_comment(raw));
    if (line.empty()) continue;
    const std::string where = "config line " + std::to_string(line_no) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw FormatError(where + "expected 'key = value'");
    const std::string_view key = detail::trim(line.substr(0, eq));
    const std::string_view value = detail::trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) throw FormatError(where + "empty key or value");
    const auto& fields = detail::config_fields();
    auto it = std::find_if(fields.begin(), fields.end(),
                           [&](const detail::ConfigField& f) { return f.key == key; });
    if (it == fields.end()) throw FormatError(where + "unknown key '" + std::string(key) + "'");
    if (!seen.insert(std::string(key)).second) {
      throw FormatError(where + "duplicate key '" + std::string(key) + "'");
    }
    it->set(cfg, value);
  }
  cfg.validate();
  return cfg;
}

inline TrainConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return parse_config(os.str());
}

inline void save_config(const TrainConfig& cfg, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write config '" + path + "'");
  out << serialize_config(cfg);
  if (!out) throw IoError("write failed for '" + path + "'");
}

/// Stable 64-bit fingerprint of a configuration.
inline std::uint64_t config_hash(const TrainConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : serialize_config(cfg)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace camex
