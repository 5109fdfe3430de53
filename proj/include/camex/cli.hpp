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

// `camex` command line: train, merge, verify, sweep, info.
// Exit codes: 0 success, 1 verification failure, 2 usage or input error.

#pragma once

#include <CLI11.hpp>

#include <cstdint>
#include <exception>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "camex/curvature/ca_merge.hpp"
#include "camex/errors.hpp"
#include "camex/harness/fisher_estimate.hpp"
#include "camex/harness/sweep.hpp"
#include "camex/harness/train.hpp"
#include "camex/io/checkpoint.hpp"
#include "camex/io/run_config.hpp"
#include "camex/merge/fisher.hpp"
#include "camex/merge/reparameterize.hpp"
#include "camex/routing/segment.hpp"
#include "camex/verify.hpp"

namespace camex {

inline constexpr int kExitOk = 0;
inline constexpr int kExitVerifyFailed = 1;
inline constexpr int kExitUsage = 2;

/// Offline merge protocols accepted by `camex merge`.
struct CliMergeProtocol {
  MergeProtocol protocol = MergeProtocol::domain_specific;
  bool curvature = false;
};

inline CliMergeProtocol parse_cli_protocol(const std::string& name) {
  if (name == "domain_specific") return {MergeProtocol::domain_specific, false};
  if (name == "ca") return {MergeProtocol::domain_specific, true};
  if (name == "ties") return {MergeProtocol::ties, false};
  if (name == "ties_ca") return {MergeProtocol::ties, true};
  if (name == "dare") return {MergeProtocol::dare, false};
  if (name == "dare_ca") return {MergeProtocol::dare, true};
  if (name == "fisher_diag") return {MergeProtocol::fisher_diag, false};
  throw ContractError("unknown protocol '" + name +
                      "' (expected domain_specific, ca, ties, ties_ca, dare, dare_ca or fisher_diag)");
}

inline std::vector<double> parse_number_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw ContractError("'" + item + "' is not a number");
    out.push_back(v);
  }
  return out;
}

/// Base expert of every layer as merging sees it: the stored base, or for the
/// dynamic variant the base propagated from the global one.
inline std::vector<Expert> layer_bases(const Model& m) {
  std::vector<Expert> bases;
  const MergeSpec merge = m.config.effective_merge();
  if (m.config.architecture == Architecture::merging) {
    for (const auto& layer : m.layers) bases.push_back(layer.experts.front());
    return bases;
  }
  Expert base = *m.global_base;
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    bases.push_back(base);
    const PreparedVectors p = prepare_domain_vectors(ExpertBank{base, m.layers[l].experts},
                                                     m.curvature_for(l), merge, {l, 0, false});
    base = propagate_base(base, p.curved, merge.alpha);
  }
  return bases;
}

inline std::vector<Expert> layer_domain_experts(const Model& m, std::size_t l) {
  const auto& e = m.layers[l].experts;
  if (m.config.architecture == Architecture::merging) return {e.begin() + 1, e.end()};
  return e;
}

struct MergeOptions {
  std::string protocol;
  double alpha = 1.0;
  double ties_trim = 0.0;
  double dare_p = 0.0;
  std::uint64_t seed = 0;
  std::optional<std::string> scores;
  bool sign_gate = false;
};

/// Merges every layer of a saved model. The output holds the input model
/// plus `layer.<l>.merged.<tensor>`. fisher_diag averages the experts a layer
/// stores (for the dynamic variant, its domain experts); for the `ca` protocol at alpha = 1 the
/// domain experts are replaced by their reparameterized form E'_i and the
/// curvature factors are dropped.
inline CheckpointData merge_checkpoint(const CheckpointData& input, const MergeOptions& opt) {
  const Model m = model_from_checkpoint(input);
  if (m.config.architecture == Architecture::vanilla) {
    throw ContractError("merge needs a merging or dynamic checkpoint, got vanilla");
  }
  const CliMergeProtocol proto = parse_cli_protocol(opt.protocol);
  if (proto.curvature && !m.config.curvature_enabled()) {
    throw ContractError("protocol '" + opt.protocol + "' needs a checkpoint trained with curvature");
  }
  MergeSpec spec;
  spec.protocol = proto.protocol;
  spec.alpha = opt.alpha;
  spec.ca_enabled = proto.curvature;
  spec.ties_trim_fraction = opt.ties_trim;
  spec.dare_drop_prob = opt.dare_p;
  spec.rng_seed = opt.seed;
  spec.ties_sign_gate = opt.sign_gate;
  spec.validate();

  const std::size_t domains = m.config.experts - 1;
  Tensor scores = Tensor::full({1, domains}, 1.0 / static_cast<double>(domains));
  if (opt.scores) {
    const auto v = parse_number_list(*opt.scores);
    if (v.size() != domains) {
      throw ContractError("--scores needs " + std::to_string(domains) + " values, got " +
                          std::to_string(v.size()));
    }
    scores = Tensor({1, domains}, v);
  }

  // Fisher merging averages the experts each layer stores.
  std::vector<std::vector<Expert>> fishers;
  if (proto.protocol == MergeProtocol::fisher_diag) {
    const Dataset data = make_datasets(m.config).first;
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
      fishers.push_back(estimate_layer_fishers(m, l, data, m.config.fisher_labels, opt.seed));
    }
  }

  NoGradGuard guard;
  const auto bases = layer_bases(m);
  std::vector<Expert> merged;
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    if (proto.protocol == MergeProtocol::fisher_diag) {
      merged.push_back(fisher_diag_merge(m.layers[l].experts, fishers[l]));
      continue;
    }
    const ExpertBank bank{bases[l], layer_domain_experts(m, l)};
    const PreparedVectors prepared =
        prepare_domain_vectors(bank, m.curvature_for(l), spec, {l, 0, proto.protocol == MergeProtocol::dare});
    std::array<Tensor, kExpertTensors> rows;
    for (std::size_t s = 0; s < kExpertTensors; ++s) rows[s] = merged_slot_rows(bank.base, prepared, scores, spec, s);
    merged.push_back(expert_from_rows(rows, 0, bank.base));
  }

  Model out_model = model_from_checkpoint(input);
  const bool fold = proto.curvature && proto.protocol == MergeProtocol::domain_specific && opt.alpha == 1.0;
  if (fold) {
    TrainConfig cfg = m.config;
    cfg.merge.ca_enabled = false;
    Model folded = build_model(cfg);
    folded.embedding = m.embedding.clone();
    folded.classifier = m.classifier.defined() ? m.classifier.clone() : Tensor();
    folded.global_base = m.global_base;
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
      const auto taus = domain_vectors(ExpertBank{bases[l], layer_domain_experts(m, l)}).taus;
      const auto stored = reparameterize(bases[l], taus, *m.curvature_for(l));
      folded.layers[l].router.W_g = m.layers[l].router.W_g.clone();
      folded.layers[l].experts.clear();
      if (cfg.architecture == Architecture::merging) folded.layers[l].experts.push_back(bases[l]);
      for (const auto& e : stored) folded.layers[l].experts.push_back(e);
    }
    out_model = std::move(folded);
  }
  CheckpointData out = model_checkpoint(out_model);
  for (std::size_t l = 0; l < merged.size(); ++l)
    for (std::size_t s = 0; s < kExpertTensors; ++s)
      out.tensors.push_back({"layer." + std::to_string(l) + ".merged." + std::string(kExpertTensorNames[s]),
                             merged[l].tensors()[s]->clone()});
  return out;
}

inline void print_param_table(std::ostream& out, const ParamCount& c) {
  out << "params.backbone  " << c.backbone << '\n'
      << "params.experts   " << c.experts << '\n'
      << "params.curvature " << c.curvature << '\n'
      << "params.router    " << c.router << '\n'
      << "params.total     " << c.total() << '\n';
}

inline void print_info(std::ostream& out, const CheckpointData& ckpt) {
  const Model m = model_from_checkpoint(ckpt);
  const auto& c = m.config;
  out << "architecture     " << to_string(c.architecture) << '\n'
      << "task             " << to_string(c.task) << '\n'
      << "vocab            " << c.vocab << '\n'
      << "layers           " << c.layers << '\n'
      << "experts          " << c.experts << '\n'
      << "d_model          " << c.d_model << '\n'
      << "d_ff             " << c.d_ff << '\n'
      << "segment_length   " << c.segment_length << '\n'
      << "protocol         " << to_string(c.merge.protocol) << (c.curvature_enabled() ? " +curvature" : "") << '\n'
      << "alpha            " << c.merge.alpha << '\n'
      << "kronecker_rank   " << c.kronecker_rank << '\n';
  if (c.curvature_enabled()) {
    const Expert& shape_of = m.layers.front().experts.front();
    for (std::size_t s = 0; s < kExpertTensors; ++s) {
      const auto d = DimFactorization::for_shape(shape_of.tensors()[s]->shape());
      out << "factorization." << kExpertTensorNames[s] << "  (" << d.out1 << "x" << d.out2 << ") x ("
          << d.in1 << "x" << d.in2 << ")\n";
    }
  }
  print_param_table(out, count_params(m));
  out << "tensors          " << ckpt.tensors.size() << '\n';
  const auto known = model_tensor_table(m).size();
  if (ckpt.tensors.size() > known) out << "extra_tensors    " << ckpt.tensors.size() - known << '\n';
}

inline int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"camex: curvature-aware expert merging toolkit", "camex"};
  app.require_subcommand(1);

  std::string config_path, out_path, metrics_path, summary_path, ckpt_path, grid, seeds_text;
  std::optional<std::uint64_t> seed_override;
  std::string suite = "all";
  MergeOptions mopt;

  auto* train = app.add_subcommand("train", "Train a model from a config file");
  train->add_option("--config", config_path, "Run config (TOML)")->required();
  train->add_option("--out", out_path, "Output checkpoint")->required();
  train->add_option("--metrics", metrics_path, "Per-step metrics CSV")->required();
  train->add_option("--summary", summary_path, "JSON run summary");
  train->add_option("--seed", seed_override, "Override the config seed");

  auto* merge = app.add_subcommand("merge", "Merge the expert bank of a checkpoint");
  merge->add_option("--ckpt", ckpt_path, "Input checkpoint")->required();
  merge->add_option("--protocol", mopt.protocol,
                    "domain_specific | ca | ties | ties_ca | dare | dare_ca | fisher_diag")->required();
  merge->add_option("--alpha", mopt.alpha, "Merge step size")->required();
  merge->add_option("--ties-trim", mopt.ties_trim, "TIES trim fraction");
  merge->add_option("--dare-p", mopt.dare_p, "DARE drop probability");
  merge->add_option("--seed", mopt.seed, "Seed for DARE masks and Fisher label sampling");
  merge->add_option("--scores", mopt.scores, "Comma-separated scores, one per domain expert");
  merge->add_flag("--sign-gate", mopt.sign_gate, "Multiply the TIES update by the elected sign");
  merge->add_option("--out", out_path, "Output checkpoint")->required();

  auto* verify = app.add_subcommand("verify", "Run built-in correctness suites");
  verify->add_option("--suite", suite, "all | gradcheck | kronecker | causal | two_step (alias eq8) | reparam");

  auto* sweep_cmd = app.add_subcommand("sweep", "Train over a grid and tabulate the final metric");
  sweep_cmd->add_option("--config", config_path, "Base run config (TOML)")->required();
  sweep_cmd->add_option("--grid", grid, "alpha=..., rank=... or experts=...")->required();
  sweep_cmd->add_option("--out", out_path, "Output CSV")->required();
  sweep_cmd->add_option("--seeds", seeds_text, "Comma-separated seeds (default: config seed)");

  auto* info = app.add_subcommand("info", "Describe a checkpoint");
  info->add_option("--ckpt", ckpt_path, "Checkpoint")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (*train) {
      TrainConfig cfg = load_config(config_path);
      if (seed_override) cfg.seed = *seed_override;
      RunResult run = run_training(cfg);
      save_checkpoint(run.model, out_path);
      write_text_file(metrics_path, run.log.to_csv());
      if (!summary_path.empty()) write_text_file(summary_path, run.log.summary().dump(2) + "\n");
      out << run.log.metric_name << " " << run.log.initial_metric << " -> " << run.log.final_metric()
          << " after " << run.log.steps.size() << " steps\n";
      return kExitOk;
    }
    if (*merge) {
      write_checkpoint(merge_checkpoint(read_checkpoint(ckpt_path), mopt), out_path);
      out << "merged with " << mopt.protocol << " (alpha " << mopt.alpha << ") -> " << out_path << '\n';
      return kExitOk;
    }
    if (*verify) {
      std::vector<std::string> names = suite == "all" ? verify_suite_names() : std::vector<std::string>{suite};
      bool all_passed = true;
      for (const auto& name : names) {
        const SuiteResult r = run_verify_suite(name);
        out << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << '\n';
        all_passed = all_passed && r.passed;
      }
      return all_passed ? kExitOk : kExitVerifyFailed;
    }
    if (*sweep_cmd) {
      const TrainConfig cfg = load_config(config_path);
      std::vector<std::uint64_t> seeds;
      if (seeds_text.empty()) {
        seeds.push_back(cfg.seed);
      } else {
        for (double v : parse_number_list(seeds_text)) {
          if (v < 0 || v != static_cast<double>(static_cast<std::uint64_t>(v))) {
            throw ContractError("seeds must be nonnegative integers");
          }
          seeds.push_back(static_cast<std::uint64_t>(v));
        }
      }
      const SweepResult result = sweep(cfg, parse_grid(grid), seeds);
      write_text_file(out_path, result.to_csv());
      out << result.rows.size() << " runs -> " << out_path << '\n';
      return kExitOk;
    }
    if (*info) {
      print_info(out, read_checkpoint(ckpt_path));
      return kExitOk;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace camex
