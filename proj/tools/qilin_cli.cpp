// Copyright 2026 The qilin-desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// qilin: data building, staged training, evaluation and generation.
// Exit codes: 0 success, 1 runtime or config failure, 2 usage error.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "qilin/checkpoint.hpp"
#include "qilin/config.hpp"
#include "qilin/errors.hpp"
#include "qilin/pipeline.hpp"

namespace {

using qilin::config::RunConfig;

std::optional<RunConfig> load_config(const std::string& path) {
  qilin::config::ConfigResult r = qilin::config::validate_config(path);
  for (const std::string& w : r.warnings) std::cerr << "warning: " << w << "\n";
  if (!r.errors.empty()) {
    for (const std::string& e : r.errors) std::cerr << "config error: " << e << "\n";
    return std::nullopt;
  }
  if (!qilin::config::apply_seed_override(*r.config, std::getenv("QILIN_SEED"))) {
    std::cerr << "config error: QILIN_SEED must be a non-negative integer\n";
    return std::nullopt;
  }
  return r.config;
}

void log_line(const std::string& s) {
  std::cerr << s;
  if (s.empty() || s.back() != '\n') std::cerr << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"qilin: tiny medical LM pipeline (data, cpt, sft, dpo, eval)"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::string> init_path;
  std::optional<std::string> ckpt_path;

  CLI::App* data = app.add_subcommand("data", "Build or deduplicate corpora");
  data->require_subcommand(1);
  CLI::App* build = data->add_subcommand("build", "Generate and write stage datasets");
  build->add_option("-c,--config", config_path, "Run config (JSON)")->required();
  CLI::App* dedup = data->add_subcommand("dedup", "Exact-substring dedup of a cpt JSONL file");
  std::string dedup_in, dedup_out;
  std::size_t min_span = 50, min_residual = 10;
  std::string method = "window_hash";
  dedup->add_option("-i,--input", dedup_in, "Input cpt JSONL")->required();
  dedup->add_option("-o,--output", dedup_out, "Output cpt JSONL")->required();
  dedup->add_option("--min-span", min_span, "Minimum duplicate span in characters");
  dedup->add_option("--min-residual", min_residual, "Drop docs shorter than this after removal");
  dedup->add_option("--method", method, "window_hash or suffix_array")
      ->check(CLI::IsMember({"window_hash", "suffix_array"}));

  CLI::App* train = app.add_subcommand("train", "Run one training stage");
  train->require_subcommand(1);
  for (const char* stage : {"cpt", "sft", "dpo"}) {
    CLI::App* s = train->add_subcommand(stage, std::string("Train the ") + stage + " stage");
    s->add_option("-c,--config", config_path, "Run config (JSON)")->required();
    s->add_option("--init", init_path, "Initial checkpoint (default: previous stage)");
  }

  CLI::App* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  ev->require_subcommand(1);
  for (const char* kind : {"mcq", "dialogue"}) {
    CLI::App* s = ev->add_subcommand(kind, std::string("Evaluate on the held-out ") + kind + " set");
    s->add_option("-c,--config", config_path, "Run config (JSON)")->required();
    s->add_option("--checkpoint", ckpt_path, "Checkpoint (default: dpo)");
  }

  CLI::App* gen = app.add_subcommand("generate", "Greedy completion of one prompt");
  std::string prompt;
  std::size_t max_new = 64;
  gen->add_option("-c,--config", config_path, "Run config (JSON)")->required();
  gen->add_option("--checkpoint", ckpt_path, "Checkpoint (default: dpo)");
  gen->add_option("-p,--prompt", prompt, "Instruction text")->required();
  gen->add_option("--max-new", max_new, "Maximum new tokens");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    std::cout << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n\n" << app.help("", CLI::AppFormatMode::All);
    return 2;
  }

  try {
    if (*dedup) {
      qilin::data::DedupOptions opts;
      opts.min_span = min_span;
      opts.min_residual = min_residual;
      opts.method = method == "suffix_array" ? qilin::data::DedupMethod::kSuffixArray
                                             : qilin::data::DedupMethod::kWindowHash;
      const qilin::data::DedupReport r = qilin::pipeline::run_data_dedup(dedup_in, dedup_out, opts);
      std::cerr << "removed " << r.removed_tokens << " of " << r.input_tokens
                << " tokens, dropped " << r.dropped_docs.size() << " docs\n";
      return 0;
    }
    const std::optional<RunConfig> cfg = load_config(config_path);
    if (!cfg) return 1;
    if (*build) {
      qilin::pipeline::run_data_build(*cfg, log_line);
      return 0;
    }
    for (CLI::App* s : train->get_subcommands()) {
      const auto stage = qilin::trainer::parse_stage(s->get_name());
      std::optional<std::filesystem::path> init;
      if (init_path) init = *init_path;
      qilin::pipeline::run_train(*cfg, *stage, init, log_line);
      return 0;
    }
    for (CLI::App* s : ev->get_subcommands()) {
      std::optional<std::filesystem::path> ck;
      if (ckpt_path) ck = *ckpt_path;
      qilin::pipeline::run_eval(*cfg, s->get_name() == "mcq", ck, log_line);
      return 0;
    }
    if (*gen) {
      const std::filesystem::path ck =
          ckpt_path ? std::filesystem::path(*ckpt_path)
                    : qilin::pipeline::checkpoint_path(*cfg, qilin::trainer::Stage::kDpo);
      const qilin::trainer::ModelState state = qilin::trainer::load_checkpoint(ck);
      const qilin::data::PromptRenderer renderer =
          qilin::pipeline::renderer_for(*cfg, state.vocab);
      std::cout << qilin::pipeline::generate_text(
                       state, renderer, qilin::data::PromptRenderer::prompt_text(prompt), max_new)
                << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::cerr << app.help();
  return 2;
}
