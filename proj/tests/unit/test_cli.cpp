// Copyright 2026 The qilin-desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Runs the built binary as a subprocess.

#include <catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "qilin/io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int run(const std::string& args, const fs::path& cwd) {
  const std::string cmd = "cd '" + cwd.string() + "' && '" + QILIN_CLI_PATH + "' " + args +
                          " >out.txt 2>err.txt";
  const int status = std::system(cmd.c_str());
  if (status == -1 || !WIFEXITED(status)) return -1;
  return WEXITSTATUS(status);
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("qilin_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

json small_config() {
  json j;
  j["paths"] = {{"data", "data"}, {"checkpoints", "ckpt"}, {"reports", "reports"}};
  j["seed"] = 3;
  j["model"] = {{"d_model", 8}, {"n_layers", 1}, {"n_heads", 2}, {"max_seq_len", 96},
                {"ffn_mult", 2}};
  j["synth"] = {{"diseases", 2}, {"seed", 1}};
  j["stages"]["cpt"] = {{"epochs", 1}, {"block_size", 48}, {"learning_rate", 1e-3}};
  j["stages"]["sft"] = {{"epochs", 1},
                        {"max_source_length", 64},
                        {"max_target_length", 24},
                        {"lora", {{"rank", 2}}}};
  j["stages"]["dpo"] = {{"epochs", 1},
                        {"max_source_length", 64},
                        {"max_target_length", 24},
                        {"lora", {{"rank", 2}}}};
  j["eval"] = {{"max_new_tokens", 4}, {"few_shot_k", 0}};
  return j;
}

}  // namespace

TEST_CASE("help and usage errors", "[cli]") {
  const fs::path d = fresh_dir("usage");
  CHECK(run("--help", d) == 0);
  CHECK(qilin::read_file(d / "out.txt").find("train") != std::string::npos);
  CHECK(run("train --help", d) == 0);
  CHECK(run("", d) == 2);
  CHECK(run("frobnicate", d) == 2);
  CHECK(run("train cpt --bogus-flag", d) == 2);
  CHECK(run("train cpt", d) == 2);
  fs::remove_all(d);
}

TEST_CASE("invalid config exits 1 and writes nothing", "[cli]") {
  const fs::path d = fresh_dir("badcfg");
  json j = small_config();
  j["stages"]["cpt"]["learning_rate"] = -1;
  qilin::write_file_atomic(d / "c.json", j.dump());
  CHECK(run("data build -c c.json", d) == 1);
  CHECK(qilin::read_file(d / "err.txt").find("stages.cpt.learning_rate") != std::string::npos);
  CHECK_FALSE(fs::exists(d / "data"));
  CHECK(run("train cpt -c missing.json", d) == 1);
  fs::remove_all(d);
}

TEST_CASE("build, train twice, generate, eval", "[cli]") {
  const fs::path d = fresh_dir("train");
  qilin::write_file_atomic(d / "c.json", small_config().dump());
  REQUIRE(run("data build -c c.json", d) == 0);
  for (const char* f : {"cpt.jsonl", "sft.jsonl", "dpo.jsonl", "eval_mcq.jsonl",
                        "eval_dialogue.jsonl", "vocab.txt"}) {
    CHECK(fs::exists(d / "data" / f));
  }

  REQUIRE(run("train cpt -c c.json", d) == 0);
  const std::string first = qilin::read_file(d / "ckpt" / "cpt.ckpt");
  REQUIRE(run("train cpt -c c.json", d) == 0);
  const std::string second = qilin::read_file(d / "ckpt" / "cpt.ckpt");
  CHECK(first == second);
  CHECK(fs::exists(d / "reports" / "cpt_metrics.csv"));

  REQUIRE(run("train sft -c c.json", d) == 0);
  REQUIRE(run("train dpo -c c.json", d) == 0);
  // A prompt drawn from the training set only uses known characters.
  const std::string first_line = qilin::read_file(d / "data" / "sft.jsonl").substr(0, 4096);
  const std::string instruction =
      json::parse(first_line.substr(0, first_line.find('\n')))["instruction"].get<std::string>();
  qilin::write_file_atomic(d / "prompt.txt", instruction);
  CHECK(run("generate -c c.json -p \"$(cat prompt.txt)\" --max-new 3", d) == 0);
  CHECK(run("generate -c c.json -p x --checkpoint nope.ckpt", d) == 1);
  CHECK(run("generate -c c.json -p 😀", d) == 1);
  CHECK(qilin::read_file(d / "err.txt").find("unknown character") != std::string::npos);
  CHECK(run("eval mcq -c c.json", d) == 0);
  CHECK(fs::exists(d / "reports"));

  // A damaged checkpoint is refused.
  std::string bad = first;
  bad[bad.size() / 2] = static_cast<char>(bad[bad.size() / 2] ^ 0x10);
  qilin::write_file_atomic(d / "bad.ckpt", bad);
  CHECK(run("generate -c c.json -p x --checkpoint bad.ckpt", d) == 1);
  CHECK(qilin::read_file(d / "err.txt").find("offset") != std::string::npos);
  fs::remove_all(d);
}

TEST_CASE("dedup subcommand", "[cli]") {
  const fs::path d = fresh_dir("dedup");
  const std::string rep = "0123456789abcdefghijklmnopqrstuvwxyz";
  json a = {{"text", "head " + rep + " tail"}};
  json b = {{"text", "other " + rep + " end"}};
  qilin::write_file_atomic(d / "in.jsonl", a.dump() + "\n" + b.dump() + "\n");
  REQUIRE(run("data dedup -i in.jsonl -o out.jsonl --min-span 20 --min-residual 1", d) == 0);
  const std::string out = qilin::read_file(d / "out.jsonl");
  CHECK(out.find(rep) != std::string::npos);
  // The shared span includes the spaces around it.
  CHECK(out.find("\"otherend\"") != std::string::npos);
  CHECK(run("data dedup -i in.jsonl -o o2.jsonl --method nope", d) == 2);
  CHECK(run("data dedup -i absent.jsonl -o o3.jsonl", d) == 1);
  fs::remove_all(d);
}
