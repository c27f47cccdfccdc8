// Copyright 2026 The qilin-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "qilin/config.hpp"

#include <cerrno>
#include <cstdlib>
#include <functional>
#include <set>

#include "qilin/checkpoint.hpp"
#include "qilin/errors.hpp"
#include "qilin/io.hpp"

namespace qilin::config {

using nlohmann::json;

namespace {

// Reads one JSON object, recording type errors under their key path and
// warning about keys nobody asked for.
class Section {
 public:
  Section(const json* obj, std::string path, ConfigResult& out)
      : obj_(obj), path_(std::move(path)), out_(out) {
    if (obj_ != nullptr && !obj_->is_object()) {
      error(path_, "must be an object");
      obj_ = nullptr;
    }
  }

  ~Section() {
    if (obj_ == nullptr) return;
    for (const auto& [k, v] : obj_->items()) {
      if (!known_.contains(k)) out_.warnings.push_back(key(k) + ": unknown key ignored");
    }
  }

  Section child(const std::string& k) {
    known_.insert(k);
    const json* c = find(k);
    return Section(c, key(k), out_);
  }

  bool present(const std::string& k) const { return find(k) != nullptr; }

  void number(const std::string& k, double& target,
              const std::function<const char*(double)>& check = {}) {
    known_.insert(k);
    const json* v = find(k);
    if (v == nullptr) return;
    if (!v->is_number()) {
      error(key(k), "must be a number");
      return;
    }
    const double d = v->get<double>();
    if (check) {
      if (const char* msg = check(d)) {
        error(key(k), msg);
        return;
      }
    }
    target = d;
  }

  template <typename Int>
  void integer(const std::string& k, Int& target, std::uint64_t min = 0) {
    known_.insert(k);
    const json* v = find(k);
    if (v == nullptr) return;
    if (!v->is_number_integer() ||
        (!v->is_number_unsigned() && v->get<std::int64_t>() < 0)) {
      error(key(k), "must be a non-negative integer");
      return;
    }
    const std::uint64_t u = v->get<std::uint64_t>();
    if (u < min) {
      error(key(k), "must be >= " + std::to_string(min));
      return;
    }
    target = static_cast<Int>(u);
  }

  void string(const std::string& k, std::string& target) {
    known_.insert(k);
    const json* v = find(k);
    if (v == nullptr) return;
    if (!v->is_string()) {
      error(key(k), "must be a string");
      return;
    }
    target = v->get<std::string>();
  }

  void strings(const std::string& k, std::vector<std::string>& target) {
    known_.insert(k);
    const json* v = find(k);
    if (v == nullptr) return;
    if (!v->is_array()) {
      error(key(k), "must be an array of strings");
      return;
    }
    std::vector<std::string> out;
    for (const json& e : *v) {
      if (!e.is_string()) {
        error(key(k), "must be an array of strings");
        return;
      }
      out.push_back(e.get<std::string>());
    }
    target = std::move(out);
  }

  std::string key(const std::string& k) const {
    return path_.empty() ? k : path_ + "." + k;
  }
  void error(const std::string& where, const std::string& msg) {
    out_.errors.push_back(where + ": " + msg);
  }

 private:
  const json* find(const std::string& k) const {
    if (obj_ == nullptr) return nullptr;
    const auto it = obj_->find(k);
    return it == obj_->end() ? nullptr : &*it;
  }

  const json* obj_;
  std::string path_;
  ConfigResult& out_;
  std::set<std::string> known_;
};

const char* positive(double d) { return d > 0.0 ? nullptr : "must be > 0"; }
const char* non_negative(double d) { return d >= 0.0 ? nullptr : "must be >= 0"; }
const char* unit_interval(double d) {
  return d >= 0.0 && d < 1.0 ? nullptr : "must be in [0, 1)";
}

void read_stage(Section s, trainer::StageConfig& c, bool& seed_given) {
  s.number("learning_rate", c.learning_rate, positive);
  s.number("warmup_ratio", c.warmup_ratio, unit_interval);
  s.number("weight_decay", c.weight_decay, non_negative);
  s.integer("epochs", c.epochs);
  s.integer("batch_size", c.batch_size, 1);
  s.number("grad_clip", c.grad_clip, non_negative);
  if (c.stage == trainer::Stage::kCpt) {
    s.integer("block_size", c.block_size, 2);
  } else {
    s.integer("max_source_length", c.max_source_length, 2);
    s.integer("max_target_length", c.max_target_length, 1);
    Section l = s.child("lora");
    l.integer("rank", c.lora.rank, 1);
    l.number("alpha", c.lora.alpha, positive);
    l.number("dropout", c.lora.dropout, unit_interval);
    l.strings("targets", c.lora.targets);
  }
  if (c.stage == trainer::Stage::kDpo) {
    s.number("beta", c.beta, positive);
  }
  seed_given = s.present("seed");
  s.integer("seed", c.seed);
}

std::filesystem::path resolve(const std::string& p,
                              const std::filesystem::path& base) {
  if (p.empty()) return {};
  const std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

}  // namespace

const trainer::StageConfig& RunConfig::stage(trainer::Stage s) const {
  switch (s) {
    case trainer::Stage::kCpt:
      return cpt;
    case trainer::Stage::kSft:
      return sft;
    case trainer::Stage::kDpo:
      return dpo;
  }
  return cpt;
}

trainer::StageConfig& RunConfig::stage(trainer::Stage s) {
  return const_cast<trainer::StageConfig&>(std::as_const(*this).stage(s));
}

model::ModelConfig default_model_config() {
  model::ModelConfig m = model::ModelConfig::desk(0);
  m.max_seq_len = 512;
  return m;
}

void set_seed(RunConfig& cfg, std::uint64_t seed) {
  cfg.seed = seed;
  cfg.cpt.seed = seed;
  cfg.sft.seed = seed + 1;
  cfg.dpo.seed = seed + 2;
}

bool apply_seed_override(RunConfig& cfg, const char* env_value) {
  if (env_value == nullptr) return true;
  const std::string s(env_value);
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
    return false;
  }
  errno = 0;
  const unsigned long long v = std::strtoull(s.c_str(), nullptr, 10);
  if (errno == ERANGE) return false;
  set_seed(cfg, v);
  return true;
}

ConfigResult parse_config(const json& j, const std::filesystem::path& base_dir) {
  ConfigResult out;
  RunConfig cfg;
  cfg.model = default_model_config();
  {
    Section root(&j, "", out);

    Section paths = root.child("paths");
    std::string data, ckpt, reports, raw;
    for (const char* k : {"data", "checkpoints", "reports"}) {
      if (!paths.present(k)) out.errors.push_back(std::string("paths.") + k + ": missing required key");
    }
    paths.string("data", data);
    paths.string("checkpoints", ckpt);
    paths.string("reports", reports);
    paths.string("raw", raw);
    cfg.paths = {resolve(data, base_dir), resolve(ckpt, base_dir),
                 resolve(reports, base_dir), resolve(raw, base_dir)};
    if (!raw.empty() && !std::filesystem::is_regular_file(cfg.paths.raw)) {
      out.errors.push_back("paths.raw: file not found: " + cfg.paths.raw.string());
    }

    std::uint64_t seed = cfg.seed;
    root.integer("seed", seed);
    set_seed(cfg, seed);

    Section m = root.child("model");
    m.integer("d_model", cfg.model.d_model, 1);
    m.integer("n_layers", cfg.model.n_layers, 1);
    m.integer("n_heads", cfg.model.n_heads, 1);
    m.integer("max_seq_len", cfg.model.max_seq_len, 2);
    m.integer("ffn_mult", cfg.model.ffn_mult, 1);
    m.number("dropout", cfg.model.dropout, unit_interval);
    if (cfg.model.n_heads > 0 && cfg.model.d_model % cfg.model.n_heads != 0) {
      out.errors.push_back("model.n_heads: must divide model.d_model");
    }

    Section stages = root.child("stages");
    bool given = false;
    const std::uint64_t cpt_seed = cfg.cpt.seed, sft_seed = cfg.sft.seed,
                        dpo_seed = cfg.dpo.seed;
    read_stage(stages.child("cpt"), cfg.cpt, given);
    if (!given) cfg.cpt.seed = cpt_seed;
    read_stage(stages.child("sft"), cfg.sft, given);
    if (!given) cfg.sft.seed = sft_seed;
    read_stage(stages.child("dpo"), cfg.dpo, given);
    if (!given) cfg.dpo.seed = dpo_seed;

    Section d = root.child("dedup");
    d.integer("min_span", cfg.dedup.min_span, 2);
    d.integer("min_residual", cfg.dedup.min_residual);
    std::string method = "window_hash";
    d.string("method", method);
    if (method == "window_hash") {
      cfg.dedup.method = data::DedupMethod::kWindowHash;
    } else if (method == "suffix_array") {
      cfg.dedup.method = data::DedupMethod::kSuffixArray;
    } else {
      out.errors.push_back("dedup.method: must be window_hash or suffix_array");
    }

    Section sy = root.child("synth");
    sy.integer("diseases", cfg.synth.diseases, 1);
    sy.integer("seed", cfg.synth.seed);

    Section e = root.child("eval");
    e.integer("few_shot_k", cfg.eval.few_shot_k);
    e.integer("max_new_tokens", cfg.eval.max_new_tokens, 1);
    e.integer("exact_match_items", cfg.eval.exact_match_items);
  }

  // Cross-field invariants, only meaningful once the fields parsed.
  if (out.errors.empty()) {
    for (trainer::Stage s : {trainer::Stage::kCpt, trainer::Stage::kSft,
                             trainer::Stage::kDpo}) {
      const std::string name(trainer::stage_name(s));
      try {
        cfg.stage(s).lora.validate();
      } catch (const Error& ex) {
        if (s != trainer::Stage::kCpt) {
          out.errors.push_back("stages." + name + ".lora: " + ex.what());
        }
      }
    }
    if (cfg.cpt.block_size - 1 > cfg.model.max_seq_len) {
      out.errors.push_back("stages.cpt.block_size: exceeds model.max_seq_len + 1");
    }
    for (trainer::Stage s : {trainer::Stage::kSft, trainer::Stage::kDpo}) {
      const trainer::StageConfig& c = cfg.stage(s);
      if (c.max_source_length + c.max_target_length - 1 > cfg.model.max_seq_len) {
        out.errors.push_back("stages." + std::string(trainer::stage_name(s)) +
                             ".max_target_length: source + target - 1 exceeds "
                             "model.max_seq_len");
      }
    }
  }
  if (out.errors.empty()) {
    out.config = std::move(cfg);
  }
  return out;
}

ConfigResult validate_config(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    ConfigResult out;
    out.errors.push_back("<root>: malformed JSON at byte " + std::to_string(e.byte));
    return out;
  }
  return parse_config(j, path.parent_path());
}

json to_json(const RunConfig& cfg) {
  const auto stage = [](const trainer::StageConfig& c) {
    json j = {{"learning_rate", c.learning_rate}, {"warmup_ratio", c.warmup_ratio},
              {"weight_decay", c.weight_decay},   {"epochs", c.epochs},
              {"batch_size", c.batch_size},       {"grad_clip", c.grad_clip},
              {"seed", c.seed}};
    if (c.stage == trainer::Stage::kCpt) {
      j["block_size"] = c.block_size;
    } else {
      j["max_source_length"] = c.max_source_length;
      j["max_target_length"] = c.max_target_length;
      j["lora"] = trainer::lora_config_to_json(c.lora);
    }
    if (c.stage == trainer::Stage::kDpo) j["beta"] = c.beta;
    return j;
  };
  json model = trainer::model_config_to_json(cfg.model);
  model.erase("vocab_size");
  return {{"paths",
           {{"data", cfg.paths.data.string()},
            {"checkpoints", cfg.paths.checkpoints.string()},
            {"reports", cfg.paths.reports.string()},
            {"raw", cfg.paths.raw.string()}}},
          {"seed", cfg.seed},
          {"model", model},
          {"stages", {{"cpt", stage(cfg.cpt)}, {"sft", stage(cfg.sft)}, {"dpo", stage(cfg.dpo)}}},
          {"dedup",
           {{"min_span", cfg.dedup.min_span},
            {"min_residual", cfg.dedup.min_residual},
            {"method", cfg.dedup.method == data::DedupMethod::kWindowHash
                           ? "window_hash"
                           : "suffix_array"}}},
          {"synth", {{"diseases", cfg.synth.diseases}, {"seed", cfg.synth.seed}}},
          {"eval",
           {{"few_shot_k", cfg.eval.few_shot_k},
            {"max_new_tokens", cfg.eval.max_new_tokens},
            {"exact_match_items", cfg.eval.exact_match_items}}}};
}

}  // namespace qilin::config
