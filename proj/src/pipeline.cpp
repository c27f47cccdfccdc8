// Copyright 2026 The qilin-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "qilin/pipeline.hpp"

#include <cstdio>
#include <sstream>

#include "qilin/checkpoint.hpp"
#include "qilin/errors.hpp"
#include "qilin/io.hpp"
#include "qilin/objectives.hpp"
#include "qilin/synth.hpp"
#include "qilin/utf8.hpp"

namespace qilin::pipeline {

using nlohmann::json;

namespace {

// Strings the prompt templates add on top of corpus text.
const char* const kTemplateText = "问：答：答案：。\n. ABCDEQ:A:";

data::Dataset as_dataset(const std::vector<json>& records, data::Schema schema) {
  data::Dataset d = data::parse_dataset(data::write_jsonl(records), schema);
  if (!d.rejections.empty()) {
    throw InputError("built " + std::string(data::schema_name(schema)) +
                     " record " + std::to_string(d.rejections.front().line) +
                     " rejected: " + d.rejections.front().reason);
  }
  return d;
}

std::vector<json> text_records(const std::vector<std::string>& texts) {
  std::vector<json> out;
  for (const std::string& t : texts) out.push_back({{"text", t}});
  return out;
}

template <typename T>
std::vector<json> records_of(const std::vector<T>& items) {
  std::vector<json> out;
  for (const T& it : items) out.push_back(data::to_json(it));
  return out;
}

template <typename T>
std::vector<json> eval_records(const std::vector<T>& items) {
  std::vector<json> out;
  for (const T& it : items) out.push_back(eval::to_json(it));
  return out;
}

void add_strings(std::vector<std::string>& all, const data::SftExample& ex) {
  all.push_back(ex.instruction);
  all.push_back(ex.input);
  for (const auto& [p, r] : ex.history) {
    all.push_back(p);
    all.push_back(r);
  }
  all.push_back(ex.output);
}

std::string report_tag(const std::filesystem::path& ckpt) {
  return ckpt.stem().string();
}

void write_report(const config::RunConfig& cfg, const std::string& name,
                  const eval::EvalReport& r, const std::string& title,
                  const std::vector<json>& predictions) {
  json j = eval::to_json(r);
  write_file_atomic(cfg.paths.reports / (name + ".json"), j.dump(2) + "\n");
  write_file_atomic(cfg.paths.reports / (name + ".txt"), eval::format_table(r, title));
  write_file_atomic(cfg.paths.reports / (name + "_predictions.jsonl"),
                    data::write_jsonl(predictions));
}

}  // namespace

BuiltData build_from_raw(const synth::RawCorpus& raw,
                         const data::DedupOptions& dedup) {
  BuiltData out;

  std::vector<std::string> docs;
  for (const data::KgEntity& e : raw.kg) {
    docs.push_back(data::linearize_kg(e, data::KgTemplate::kSentence));
  }
  docs.insert(docs.end(), raw.texts.begin(), raw.texts.end());
  for (const data::QaRecord& q : raw.qa) {
    data::validate(q);
    docs.push_back("问：" + trim(q.question) + "\n答：" + trim(q.answer));
  }
  for (const data::DialogueRecord& d : raw.dialogues) {
    docs.push_back(data::flatten_dialogue_text(d));
  }
  data::DedupOutput<std::string> deduped = data::dedup_corpus(docs, dedup);
  out.dedup = deduped.report;

  std::vector<data::SftExample> sft;
  for (const data::QaRecord& q : raw.qa) sft.push_back(data::standardize(q));
  for (const data::ExamRecord& e : raw.exams) sft.push_back(data::standardize(e));
  for (const data::DialogueRecord& d : raw.dialogues) {
    for (const data::SftExample& ex : data::flatten_dialogue_sft(d)) {
      sft.push_back(data::standardize(ex));
    }
  }
  for (const data::SftExample& ex : raw.instructions) {
    sft.push_back(data::standardize(ex));
  }

  const std::vector<std::string>& heldout = raw.heldout_texts;

  std::vector<std::string> all = deduped.kept;
  all.insert(all.end(), heldout.begin(), heldout.end());
  for (const data::SftExample& ex : sft) add_strings(all, ex);
  for (const data::PreferencePair& p : raw.preferences) {
    all.push_back(p.prompt);
    all.push_back(p.preferred);
    all.push_back(p.rejected);
  }
  for (const eval::McqItem& m : raw.eval_mcq) {
    all.push_back(eval::mcq_question_text(m));
    all.push_back(m.reference);
  }
  for (const eval::DialogueItem& d : raw.eval_dialogue) {
    all.push_back(d.prompt);
    all.push_back(d.reference);
  }
  all.push_back(kTemplateText);
  out.vocab = model::Vocab::build(all);

  out.cpt = as_dataset(text_records(deduped.kept), data::Schema::kCpt);
  out.sft = as_dataset(records_of(sft), data::Schema::kSft);
  out.dpo = as_dataset(records_of(raw.preferences), data::Schema::kDpo);
  out.heldout = as_dataset(text_records(heldout), data::Schema::kCpt);
  out.mcq = raw.eval_mcq;
  out.dialogue = raw.eval_dialogue;

  const std::vector<std::pair<std::string, data::DatasetStats>> rows = {
      {"cpt", out.cpt.stats},
      {"sft", out.sft.stats},
      {"dpo", out.dpo.stats},
      {"heldout", out.heldout.stats}};
  out.stats = data::stats_table(rows);
  return out;
}

BuiltData build_data(const config::RunConfig& cfg) {
  synth::RawCorpus raw;
  if (!cfg.paths.raw.empty()) {
    std::vector<json> records;
    std::istringstream in(read_file(cfg.paths.raw));
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (trim(line).empty()) continue;
      try {
        records.push_back(json::parse(line));
      } catch (const json::parse_error& e) {
        throw InputError(cfg.paths.raw.string() + " line " + std::to_string(n) +
                         ": malformed JSON");
      }
    }
    raw = synth::from_raw_records(records);
  } else {
    raw = synth::generate(cfg.synth);
  }
  return build_from_raw(raw, cfg.dedup);
}

void write_data(const BuiltData& d, const std::filesystem::path& dir) {
  write_file_atomic(dir / "cpt.jsonl", data::write_jsonl(text_records(d.cpt.texts)));
  write_file_atomic(dir / "sft.jsonl", data::write_jsonl(records_of(d.sft.sft)));
  write_file_atomic(dir / "dpo.jsonl", data::write_jsonl(records_of(d.dpo.dpo)));
  write_file_atomic(dir / "heldout.jsonl",
                    data::write_jsonl(text_records(d.heldout.texts)));
  write_file_atomic(dir / "eval_mcq.jsonl", data::write_jsonl(eval_records(d.mcq)));
  write_file_atomic(dir / "eval_dialogue.jsonl",
                    data::write_jsonl(eval_records(d.dialogue)));
  d.vocab.save(dir / "vocab.txt");
  write_file_atomic(dir / "stats.txt", d.stats);
  write_file_atomic(dir / "dedup_report.txt", data::format_report(d.dedup));
}

BuiltData load_data(const std::filesystem::path& dir) {
  BuiltData d;
  const auto load = [&](const char* name, data::Schema schema) {
    data::Dataset ds = data::load_dataset(dir / name, schema);
    if (!ds.rejections.empty()) {
      throw InputError((dir / name).string() + " line " +
                       std::to_string(ds.rejections.front().line) + ": " +
                       ds.rejections.front().reason);
    }
    return ds;
  };
  d.cpt = load("cpt.jsonl", data::Schema::kCpt);
  d.sft = load("sft.jsonl", data::Schema::kSft);
  d.dpo = load("dpo.jsonl", data::Schema::kDpo);
  d.heldout = load("heldout.jsonl", data::Schema::kCpt);
  d.mcq = eval::parse_mcq_jsonl(read_file(dir / "eval_mcq.jsonl"));
  d.dialogue = eval::parse_dialogue_jsonl(read_file(dir / "eval_dialogue.jsonl"));
  d.vocab = model::Vocab::load(dir / "vocab.txt");
  return d;
}

std::filesystem::path checkpoint_path(const config::RunConfig& cfg,
                                      trainer::Stage stage) {
  return cfg.paths.checkpoints / (std::string(trainer::stage_name(stage)) + ".ckpt");
}

trainer::ModelState initial_state(const config::RunConfig& cfg,
                                  const model::Vocab& vocab) {
  model::ModelConfig mc = cfg.model;
  mc.vocab_size = vocab.size();
  mc.validate();
  trainer::ModelState s;
  s.params = model::ModelParams::init(mc, cfg.seed);
  s.vocab = vocab;
  s.stage = "init";
  s.seed = cfg.seed;
  return s;
}

data::PromptRenderer renderer_for(const config::RunConfig& cfg,
                                  const model::Vocab& vocab) {
  return data::PromptRenderer(vocab, cfg.sft.max_source_length,
                              cfg.sft.max_target_length);
}

std::string generate_text(const trainer::ModelState& state,
                          const data::PromptRenderer& renderer,
                          const std::string& prompt_text,
                          std::size_t max_new_tokens) {
  const std::vector<int> prompt = renderer.render_prompt(prompt_text);
  const std::vector<int> out = model::generate_greedy(
      state.params, state.adapter ? &*state.adapter : nullptr, prompt,
      max_new_tokens, model::Vocab::kEos);
  return state.vocab.decode(out);
}

std::vector<data::PackedBlock> heldout_blocks(const config::RunConfig& cfg,
                                              const BuiltData& d) {
  std::vector<data::PackedBlock> blocks =
      data::pack_blocks(d.heldout.texts, d.vocab, cfg.cpt.block_size);
  if (blocks.empty()) {
    throw InputError("held-out text is shorter than one block of " +
                     std::to_string(cfg.cpt.block_size) + " tokens");
  }
  return blocks;
}

double heldout_perplexity(const trainer::ModelState& state,
                          const config::RunConfig& cfg, const BuiltData& d) {
  return eval::perplexity(state.params, state.adapter ? &*state.adapter : nullptr,
                          heldout_blocks(cfg, d));
}

double train_exact_match(const trainer::ModelState& state,
                         const config::RunConfig& cfg, const BuiltData& d,
                         std::size_t n) {
  const data::PromptRenderer renderer = renderer_for(cfg, state.vocab);
  const std::size_t count = n == 0 ? d.sft.sft.size() : std::min(n, d.sft.sft.size());
  if (count == 0) throw InputError("no SFT examples to check");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < count; ++i) {
    const data::SftExample& ex = d.sft.sft[i];
    const std::string got =
        generate_text(state, renderer, data::PromptRenderer::prompt_text(ex),
                      cfg.sft.max_target_length);
    if (got == ex.output) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(count);
}

eval::FewShotSpec few_shot_spec(const config::RunConfig& cfg, const BuiltData& d) {
  eval::FewShotSpec spec;
  spec.question_tag = "问：";
  spec.answer_tag = "答：";
  spec.separator = "\n";
  spec.k = cfg.eval.few_shot_k;
  for (const data::SftExample& ex : d.sft.sft) {
    if (spec.exemplars.size() == spec.k) break;
    if (ex.output.rfind("答案：", 0) == 0 && ex.history.empty()) {
      spec.exemplars.emplace_back(ex.instruction, ex.output);
    }
  }
  spec.validate();
  return spec;
}

eval::EvalReport evaluate_mcq(const trainer::ModelState& state,
                              const config::RunConfig& cfg, const BuiltData& d,
                              std::vector<eval::McqItem>* scored) {
  const data::PromptRenderer renderer = renderer_for(cfg, state.vocab);
  const eval::FewShotSpec spec = few_shot_spec(cfg, d);
  const eval::TextGenerator gen = [&](const std::string& prompt) {
    return generate_text(state, renderer, prompt, cfg.eval.max_new_tokens);
  };
  eval::EvalReport r = eval::evaluate_mcq(gen, d.mcq, spec,
                                          cfg.sft.max_source_length - 1, scored);
  r.extras["few_shot_k"] = static_cast<double>(spec.k);
  return r;
}

eval::EvalReport evaluate_dialogue(const trainer::ModelState& state,
                                   const config::RunConfig& cfg,
                                   const BuiltData& d,
                                   std::vector<eval::DialogueItem>* scored) {
  const data::PromptRenderer renderer = renderer_for(cfg, state.vocab);
  const eval::TextGenerator gen = [&](const std::string& prompt) {
    return generate_text(state, renderer, data::PromptRenderer::prompt_text(prompt),
                         cfg.eval.max_new_tokens);
  };
  eval::EvalReport r = eval::evaluate_dialogue(gen, d.dialogue, scored);
  const model::LoraAdapter* adapter = state.adapter ? &*state.adapter : nullptr;
  const data::PromptRenderer pref_renderer(state.vocab, cfg.dpo.max_source_length,
                                           cfg.dpo.max_target_length);
  const objectives::PreferenceStats ps =
      objectives::preference_stats(state.params, adapter, d.dpo.dpo, pref_renderer);
  r.extras["preferred_win_rate"] = ps.win_rate;
  r.extras["mean_margin"] = ps.mean_margin;
  r.extras["perplexity"] = heldout_perplexity(state, cfg, d);
  r.extras["train_exact_match"] =
      train_exact_match(state, cfg, d, cfg.eval.exact_match_items);
  return r;
}

void run_data_build(const config::RunConfig& cfg, const Logger& log) {
  const BuiltData d = build_data(cfg);
  write_data(d, cfg.paths.data);
  if (log) {
    log(d.stats);
    log("dedup removed " + std::to_string(d.dedup.removed_tokens) + " of " +
        std::to_string(d.dedup.input_tokens) + " tokens, dropped " +
        std::to_string(d.dedup.dropped_docs.size()) + " docs");
    log("vocab " + std::to_string(d.vocab.size()) + " symbols -> " +
        cfg.paths.data.string());
  }
}

data::DedupReport run_data_dedup(const std::filesystem::path& input,
                                 const std::filesystem::path& output,
                                 const data::DedupOptions& options) {
  data::Dataset ds = data::load_dataset(input, data::Schema::kCpt);
  if (!ds.rejections.empty()) {
    throw InputError(input.string() + " line " +
                     std::to_string(ds.rejections.front().line) + ": " +
                     ds.rejections.front().reason);
  }
  data::DedupOutput<std::string> out = data::dedup_corpus(ds.texts, options);
  write_file_atomic(output, data::write_jsonl(text_records(out.kept)));
  std::filesystem::path report = output;
  report += ".report.txt";
  write_file_atomic(report, data::format_report(out.report));
  return out.report;
}

trainer::StageResult run_train(const config::RunConfig& cfg, trainer::Stage stage,
                               const std::optional<std::filesystem::path>& init,
                               const Logger& log) {
  const BuiltData d = load_data(cfg.paths.data);
  trainer::ModelState start;
  if (init) {
    start = trainer::load_checkpoint(*init);
  } else if (stage == trainer::Stage::kCpt) {
    start = initial_state(cfg, d.vocab);
  } else {
    const trainer::Stage prev =
        stage == trainer::Stage::kSft ? trainer::Stage::kCpt : trainer::Stage::kSft;
    start = trainer::load_checkpoint(checkpoint_path(cfg, prev));
  }
  if (!(start.vocab == d.vocab)) {
    throw ConfigError("checkpoint vocabulary does not match " +
                      (cfg.paths.data / "vocab.txt").string());
  }
  const data::Dataset& ds = stage == trainer::Stage::kCpt   ? d.cpt
                            : stage == trainer::Stage::kSft ? d.sft
                                                            : d.dpo;
  std::size_t every = 1;
  trainer::StepCallback cb;
  if (log) {
    cb = [&](const trainer::MetricsRow& row) {
      if (row.step == 1 || row.step % every == 0) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "%s step %zu lr %.3g loss %.5f",
                      row.stage.c_str(), row.step, row.lr, row.loss);
        log(buf);
      }
    };
    every = 50;
  }
  trainer::StageResult result = trainer::run_stage(start, cfg.stage(stage), ds, cb);
  const std::string name(trainer::stage_name(stage));
  trainer::save_checkpoint(result.state, checkpoint_path(cfg, stage));
  write_file_atomic(cfg.paths.reports / (name + "_metrics.csv"),
                    trainer::metrics_csv(result.log));
  if (log) {
    log(name + ": " + std::to_string(result.log.size()) + " steps -> " +
        checkpoint_path(cfg, stage).string());
  }
  return result;
}

eval::EvalReport run_eval(const config::RunConfig& cfg, bool mcq,
                          const std::optional<std::filesystem::path>& checkpoint,
                          const Logger& log) {
  const BuiltData d = load_data(cfg.paths.data);
  const std::filesystem::path ckpt =
      checkpoint ? *checkpoint : checkpoint_path(cfg, trainer::Stage::kDpo);
  const trainer::ModelState state = trainer::load_checkpoint(ckpt);
  if (!(state.vocab == d.vocab)) {
    throw ConfigError("checkpoint vocabulary does not match the data directory");
  }
  const std::string tag = report_tag(ckpt);
  eval::EvalReport r;
  std::vector<json> preds;
  if (mcq) {
    std::vector<eval::McqItem> scored;
    r = evaluate_mcq(state, cfg, d, &scored);
    preds = eval_records(scored);
    write_report(cfg, tag + "_mcq", r, tag + " mcq", preds);
  } else {
    std::vector<eval::DialogueItem> scored;
    r = evaluate_dialogue(state, cfg, d, &scored);
    preds = eval_records(scored);
    write_report(cfg, tag + "_dialogue", r, tag + " dialogue", preds);
  }
  if (log) log(eval::format_table(r, tag + (mcq ? " mcq" : " dialogue")));
  return r;
}

}  // namespace qilin::pipeline
