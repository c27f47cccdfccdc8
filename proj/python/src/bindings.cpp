// Copyright 2026 The qilin-desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Thin Python surface over the core library: vocab, metrics, dedup, config
// and the pipeline subcommands. JSON values cross as str and are decoded on
// the Python side.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <optional>
#include <string>
#include <vector>

#include "qilin/checkpoint.hpp"
#include "qilin/config.hpp"
#include "qilin/dedup.hpp"
#include "qilin/errors.hpp"
#include "qilin/evalkit.hpp"
#include "qilin/pipeline.hpp"
#include "qilin/render.hpp"
#include "qilin/trainer.hpp"
#include "qilin/vocab.hpp"

namespace py = pybind11;
using namespace qilin;

namespace {

config::RunConfig load(const std::string& path) {
  const config::ConfigResult r = config::validate_config(path);
  if (!r.config) {
    std::string msg;
    for (const auto& e : r.errors) msg += (msg.empty() ? "" : "\n") + e;
    throw ConfigError(msg);
  }
  config::RunConfig cfg = *r.config;
  config::apply_seed_override(cfg, std::getenv("QILIN_SEED"));
  return cfg;
}

trainer::Stage stage_of(const std::string& name) {
  const auto s = trainer::parse_stage(name);
  if (!s) throw ConfigError("unknown stage '" + name + "'");
  return *s;
}

std::optional<std::filesystem::path> opt_path(const std::optional<std::string>& p) {
  if (!p) return std::nullopt;
  return std::filesystem::path(*p);
}

data::DedupMethod method_of(const std::string& m) {
  if (m == "window_hash") return data::DedupMethod::kWindowHash;
  if (m == "suffix_array") return data::DedupMethod::kSuffixArray;
  throw ConfigError("unknown dedup method '" + m + "'");
}

}  // namespace

PYBIND11_MODULE(_qilin, m) {
  m.doc() = "qilin core bindings";

  auto base = py::register_exception<Error>(m, "QilinError", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<InputError>(m, "InputError", base.ptr());
  py::register_exception<ValidationError>(m, "ValidationError", base.ptr());
  py::register_exception<LengthError>(m, "LengthError", base.ptr());
  py::register_exception<IntegrityError>(m, "IntegrityError", base.ptr());
  py::register_exception<EvaluationError>(m, "EvaluationError", base.ptr());
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
  py::register_exception<IndexError>(m, "IndexError", base.ptr());
  py::register_exception<ContractError>(m, "ContractError", base.ptr());

  py::class_<model::Vocab>(m, "Vocab")
      .def_static("build", [](const std::vector<std::string>& corpus) {
        return model::Vocab::build(corpus);
      })
      .def_static("parse", [](const std::string& text) { return model::Vocab::parse(text); })
      .def("__len__", &model::Vocab::size)
      .def("encode", &model::Vocab::encode)
      .def("decode", [](const model::Vocab& v, const std::vector<int>& ids) { return v.decode(ids); })
      .def("serialize", &model::Vocab::serialize)
      .def("__eq__", &model::Vocab::operator==);

  m.def("bleu", [](const std::string& c, const std::string& r, std::size_t n) {
    return eval::bleu_n(std::string_view(c), std::string_view(r), n);
  }, py::arg("candidate"), py::arg("reference"), py::arg("n") = 1);
  m.def("rouge_n", [](const std::string& c, const std::string& r, std::size_t n) {
    return eval::rouge_n(std::string_view(c), std::string_view(r), n);
  }, py::arg("candidate"), py::arg("reference"), py::arg("n") = 1);
  m.def("rouge_l", [](const std::string& c, const std::string& r) {
    return eval::rouge_l(std::string_view(c), std::string_view(r));
  }, py::arg("candidate"), py::arg("reference"));
  m.def("accuracy", [](const std::vector<std::string>& g, const std::vector<std::string>& p) {
    return eval::accuracy(std::span<const eval::LetterSet>(g), std::span<const eval::LetterSet>(p));
  }, py::arg("gold"), py::arg("pred"));
  m.def("weighted_f1", [](const std::vector<std::string>& g, const std::vector<std::string>& p) {
    return eval::weighted_f1(std::span<const eval::LetterSet>(g),
                             std::span<const eval::LetterSet>(p));
  }, py::arg("gold"), py::arg("pred"));
  m.def("extract_choice", [](const std::string& s, const std::string& letters) {
    return eval::extract_choice(s, letters);
  }, py::arg("generated"), py::arg("letters") = "ABCDE");

  m.def("dedup", [](const std::vector<std::string>& docs, std::size_t min_span,
                    std::size_t min_residual, const std::string& method) {
    data::DedupOptions opts;
    opts.min_span = min_span;
    opts.min_residual = min_residual;
    opts.method = method_of(method);
    const auto out = data::dedup_corpus(docs, opts);
    std::vector<py::tuple> spans;
    for (const auto& s : out.report.spans) spans.push_back(py::make_tuple(s.doc, s.begin, s.end));
    py::dict report;
    report["spans"] = spans;
    report["dropped_docs"] = out.report.dropped_docs;
    report["input_tokens"] = out.report.input_tokens;
    report["removed_tokens"] = out.report.removed_tokens;
    return py::make_tuple(out.kept, report);
  }, py::arg("docs"), py::arg("min_span") = 50, py::arg("min_residual") = 10,
     py::arg("method") = "window_hash");

  m.def("validate_config", [](const std::string& path) {
    const config::ConfigResult r = config::validate_config(path);
    py::dict out;
    out["errors"] = r.errors;
    out["warnings"] = r.warnings;
    out["config"] = r.config ? py::object(py::str(config::to_json(*r.config).dump())) : py::none();
    return out;
  }, py::arg("path"));

  m.def("data_build", [](const std::string& config_path) {
    const config::RunConfig cfg = load(config_path);
    py::gil_scoped_release nogil;
    pipeline::run_data_build(cfg, nullptr);
  }, py::arg("config"));

  m.def("train", [](const std::string& config_path, const std::string& stage,
                    const std::optional<std::string>& init) {
    const config::RunConfig cfg = load(config_path);
    trainer::StageResult r;
    {
      py::gil_scoped_release nogil;
      r = pipeline::run_train(cfg, stage_of(stage), opt_path(init), nullptr);
    }
    std::vector<double> losses;
    for (const auto& row : r.log) losses.push_back(row.loss);
    return losses;
  }, py::arg("config"), py::arg("stage"), py::arg("init") = py::none());

  m.def("evaluate", [](const std::string& config_path, const std::string& kind,
                       const std::optional<std::string>& checkpoint) {
    if (kind != "mcq" && kind != "dialogue") throw ConfigError("kind must be mcq or dialogue");
    const config::RunConfig cfg = load(config_path);
    eval::EvalReport r;
    {
      py::gil_scoped_release nogil;
      r = pipeline::run_eval(cfg, kind == "mcq", opt_path(checkpoint), nullptr);
    }
    return eval::to_json(r).dump();
  }, py::arg("config"), py::arg("kind"), py::arg("checkpoint") = py::none());

  m.def("generate", [](const std::string& config_path, const std::string& prompt,
                       const std::optional<std::string>& checkpoint, std::size_t max_new) {
    const config::RunConfig cfg = load(config_path);
    const auto path = checkpoint ? std::filesystem::path(*checkpoint)
                                 : pipeline::checkpoint_path(cfg, trainer::Stage::kDpo);
    const trainer::ModelState state = trainer::load_checkpoint(path);
    const data::PromptRenderer renderer = pipeline::renderer_for(cfg, state.vocab);
    return pipeline::generate_text(state, renderer, data::PromptRenderer::prompt_text(prompt),
                                   max_new);
  }, py::arg("config"), py::arg("prompt"), py::arg("checkpoint") = py::none(),
     py::arg("max_new") = 48);

  m.def("checkpoint_info", [](const std::string& path) {
    const trainer::ModelState s = trainer::load_checkpoint(path);
    py::dict out;
    out["stage"] = s.stage;
    out["step"] = s.step;
    out["seed"] = s.seed;
    out["vocab_size"] = s.vocab.size();
    out["parameters"] = s.params.parameter_count();
    out["has_adapter"] = s.adapter.has_value();
    out["config"] = trainer::model_config_to_json(s.params.config).dump();
    return out;
  }, py::arg("path"));
}
