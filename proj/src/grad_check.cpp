// Copyright 2026 The qilin-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "qilin/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "qilin/errors.hpp"
#include "qilin/random.hpp"

namespace qilin::autograd {
namespace {

double evaluate(const LossFn& fn) {
  Graph g;
  const double value = fn(g).value().item();
  if (!std::isfinite(value)) {
    throw EvaluationError("grad_check: loss is not finite (" +
                          std::to_string(value) + ")");
  }
  return value;
}

}  // namespace

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  if (denom == 0.0) {
    return 0.0;
  }
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport grad_check(const LossFn& fn, const std::vector<Tensor*>& params,
                           const GradCheckOptions& options) {
  for (Tensor* t : params) {
    if (!t->requires_grad()) {
      throw ContractError("grad_check: parameter without requires_grad");
    }
    t->zero_grad();
  }
  {
    Graph g;
    const Var loss = fn(g);
    if (!std::isfinite(loss.value().item())) {
      throw EvaluationError("grad_check: loss is not finite");
    }
    g.backward(loss);
  }

  std::vector<std::size_t> offsets(params.size() + 1, 0);
  for (std::size_t i = 0; i < params.size(); ++i) {
    offsets[i + 1] = offsets[i] + params[i]->numel();
  }
  const std::size_t total = offsets.back();
  std::vector<std::size_t> coords(total);
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  if (options.samples != 0 && options.samples < total) {
    Rng rng(options.seed);
    // Partial Fisher-Yates: the first `samples` entries are a uniform draw.
    for (std::size_t i = 0; i < options.samples; ++i) {
      std::swap(coords[i], coords[i + rng.below(total - i)]);
    }
    coords.resize(options.samples);
  }

  GradCheckReport report;
  for (std::size_t flat : coords) {
    const auto it = std::upper_bound(offsets.begin(), offsets.end(), flat);
    const std::size_t ti = static_cast<std::size_t>(it - offsets.begin()) - 1;
    const std::size_t idx = flat - offsets[ti];
    Tensor& t = *params[ti];
    const double saved = t[idx];
    t[idx] = saved + options.step;
    const double plus = evaluate(fn);
    t[idx] = saved - options.step;
    const double minus = evaluate(fn);
    t[idx] = saved;

    const double numeric = (plus - minus) / (2.0 * options.step);
    const double analytic = t.grad()[idx];
    const double err =
        relative_error(analytic, numeric, options.denominator_floor);
    ++report.checked;
    report.max_rel_err = std::max(report.max_rel_err, err);
    if (!(err < options.tolerance)) {
      report.failures.push_back({ti, idx, analytic, numeric, err});
    }
  }
  return report;
}

}  // namespace qilin::autograd
