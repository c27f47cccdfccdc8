// Copyright 2026 The qilin-desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "qilin/autograd.hpp"

namespace qilin::autograd {

struct GradCheckOptions {
  double step = 1e-6;
  double tolerance = 1e-5;
  // Number of coordinates sampled without replacement; 0 checks all.
  std::size_t samples = 200;
  std::uint64_t seed = 0;
  // Lower bound on the relative-error denominator. Coordinates whose
  // analytic and numeric derivatives are both below it are compared in
  // absolute terms against tolerance * floor.
  double denominator_floor = 1e-8;
};

struct GradCheckFailure {
  std::size_t tensor = 0;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
};

struct GradCheckReport {
  std::size_t checked = 0;
  double max_rel_err = 0.0;
  std::vector<GradCheckFailure> failures;

  std::size_t failure_count() const { return failures.size(); }
  double pass_fraction() const {
    return checked == 0 ? 1.0
                        : 1.0 - static_cast<double>(failures.size()) /
                                    static_cast<double>(checked);
  }
};

// A loss builder: records a scalar into the graph, binding whichever of the
// checked tensors it uses through Graph::param.
using LossFn = std::function<Var(Graph&)>;

double relative_error(double analytic, double numeric, double floor);

// Compares backward() gradients against central differences
// (f(x+h) - f(x-h)) / 2h on sampled coordinates of params. Every tensor in
// params must have requires_grad set. Throws EvaluationError when the loss
// is not finite.
GradCheckReport grad_check(const LossFn& fn, const std::vector<Tensor*>& params,
                           const GradCheckOptions& options = {});

}  // namespace qilin::autograd
