// Copyright 2026 The qilin-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include <cmath>
#include <string>
#include <vector>

#include "qilin/autograd.hpp"
#include "qilin/errors.hpp"
#include "qilin/grad_check.hpp"
#include "qilin/random.hpp"

using namespace qilin;
using namespace qilin::autograd;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

Tensor random_matrix(Rng& rng, std::size_t r, std::size_t c) {
  std::vector<double> v(r * c);
  for (double& x : v) x = rng.normal();
  Tensor t = Tensor::matrix(r, c, v);
  t.set_requires_grad(true);
  return t;
}

}  // namespace

TEST_CASE("tensor shape invariants", "[tensor]") {
  Tensor t({2, 3});
  CHECK(t.numel() == 6);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK_FALSE(t.has_grad());
  t.zero_grad();
  CHECK(t.grad().size() == 6);
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), DimensionError);
  CHECK(Tensor::scalar(4.0).item() == 4.0);
}

TEST_CASE("matmul identity and dot", "[tensor][matmul]") {
  const Tensor eye = Tensor::matrix(2, 2, {1, 0, 0, 1});
  const Tensor b = Tensor::matrix(2, 2, {5, 6, 7, 8});
  CHECK(matmul(eye, b).values() == std::vector<double>{5, 6, 7, 8});

  const Tensor row = Tensor::matrix(1, 2, {1, 2});
  const Tensor col = Tensor::matrix(2, 1, {3, 4});
  const Tensor out = matmul(row, col);
  CHECK(out.shape() == Shape{1, 1});
  CHECK(out[0] == 11.0);
}

TEST_CASE("matmul shape mismatch names both shapes", "[tensor][matmul]") {
  const Tensor a = Tensor::matrix(2, 3, std::vector<double>(6, 1.0));
  const Tensor b = Tensor::matrix(2, 3, std::vector<double>(6, 1.0));
  CHECK_THROWS_MATCHES(matmul(a, b), DimensionError,
                       Catch::Matchers::MessageMatches(
                           ContainsSubstring("2x3") || ContainsSubstring("[2, 3]") ||
                           ContainsSubstring("(2, 3)")));
}

TEST_CASE("matmul gradient against central differences", "[tensor][matmul]") {
  Rng rng(11);
  Tensor a = random_matrix(rng, 3, 4);
  Tensor b = random_matrix(rng, 4, 2);
  std::vector<double> w(6);
  for (double& x : w) x = rng.normal();
  const LossFn fn = [&](Graph& g) {
    return weighted_sum(matmul(g.param(a), g.param(b)), w);
  };
  GradCheckOptions opts;
  opts.samples = 0;
  opts.tolerance = 1e-8;
  const GradCheckReport r = grad_check(fn, {&a, &b}, opts);
  CHECK(r.checked == 20);
  CHECK(r.failure_count() == 0);
  CHECK(r.max_rel_err < 1e-8);

  // Analytic rule: dL/da = G b^T, dL/db = a^T G with G = w reshaped.
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t k = 0; k < 4; ++k) {
      double expect = 0.0;
      for (std::size_t j = 0; j < 2; ++j) expect += w[i * 2 + j] * b.at(k, j);
      CHECK_THAT(a.grad()[i * 4 + k], WithinAbs(expect, 1e-12));
    }
  }
  for (std::size_t k = 0; k < 4; ++k) {
    for (std::size_t j = 0; j < 2; ++j) {
      double expect = 0.0;
      for (std::size_t i = 0; i < 3; ++i) expect += a.at(i, k) * w[i * 2 + j];
      CHECK_THAT(b.grad()[k * 2 + j], WithinAbs(expect, 1e-12));
    }
  }
}

TEST_CASE("softmax rows", "[tensor][softmax]") {
  const Tensor s = softmax_rows(Tensor::matrix(3, 3, {0, 0, 0, 1000, 0, 0, 1, 2, 3}));
  for (std::size_t j = 0; j < 3; ++j) CHECK_THAT(s.at(0, j), WithinAbs(1.0 / 3.0, 1e-15));
  CHECK(s.all_finite());
  CHECK_THAT(s.at(1, 0), WithinAbs(1.0, 1e-15));
  CHECK(s.at(1, 1) < 1e-300);
  CHECK_THAT(s.at(2, 0), WithinAbs(0.09003057, 1e-8));
  CHECK_THAT(s.at(2, 1), WithinAbs(0.24472847, 1e-8));
  CHECK_THAT(s.at(2, 2), WithinAbs(0.66524096, 1e-8));
  // Extra precision for [1,2,3]: e^k / (e + e^2 + e^3).
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  CHECK_THAT(s.at(2, 0), WithinRel(std::exp(1.0) / z, 1e-14));
}

TEST_CASE("softmax rows sum to one on random input", "[tensor][softmax]") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> v(4 * 7);
    for (double& x : v) x = 30.0 * rng.normal();
    const Tensor s = softmax_rows(Tensor::matrix(4, 7, v));
    for (std::size_t r = 0; r < 4; ++r) {
      double sum = 0.0;
      for (std::size_t c = 0; c < 7; ++c) {
        CHECK(s.at(r, c) >= 0.0);
        CHECK(s.at(r, c) <= 1.0);
        sum += s.at(r, c);
      }
      CHECK_THAT(sum, WithinAbs(1.0, 1e-12));
    }
  }
}

TEST_CASE("cross entropy", "[tensor][ce]") {
  SECTION("uniform logits give ln V") {
    Graph g;
    const Var logits = g.constant(Tensor({5, 16}));
    const std::vector<int> targets = {0, 3, 15, 7, 7};
    CHECK_THAT(cross_entropy_next_token(logits, targets).value().item(),
               WithinAbs(std::log(16.0), 1e-12));
    CHECK_THAT(std::log(16.0), WithinAbs(2.772589, 1e-6));
  }
  SECTION("large margin gives about zero") {
    Tensor t({2, 4});
    t.at(0, 1) = 80.0;
    t.at(1, 3) = 80.0;
    Graph g;
    const std::vector<int> targets = {1, 3};
    CHECK(cross_entropy_next_token(g.constant(t), targets).value().item() < 1e-30);
  }
  SECTION("hand-set logits match manual evaluation") {
    const Tensor t = Tensor::matrix(2, 3, {0.5, -1.0, 2.0, 1.5, 0.0, -0.5});
    const std::vector<int> targets = {2, 0};
    double manual = 0.0;
    for (std::size_t r = 0; r < 2; ++r) {
      double z = 0.0;
      for (std::size_t c = 0; c < 3; ++c) z += std::exp(t.at(r, c));
      manual += -std::log(std::exp(t.at(r, targets[r])) / z);
    }
    manual /= 2.0;
    Graph g;
    CHECK_THAT(cross_entropy_next_token(g.constant(t), targets).value().item(),
               WithinAbs(manual, 1e-14));
  }
  SECTION("out of range target") {
    Graph g;
    const std::vector<int> targets = {0, 4};
    CHECK_THROWS_AS(cross_entropy_next_token(g.constant(Tensor({2, 4})), targets),
                    IndexError);
    const std::vector<int> negative = {-1, 0};
    CHECK_THROWS_AS(cross_entropy_next_token(g.constant(Tensor({2, 4})), negative),
                    IndexError);
  }
}

TEST_CASE("backward basics", "[tensor][backward]") {
  SECTION("w^2 at 3") {
    Tensor w = Tensor::scalar(3.0);
    w.set_requires_grad(true);
    Graph g;
    const Var x = g.param(w);
    const Var loss = mul(x, x);
    g.backward(loss);
    CHECK(w.grad()[0] == 6.0);
  }
  SECTION("constant function") {
    Tensor w = Tensor::scalar(3.0);
    w.set_requires_grad(true);
    Graph g;
    g.param(w);
    const Var loss = g.constant(Tensor::scalar(5.0));
    g.backward(loss);
    REQUIRE(w.has_grad());
    CHECK(w.grad()[0] == 0.0);
  }
  SECTION("leaf off the path gets zero") {
    Tensor a = Tensor::scalar(2.0);
    Tensor b = Tensor::scalar(7.0);
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    Graph g;
    const Var va = g.param(a);
    g.param(b);
    g.backward(scale(va, 4.0));
    CHECK(a.grad()[0] == 4.0);
    CHECK(b.grad()[0] == 0.0);
  }
  SECTION("non-scalar loss is a contract error") {
    Tensor a = Tensor::vector({1.0, 2.0});
    a.set_requires_grad(true);
    Graph g;
    const Var va = g.param(a);
    CHECK_THROWS_AS(g.backward(va), ContractError);
  }
}

TEST_CASE("ops pass finite-difference checks", "[tensor][gradcheck]") {
  Rng rng(5);
  Tensor x = random_matrix(rng, 4, 6);
  Tensor gain = random_matrix(rng, 1, 6);
  Tensor bias = random_matrix(rng, 1, 6);
  std::vector<double> w(24);
  for (double& v : w) v = rng.normal();
  GradCheckOptions opts;
  opts.samples = 0;

  SECTION("layer norm and gelu") {
    Tensor g1({6}, gain.values());
    Tensor b1({6}, bias.values());
    g1.set_requires_grad(true);
    b1.set_requires_grad(true);
    const LossFn fn = [&](Graph& g) {
      return weighted_sum(gelu(layer_norm(g.param(x), g.param(g1), g.param(b1))), w);
    };
    const auto r = grad_check(fn, {&x, &g1, &b1}, opts);
    CHECK(r.failure_count() == 0);
  }
  SECTION("causal attention") {
    Tensor q = random_matrix(rng, 4, 6);
    Tensor k = random_matrix(rng, 4, 6);
    const LossFn fn = [&](Graph& g) {
      return weighted_sum(causal_attention(g.param(q), g.param(k), g.param(x), 2), w);
    };
    const auto r = grad_check(fn, {&q, &k, &x}, opts);
    CHECK(r.failure_count() == 0);
  }
  SECTION("softmax, log-sigmoid, slices") {
    const LossFn fn = [&](Graph& g) {
      const Var v = g.param(x);
      const Var s = softmax_rows(slice_cols(v, 1, 5));
      const std::vector<Var> parts = {s, log_sigmoid(slice_cols(v, 0, 2))};
      return weighted_sum(concat_cols(parts), std::span(w).first(24));
    };
    const auto r = grad_check(fn, {&x}, opts);
    CHECK(r.failure_count() == 0);
  }
  SECTION("embedding and cross entropy") {
    Tensor table = random_matrix(rng, 5, 6);
    const std::vector<int> ids = {4, 0, 4, 2};
    const std::vector<int> targets = {1, 5, 0, 3};
    Tensor proj = random_matrix(rng, 6, 6);
    const LossFn fn = [&](Graph& g) {
      return cross_entropy_next_token(
          matmul(embedding(g.param(table), ids), g.param(proj)), targets);
    };
    const auto r = grad_check(fn, {&table, &proj}, opts);
    CHECK(r.failure_count() == 0);
  }
}

TEST_CASE("grad_check examples", "[tensor][gradcheck]") {
  GradCheckOptions opts;
  opts.samples = 0;
  SECTION("quadratic bowl") {
    Tensor p = Tensor::vector({0.3, -1.2, 2.5, 0.7});
    p.set_requires_grad(true);
    const LossFn fn = [&](Graph& g) {
      const Var v = g.param(p);
      return sum(mul(v, v));
    };
    const auto r = grad_check(fn, {&p}, opts);
    CHECK(r.failure_count() == 0);
    // Central differences are exact on a quadratic; what is left is
    // roundoff, about eps * |f| / (h * |g|) ~ 3e-9 here.
    CHECK(r.max_rel_err < 1e-8);
  }
  SECTION("sin of sum matches cosine") {
    Tensor p = Tensor::vector({0.1, 0.4, -0.2});
    p.set_requires_grad(true);
    const LossFn fn = [&](Graph& g) {
      return map(sum(g.param(p)), [](double s) { return std::sin(s); },
                 [](double s) { return std::cos(s); });
    };
    const auto r = grad_check(fn, {&p}, opts);
    CHECK(r.failure_count() == 0);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK_THAT(p.grad()[i], WithinAbs(std::cos(0.3), 1e-15));
    }
  }
  SECTION("corrupted derivative rule is caught") {
    Tensor p = Tensor::vector({0.1, 0.4, -0.2});
    p.set_requires_grad(true);
    const LossFn fn = [&](Graph& g) {
      return map(sum(g.param(p)), [](double s) { return std::sin(s); },
                 [](double s) { return -std::cos(s); });
    };
    const auto r = grad_check(fn, {&p}, opts);
    CHECK(r.failure_count() == 3);
    CHECK(r.max_rel_err > 1.0);
  }
  SECTION("non-finite loss") {
    Tensor p = Tensor::vector({1.0});
    p.set_requires_grad(true);
    const LossFn fn = [&](Graph& g) {
      return map(g.param(p), [](double) { return INFINITY; },
                 [](double) { return 0.0; });
    };
    CHECK_THROWS_AS(grad_check(fn, {&p}, opts), EvaluationError);
  }
}

TEST_CASE("seeded forward and backward are repeatable", "[tensor]") {
  auto run = [] {
    Rng rng(99);
    Tensor a = random_matrix(rng, 3, 5);
    Tensor b = random_matrix(rng, 5, 4);
    Graph g;
    const std::vector<int> targets = {1, 0, 3};
    const Var loss = cross_entropy_next_token(
        softmax_rows(matmul(g.param(a), g.param(b))), targets);
    const double v = loss.value().item();
    g.backward(loss);
    std::vector<double> grads(a.grad().begin(), a.grad().end());
    grads.insert(grads.end(), b.grad().begin(), b.grad().end());
    return std::make_pair(v, grads);
  };
  const auto first = run();
  const auto second = run();
  CHECK(first.first == second.first);
  CHECK(first.second == second.second);
}
