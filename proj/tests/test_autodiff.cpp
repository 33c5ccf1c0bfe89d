// Copyright 2026 The flowattn Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <functional>
#include <string>

#include "doctest.h"
#include "flowattn/attention.hpp"
#include "flowattn/autodiff.hpp"
#include "flowattn/gradcheck.hpp"
#include "oracles.hpp"

using flowattn::ParamMap;
using flowattn::Shape;
using flowattn::VarMap;
using Tensor = flowattn::Tensor<double>;
using Var = flowattn::ad::Var<double>;
using Tape = flowattn::ad::Tape<double>;

namespace {

// Projects an output onto fixed random weights so every coordinate of the
// gradient is exercised, then checks against central differences.
double check_primitive(const std::function<Var(const VarMap&)>& op, const ParamMap& params, std::uint64_t seed) {
  auto fn = [&](Tape& tape, const VarMap& vars) {
    const Var out = op(vars);
    const Tensor w = oracle::random(out.shape(), seed);
    return flowattn::ad::sum_all(flowattn::ad::mul(out, tape.constant(w)));
  };
  return flowattn::finite_diff_check(fn, params).worst();
}

}  // namespace

TEST_CASE("backward: sum gives ones, sigmoid at zero gives 0.25") {
  Tape tape;
  const Var x = tape.parameter("x", oracle::random(Shape{3, 2}, 1));
  const auto g = tape.backward(flowattn::ad::sum_all(x));
  for (double v : g.at("x").values()) CHECK(v == 1.0);

  Tape tape2;
  const Var z = tape2.parameter("z", Tensor(Shape{4}));
  const auto g2 = tape2.backward(flowattn::ad::sum_all(flowattn::ad::sigmoid(z)));
  for (double v : g2.at("z").values()) CHECK(v == 0.25);
}

TEST_CASE("backward: contract errors") {
  Tape tape;
  const Var x = tape.parameter("x", oracle::random(Shape{3}, 1));
  CHECK_THROWS_AS(tape.backward(x), flowattn::ContractError);
  Tape tape2;
  const Var y = flowattn::ad::sum_all(tape2.parameter("y", oracle::random(Shape{3}, 1)));
  tape2.backward(y);
  CHECK_THROWS_AS(tape2.backward(y), flowattn::ContractError);
}

TEST_CASE("backward: fan-out accumulates additively") {
  Tape tape;
  const Var x = tape.parameter("x", Tensor::vector({2.0, -3.0}));
  const Var y = flowattn::ad::add(flowattn::ad::mul(x, x), x);  // x^2 + x
  const auto g = tape.backward(flowattn::ad::sum_all(y));
  CHECK(g.at("x") == Tensor::vector({5.0, -5.0}));
}

TEST_CASE("cumsum adjoint is the reversed suffix sum") {
  const Tensor g = Tensor::vector({1, 2, 3, 4});
  CHECK(flowattn::ad::reverse_cumsum_axis(g, 0) == Tensor::vector({10, 9, 7, 4}));

  Tape tape;
  const Var x = tape.parameter("x", oracle::random(Shape{4}, 2));
  const Var y = flowattn::ad::cumsum_axis(x, 0);
  const auto grads = tape.backward(flowattn::ad::sum_all(flowattn::ad::mul(y, tape.constant(g))));
  CHECK(grads.at("x") == Tensor::vector({10, 9, 7, 4}));
}

TEST_CASE("finite_diff_check: quadratic is exact") {
  const ParamMap params{{"x", oracle::random(Shape{4}, 4, 1, 2)}};
  auto fn = [](Tape&, const VarMap& v) { return flowattn::ad::sum_all(flowattn::ad::mul(v.at("x"), v.at("x"))); };
  CHECK(flowattn::finite_diff_check(fn, params).worst() <= 1e-10);
}

TEST_CASE("every primitive adjoint matches central differences") {
  using namespace flowattn::ad;
  const Tensor a = oracle::random(Shape{4, 5}, 10, -2, 2);
  const Tensor b = oracle::random(Shape{4, 5}, 11, -2, 2);
  const Tensor pos = oracle::random(Shape{4, 5}, 12, 0.5, 2.0);
  const Tensor r3 = oracle::random(Shape{6, 2, 3}, 13, -2, 2);
  const Tensor r3b = oracle::random(Shape{6, 2, 3}, 14, -2, 2);
  const Tensor r3c = oracle::random(Shape{6, 2, 2}, 15, -2, 2);
  const double tol = 1e-6;

  CHECK(check_primitive([](const VarMap& v) { return add(v.at("a"), v.at("b")); }, {{"a", a}, {"b", b}}, 1) <= tol);
  CHECK(check_primitive([](const VarMap& v) { return sub(v.at("a"), v.at("b")); }, {{"a", a}, {"b", b}}, 2) <= tol);
  CHECK(check_primitive([](const VarMap& v) { return mul(v.at("a"), v.at("b")); }, {{"a", a}, {"b", b}}, 3) <= tol);
  CHECK(check_primitive([](const VarMap& v) { return scale(v.at("a"), 2.5); }, {{"a", a}}, 4) <= tol);
  CHECK(check_primitive([](const VarMap& v) { return sigmoid(v.at("a")); }, {{"a", a}}, 5) <= tol);
  CHECK(check_primitive([](const VarMap& v) { return exp(v.at("a")); }, {{"a", a}}, 6) <= tol);
  CHECK(check_primitive([](const VarMap& v) { return relu(v.at("a")); }, {{"a", a}}, 7) <= tol);
  CHECK(check_primitive([](const VarMap& v) { return elu_plus_one(v.at("a")); }, {{"a", a}}, 8) <= tol);
  CHECK(check_primitive([](const VarMap& v) { return gelu(v.at("a")); }, {{"a", a}}, 9) <= tol);
  CHECK(check_primitive([](const VarMap& v) { return stable_div(v.at("a"), v.at("p"), 1e-6); }, {{"a", a}, {"p", pos}},
                        10) <= tol);
  CHECK(check_primitive(
            [](const VarMap& v) { return stable_div(v.at("x"), v.at("p"), 1e-6); },
            {{"x", r3}, {"p", oracle::random(Shape{6, 2}, 16, 0.5, 2.0)}}, 11) <= tol);
  for (std::size_t axis = 0; axis < 3; ++axis) {
    CHECK(check_primitive([axis](const VarMap& v) { return sum_axis(v.at("x"), axis); }, {{"x", r3}}, 12) <= tol);
    CHECK(check_primitive([axis](const VarMap& v) { return softmax_axis(v.at("x"), axis); }, {{"x", r3}}, 13) <= tol);
    CHECK(check_primitive([axis](const VarMap& v) { return cumsum_axis(v.at("x"), axis); }, {{"x", r3}}, 14) <= tol);
    CHECK(check_primitive([axis](const VarMap& v) { return causal_softmax_axis(v.at("x"), axis); }, {{"x", r3}}, 15) <=
          tol);
    CHECK(check_primitive([axis](const VarMap& v) { return broadcast_axis(v.at("x"), axis, 3); }, {{"x", r3}}, 16) <=
          tol);
  }
  CHECK(check_primitive([](const VarMap& v) { return sum_axis(v.at("x"), 0); }, {{"x", Tensor::vector({1, 2, 3})}},
                        17) <= tol);
  CHECK(check_primitive(
            [](const VarMap& v) { return layer_norm(v.at("x"), v.at("g"), v.at("b"), 1e-6); },
            {{"x", a}, {"g", oracle::random(Shape{5}, 18)}, {"b", oracle::random(Shape{5}, 19)}}, 20) <= tol);
  CHECK(check_primitive([](const VarMap& v) { return matmul(v.at("a"), v.at("b")); },
                        {{"a", a}, {"b", oracle::random(Shape{5, 3}, 21)}}, 22) <= tol);
  CHECK(check_primitive([](const VarMap& v) { return matmul(v.at("a"), v.at("b")); },
                        {{"a", r3}, {"b", oracle::random(Shape{6, 3, 4}, 23)}}, 24) <= tol);
  CHECK(check_primitive([](const VarMap& v) { return swap_axes(v.at("x"), 0, 1); }, {{"x", r3}}, 25) <= tol);
  CHECK(check_primitive([](const VarMap& v) { return transpose_last2(v.at("x")); }, {{"x", r3}}, 26) <= tol);
  CHECK(check_primitive([](const VarMap& v) { return merge_heads(split_heads(v.at("x"), 5)); }, {{"x", a}}, 27) <= tol);
  CHECK(check_primitive([](const VarMap& v) { return causal_dot_product(v.at("q"), v.at("k"), v.at("v")); },
                        {{"q", r3}, {"k", r3b}, {"v", r3c}}, 28) <= tol);
  CHECK(check_primitive(
            [](const VarMap& v) { return softmax_axis(causal_mask(v.at("x")), 1); },
            {{"x", oracle::random(Shape{5, 5}, 29)}}, 30) <= tol);
  const std::vector<std::int64_t> ids{2, 0, 2, 1};
  CHECK(check_primitive([&ids](const VarMap& v) { return gather_rows(v.at("t"), ids); },
                        {{"t", oracle::random(Shape{3, 4}, 31)}}, 32) <= tol);
}

TEST_CASE("causal_softmax adjoint survives large logits") {
  // Spread of several hundred would overflow a naive exp in the backward.
  Tensor x = oracle::random(Shape{8, 1}, 40, -1, 1);
  x[3] = 400.0;
  x[6] = -350.0;
  const double worst = check_primitive(
      [](const VarMap& v) { return flowattn::ad::causal_softmax_axis(v.at("x"), 0); }, {{"x", x}}, 41);
  CHECK(worst <= 1e-6);
}

TEST_CASE("tape forward equals eager evaluation") {
  flowattn::AttentionConfig cfg;
  cfg.heads = 2;
  const Tensor q = oracle::random(Shape{6, 4}, 50), k = oracle::random(Shape{6, 4}, 51), v = oracle::random(Shape{6, 4}, 52);
  for (auto mech : {flowattn::Mechanism::kFlowNormal, flowattn::Mechanism::kFlowCausal,
                    flowattn::Mechanism::kCanonical, flowattn::Mechanism::kLinearBaseline}) {
    cfg.mechanism = mech;
    Tape tape;
    const auto taped = flowattn::attend(tape.parameter("q", q), tape.parameter("k", k), tape.parameter("v", v), cfg);
    const auto eager = flowattn::attend(q, k, v, cfg);
    CHECK(taped.output.value() == eager.output);
  }
}

TEST_CASE("gradients of Flow-Attention match finite differences") {
  flowattn::AttentionConfig cfg;
  cfg.heads = 2;
  const ParamMap params{{"q", oracle::random(Shape{6, 4}, 60)},
                        {"k", oracle::random(Shape{6, 4}, 61)},
                        {"v", oracle::random(Shape{6, 4}, 62)}};
  auto loss_for = [&](flowattn::Mechanism mech) {
    return [&cfg, mech](Tape&, const VarMap& v) {
      flowattn::AttentionConfig c = cfg;
      c.mechanism = mech;
      return flowattn::ad::sum_all(flowattn::attend(v.at("q"), v.at("k"), v.at("v"), c).output);
    };
  };
  CHECK(flowattn::finite_diff_check(loss_for(flowattn::Mechanism::kFlowNormal), params).worst() <= 1e-4);

  const ParamMap small{{"q", oracle::random(Shape{4, 3}, 63)},
                       {"k", oracle::random(Shape{4, 3}, 64)},
                       {"v", oracle::random(Shape{4, 3}, 65)}};
  auto canonical = [](Tape&, const VarMap& v) {
    return flowattn::ad::sum_all(flowattn::canonical_attention(v.at("q"), v.at("k"), v.at("v"), false));
  };
  CHECK(flowattn::finite_diff_check(canonical, small).worst() <= 1e-5);

  const ParamMap causal{{"q", oracle::random(Shape{5, 4}, 66)},
                        {"k", oracle::random(Shape{5, 4}, 67)},
                        {"v", oracle::random(Shape{5, 4}, 68)}};
  CHECK(flowattn::finite_diff_check(loss_for(flowattn::Mechanism::kFlowCausal), causal).worst() <= 1e-4);
}

TEST_CASE("gradients are bit-identical across runs") {
  flowattn::AttentionConfig cfg;
  cfg.heads = 2;
  cfg.mechanism = flowattn::Mechanism::kFlowCausal;
  auto run = [&] {
    Tape tape;
    const Var q = tape.parameter("q", oracle::random(Shape{8, 4}, 70));
    const Var k = tape.parameter("k", oracle::random(Shape{8, 4}, 71));
    const Var v = tape.parameter("v", oracle::random(Shape{8, 4}, 72));
    return tape.backward(flowattn::ad::sum_all(flowattn::attend(q, k, v, cfg).output));
  };
  const auto g1 = run();
  const auto g2 = run();
  for (const auto& [name, g] : g1) CHECK(g == g2.at(name));
}
