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

#include <cmath>

#include "doctest.h"
#include "flowattn/tensor.hpp"
#include "oracles.hpp"

using flowattn::Shape;
using Tensor = flowattn::Tensor<double>;

TEST_CASE("matmul: identity and projector") {
  const Tensor id = Tensor::matrix({{1, 0}, {0, 1}});
  const Tensor a = Tensor::matrix({{1, 2}, {3, 4}});
  CHECK(flowattn::matmul(id, a) == a);

  const Tensor proj = Tensor::matrix({{1, 0}, {0, 0}});
  const Tensor col = Tensor::matrix({{5}, {7}});
  CHECK(flowattn::matmul(proj, col) == Tensor::matrix({{5}, {0}}));
}

TEST_CASE("matmul: seeded 4x3 * 3x2 equals triple loop exactly") {
  const Tensor a = oracle::random(Shape{4, 3}, 11);
  const Tensor b = oracle::random(Shape{3, 2}, 12);
  const Tensor expect = oracle::from_matrix(oracle::matmul(oracle::to_matrix(a), oracle::to_matrix(b)));
  CHECK(flowattn::matmul(a, b) == expect);
}

TEST_CASE("matmul: batched matches per-slice product") {
  const Tensor a = oracle::random(Shape{3, 4, 5}, 1);
  const Tensor b = oracle::random(Shape{3, 5, 2}, 2);
  const Tensor c = flowattn::matmul(a, b);
  for (std::size_t s = 0; s < 3; ++s) {
    Tensor as(Shape{4, 5}), bs(Shape{5, 2});
    std::copy_n(a.data() + s * 20, 20, as.data());
    std::copy_n(b.data() + s * 10, 10, bs.data());
    const auto ref = oracle::matmul(oracle::to_matrix(as), oracle::to_matrix(bs));
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 2; ++j) CHECK(c.at(s, i, j) == ref[i][j]);
  }
}

TEST_CASE("matmul: shape mismatch names both shapes") {
  const Tensor a(Shape{2, 3}), b(Shape{2, 3});
  try {
    flowattn::matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const flowattn::DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
  }
}

TEST_CASE("matmul: associativity on 16x16 inputs") {
  const Tensor a = oracle::random(Shape{16, 16}, 21);
  const Tensor b = oracle::random(Shape{16, 16}, 22);
  const Tensor c = oracle::random(Shape{16, 16}, 23);
  const Tensor left = flowattn::matmul(flowattn::matmul(a, b), c);
  const Tensor right = flowattn::matmul(a, flowattn::matmul(b, c));
  CHECK(flowattn::max_rel_err(left, right, 1e-12) <= 1e-8);
}

TEST_CASE("softmax_axis: symmetry, shift invariance and naive oracle") {
  const Tensor u = flowattn::softmax_axis(Tensor::vector({0, 0, 0}), 0);
  for (double v : u.values()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  for (double c : {-50.0, 0.0, 3.5, 700.0}) {
    const Tensor s = flowattn::softmax_axis(Tensor::vector({c, c + std::log(3.0)}), 0);
    CHECK(s[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(s[1] == doctest::Approx(0.75).epsilon(1e-12));
  }

  const Tensor x = oracle::random(Shape{9}, 5, -3, 3);
  const auto naive = oracle::softmax(std::vector<double>(x.values().begin(), x.values().end()));
  const Tensor s = flowattn::softmax_axis(x, 0);
  for (std::size_t i = 0; i < 9; ++i) CHECK(std::abs(s[i] - naive[i]) / naive[i] <= 1e-12);

  CHECK_THROWS_AS(flowattn::softmax_axis(x, 1), flowattn::DimensionError);
}

TEST_CASE("softmax_axis: property sweep over axes and shifts") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Tensor x = oracle::random(Shape{3, 4, 5}, 100 + seed, -6, 6);
    for (std::size_t axis = 0; axis < 3; ++axis) {
      const Tensor s = flowattn::softmax_axis(x, axis);
      const Tensor sums = flowattn::sum_axis(s, axis);
      for (double v : sums.values()) CHECK(std::abs(v - 1.0) <= 1e-12);
      for (double v : s.values()) CHECK((v >= 0.0 && v <= 1.0));
      const double c = static_cast<double>(seed) * 7.3 - 60.0;
      CHECK(flowattn::max_rel_err(flowattn::softmax_axis(flowattn::add_scalar(x, c), axis), s) <= 1e-12);
    }
  }
}

TEST_CASE("causal_softmax_axis: prefix normalization and shift invariance") {
  const Tensor x = oracle::random(Shape{7, 2}, 9, -4, 4);
  const Tensor p = flowattn::causal_softmax_axis(x, 0);
  for (std::size_t h = 0; h < 2; ++h) {
    for (std::size_t t = 0; t < 7; ++t) {
      double total = 0.0;
      for (std::size_t j = 0; j <= t; ++j) total += std::exp(x.at(j, h));
      CHECK(std::abs(p.at(t, h) - std::exp(x.at(t, h)) / total) <= 1e-14);
    }
  }
  for (double c : {-300.0, -1.0, 2.0, 500.0}) {
    CHECK(flowattn::max_rel_err(flowattn::causal_softmax_axis(flowattn::add_scalar(x, c), 0), p) <= 1e-12);
  }
}

TEST_CASE("cumsum_axis: examples and loop oracle") {
  CHECK(flowattn::cumsum_axis(Tensor::vector({1, 2, 3}), 0) == Tensor::vector({1, 3, 6}));
  CHECK(flowattn::cumsum_axis(Tensor(Shape{4}), 0) == Tensor(Shape{4}));

  const Tensor x = oracle::random(Shape{5, 2}, 3);
  const Tensor c = flowattn::cumsum_axis(x, 0);
  for (std::size_t col = 0; col < 2; ++col) {
    double running = 0.0;
    for (std::size_t i = 0; i < 5; ++i) {
      running += x.at(i, col);
      CHECK(c.at(i, col) == running);
    }
  }
  CHECK_THROWS_AS(flowattn::cumsum_axis(x, 2), flowattn::DimensionError);
}

TEST_CASE("cumsum_axis: last entry equals the axis sum") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Tensor x = oracle::random(Shape{6, 3, 2}, 300 + seed);
    for (std::size_t axis = 0; axis < 3; ++axis) {
      const Tensor c = flowattn::cumsum_axis(x, axis);
      const Tensor s = flowattn::sum_axis(x, axis);
      const auto [outer, len, inner] = flowattn::detail::axis_view(x.shape(), axis);
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in)
          CHECK(std::abs(c[(o * len + len - 1) * inner + in] - s[o * inner + in]) <= 1e-12);
    }
  }
}

TEST_CASE("stable_div") {
  CHECK(flowattn::stable_div(Tensor::scalar(1.0), Tensor::scalar(0.0), 1e-6)[0] == doctest::Approx(1e6).epsilon(1e-12));
  const Tensor x = oracle::random(Shape{3, 4}, 4, 0.1, 2.0);
  for (double v : flowattn::stable_div(x, x, 0.0).values()) CHECK(v == 1.0);

  const Tensor num = oracle::random(Shape{3, 2, 4}, 5);
  const Tensor den = oracle::random(Shape{3, 2}, 6, 0.0, 3.0);
  const Tensor out = flowattn::stable_div(num, den, 1e-6);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t h = 0; h < 2; ++h)
      for (std::size_t c = 0; c < 4; ++c) CHECK(out.at(i, h, c) == num.at(i, h, c) / (den.at(i, h) + 1e-6));

  CHECK_THROWS_AS(flowattn::stable_div(x, flowattn::scale(x, -1.0), 1e-6), flowattn::DomainError);
  CHECK_THROWS_AS(flowattn::stable_div(x, x, -1e-3), flowattn::ContractError);
  CHECK_THROWS_AS(flowattn::stable_div(x, Tensor(Shape{4}), 0.0), flowattn::DimensionError);
}

TEST_CASE("layer_norm") {
  const Tensor one = Tensor::vector({1, 1});
  const Tensor zero = Tensor::vector({0, 0});
  const Tensor flat = flowattn::layer_norm(Tensor::matrix({{3, 3}}), one, zero, 1e-6);
  CHECK(flat == Tensor::matrix({{0, 0}}));
  CHECK(flowattn::layer_norm(Tensor::matrix({{1, -1}}), one, zero, 0.0) == Tensor::matrix({{1, -1}}));

  const Tensor x = oracle::random(Shape{3, 6}, 7, -5, 5);
  const Tensor gamma = oracle::random(Shape{6}, 8);
  const Tensor beta = oracle::random(Shape{6}, 9);
  const Tensor y = flowattn::layer_norm(x, gamma, beta, 1e-6);
  const auto rows = oracle::to_matrix(x);
  for (std::size_t r = 0; r < 3; ++r) {
    const auto ref = oracle::layer_norm_row(rows[r], 1e-6);
    for (std::size_t c = 0; c < 6; ++c) {
      const double expect = ref[c] * gamma[c] + beta[c];
      CHECK(std::abs(y.at(r, c) - expect) <= 1e-12 * std::max(1.0, std::abs(expect)));
    }
  }
}

TEST_CASE("heads, transposes and broadcasting") {
  const Tensor x = oracle::random(Shape{5, 12}, 10);
  for (std::size_t h : {1u, 2u, 3u, 4u, 6u, 12u}) {
    const Tensor s = flowattn::split_heads(x, h);
    CHECK(s.shape() == Shape{5, h, 12 / h});
    CHECK(flowattn::merge_heads(s) == x);
  }
  CHECK_THROWS_AS(flowattn::split_heads(x, 5), flowattn::DimensionError);

  const Tensor t = flowattn::transpose_last2(x);
  CHECK(t.shape() == Shape{12, 5});
  CHECK(t.at(3, 2) == x.at(2, 3));
  CHECK(flowattn::transpose_last2(t) == x);

  const Tensor r3 = oracle::random(Shape{2, 3, 4}, 11);
  const Tensor sw = flowattn::swap_axes(r3, 0, 2);
  CHECK(sw.shape() == Shape{4, 3, 2});
  CHECK(sw.at(1, 2, 0) == r3.at(0, 2, 1));

  const Tensor b = flowattn::broadcast_axis(Tensor::vector({1, 2}), 0, 3);
  CHECK(b == Tensor::matrix({{1, 2}, {1, 2}, {1, 2}}));
  const Tensor b2 = flowattn::broadcast_axis(Tensor::vector({1, 2}), 1, 2);
  CHECK(b2 == Tensor::matrix({{1, 1}, {2, 2}}));
  CHECK(flowattn::sum_axis(b, 0) == Tensor::vector({3, 6}));

  CHECK(flowattn::arange<double>(1, 4) == Tensor::vector({1, 2, 3}));
}

TEST_CASE("shape invariants") {
  CHECK_THROWS_AS(Tensor(Shape{2, 0}), flowattn::DimensionError);
  CHECK_THROWS_AS((Shape{1, 2, 3, 4, 5}), flowattn::DimensionError);
  CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), flowattn::DimensionError);
  const Tensor x(Shape{2, 3, 4, 5});
  CHECK(x.size() == 120);
}

TEST_CASE("causal_dot_product: examples and masked double loop") {
  const Tensor q1 = oracle::random(Shape{1, 1, 3}, 1);
  const Tensor k1 = oracle::random(Shape{1, 1, 3}, 2);
  const Tensor v1 = oracle::random(Shape{1, 1, 2}, 3);
  const Tensor o1 = flowattn::causal_dot_product(q1, k1, v1);
  double qk = 0.0;
  for (std::size_t a = 0; a < 3; ++a) qk += q1[a] * k1[a];
  for (std::size_t b = 0; b < 2; ++b) CHECK(o1[b] == doctest::Approx(qk * v1[b]).epsilon(1e-15));

  const Tensor q = oracle::random(Shape{7, 2, 3}, 4);
  const Tensor v = oracle::random(Shape{7, 2, 3}, 5);
  CHECK(flowattn::causal_dot_product(q, Tensor(Shape{7, 2, 3}), v) == Tensor(Shape{7, 2, 3}));

  const Tensor k = oracle::random(Shape{7, 2, 3}, 6);
  CHECK(flowattn::max_rel_err(flowattn::causal_dot_product(q, k, v), oracle::causal_dot_product(q, k, v)) <= 1e-12);

  CHECK_THROWS_AS(flowattn::causal_dot_product(q, oracle::random(Shape{6, 2, 3}, 1), v), flowattn::DimensionError);
}
