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

#ifndef FLOWATTN_GRADCHECK_HPP_
#define FLOWATTN_GRADCHECK_HPP_

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "flowattn/autodiff.hpp"

namespace flowattn {

struct GradCheckEntry {
  std::string parameter;
  double max_rel_err = 0.0;
  std::size_t coordinates = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;

  double worst() const {
    double w = 0.0;
    for (const auto& e : entries) w = std::max(w, e.max_rel_err);
    return w;
  }
};

using ParamMap = std::map<std::string, Tensor<double>>;
using VarMap = std::map<std::string, ad::Var<double>>;

// |a - b| / max(|a|, |b|, 1e-8)
inline double gradcheck_rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

// Compares reverse-mode gradients of a scalar function against central
// differences (f(x+h) - f(x-h)) / 2h, coordinate by coordinate.
//
// `fn(tape, vars)` must record the function on `tape` and return a scalar
// Var. Each difference quotient evaluates `fn` on a fresh tape without
// running a backward pass.
template <typename Fn>
GradCheckReport finite_diff_check(Fn fn, const ParamMap& params, double step = 1e-5) {
  auto bind = [](ad::Tape<double>& tape, const ParamMap& values) {
    VarMap vars;
    for (const auto& [name, value] : values) vars.emplace(name, tape.parameter(name, value));
    return vars;
  };
  auto eval = [&](const ParamMap& values) {
    ad::Tape<double> tape;
    const VarMap vars = bind(tape, values);
    return fn(tape, vars).value()[0];
  };

  ad::Tape<double> tape;
  const VarMap vars = bind(tape, params);
  const auto analytic = tape.backward(fn(tape, vars));

  GradCheckReport report;
  ParamMap probe = params;
  for (const auto& [name, value] : params) {
    GradCheckEntry entry{name, 0.0, value.size()};
    const Tensor<double>& grad = analytic.at(name);
    Tensor<double>& x = probe.at(name);
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double orig = x[i];
      const double hi = orig + step, lo = orig - step;
      x[i] = hi;
      const double up = eval(probe);
      x[i] = lo;
      const double down = eval(probe);
      x[i] = orig;
      const double numeric = (up - down) / (hi - lo);
      entry.max_rel_err = std::max(entry.max_rel_err, gradcheck_rel_err(grad[i], numeric));
    }
    report.entries.push_back(entry);
  }
  return report;
}

}  // namespace flowattn

#endif  // FLOWATTN_GRADCHECK_HPP_
