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

#include "flowattn/attention.hpp"

#include <array>
#include <string>
#include <utility>

namespace flowattn {

namespace {

constexpr std::array<std::pair<Mechanism, std::string_view>, 5> kMechanisms{{
    {Mechanism::kCanonical, "canonical"},
    {Mechanism::kLinearBaseline, "linear_baseline"},
    {Mechanism::kFlowNormal, "flow_normal"},
    {Mechanism::kFlowCausal, "flow_causal"},
    {Mechanism::kFlowOracle, "flow_oracle"},
}};

constexpr std::array<std::pair<FeatureMap, std::string_view>, 3> kFeatureMaps{{
    {FeatureMap::kSigmoid, "sigmoid"},
    {FeatureMap::kEluPlusOne, "elu_plus_one"},
    {FeatureMap::kRelu, "relu"},
}};

constexpr std::array<std::pair<Activation, std::string_view>, 2> kActivations{{
    {Activation::kSoftmax, "softmax"},
    {Activation::kSigmoid, "sigmoid"},
}};

template <typename E, std::size_t N>
std::string_view name_of(const std::array<std::pair<E, std::string_view>, N>& table, E value) {
  for (const auto& [e, name] : table)
    if (e == value) return name;
  return "unknown";
}

template <typename E, std::size_t N>
E parse_from(const std::array<std::pair<E, std::string_view>, N>& table, std::string_view s, const char* what) {
  for (const auto& [e, name] : table)
    if (name == s) return e;
  std::string options;
  for (const auto& [e, name] : table) options += (options.empty() ? "" : ", ") + std::string(name);
  throw ContractError("unknown " + std::string(what) + " '" + std::string(s) + "' (expected one of: " + options + ")");
}

}  // namespace

std::string_view to_string(Mechanism m) { return name_of(kMechanisms, m); }
std::string_view to_string(FeatureMap f) { return name_of(kFeatureMaps, f); }
std::string_view to_string(Activation a) { return name_of(kActivations, a); }

Mechanism parse_mechanism(std::string_view s) { return parse_from(kMechanisms, s, "mechanism"); }
FeatureMap parse_feature_map(std::string_view s) { return parse_from(kFeatureMaps, s, "feature map"); }
Activation parse_activation(std::string_view s) { return parse_from(kActivations, s, "activation"); }

void validate(const AttentionConfig& cfg, std::size_t channels) {
  if (cfg.heads == 0) throw ContractError("attention: heads must be positive");
  if (!(cfg.eps >= 0.0)) throw ContractError("attention: eps must be non-negative, got " + std::to_string(cfg.eps));
  if (channels % cfg.heads != 0) {
    throw DimensionError("attention: channels " + std::to_string(channels) + " not divisible by " +
                         std::to_string(cfg.heads) + " heads");
  }
  if (cfg.causal && cfg.mechanism == Mechanism::kFlowNormal) {
    throw ContractError("attention: flow_normal is not causal; use flow_causal");
  }
  if (cfg.causal && cfg.mechanism == Mechanism::kFlowOracle) {
    throw ContractError("attention: flow_oracle is the non-causal dense form");
  }
}

}  // namespace flowattn
