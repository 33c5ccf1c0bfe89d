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

// Attention mechanisms: canonical softmax attention, the kernelized linear
// baseline, and Flow-Attention in its normal and causal forms.
//
// Every kernel is a template over the value carrier X, which is either
// Tensor<T> (eager evaluation) or ad::Var<T> (recorded for reverse-mode
// differentiation). Calls to the tensor primitives are unqualified so that
// argument-dependent lookup picks the matching overload set.

#ifndef FLOWATTN_ATTENTION_HPP_
#define FLOWATTN_ATTENTION_HPP_

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

#include "flowattn/autodiff.hpp"
#include "flowattn/tensor.hpp"

namespace flowattn {

enum class Mechanism { kCanonical, kLinearBaseline, kFlowNormal, kFlowCausal, kFlowOracle };
enum class FeatureMap { kSigmoid, kEluPlusOne, kRelu };
enum class Activation { kSoftmax, kSigmoid };

std::string_view to_string(Mechanism m);
std::string_view to_string(FeatureMap f);
std::string_view to_string(Activation a);
Mechanism parse_mechanism(std::string_view s);
FeatureMap parse_feature_map(std::string_view s);
Activation parse_activation(std::string_view s);

struct AttentionConfig {
  Mechanism mechanism = Mechanism::kFlowNormal;
  std::size_t heads = 1;
  FeatureMap phi = FeatureMap::kSigmoid;
  Activation competition_act = Activation::kSoftmax;
  Activation allocation_act = Activation::kSigmoid;
  double eps = 1e-6;
  // Ablation switches: false replaces competition(O^) * V with V, or
  // allocation(I^) * A with A.
  bool competition = true;
  bool allocation = true;
  // Triangle mask for canonical and linear_baseline. flow_causal is causal by
  // construction and flow_normal ignores this flag.
  bool causal = false;
  // Materialization cap for the dense flow oracle (n * m entries per head).
  std::size_t oracle_cap = std::size_t{4096} * 4096;

  bool is_causal() const { return mechanism == Mechanism::kFlowCausal || causal; }
  bool has_flow_stats() const {
    return mechanism == Mechanism::kFlowNormal || mechanism == Mechanism::kFlowCausal ||
           mechanism == Mechanism::kFlowOracle;
  }
};

// Throws ContractError / DimensionError when `cfg` cannot apply to d channels.
void validate(const AttentionConfig& cfg, std::size_t channels);

// Per-token flows, each n x h (sinks) or m x h (sources). conserved_outgoing
// is captured before the competition activation.
template <typename T>
struct FlowStats {
  Tensor<T> incoming;
  Tensor<T> outgoing;
  Tensor<T> conserved_incoming;
  Tensor<T> conserved_outgoing;
};

template <typename X>
using scalar_t = typename X::value_type;

template <typename X>
struct AttentionOutput {
  X output;
  std::optional<FlowStats<scalar_t<X>>> stats;
};

namespace detail {

template <typename X>
void require_attention_inputs(const X& q, const X& k, const X& v, const AttentionConfig& cfg, bool same_length) {
  const auto& qs = value_of(q).shape();
  const auto& ks = value_of(k).shape();
  const auto& vs = value_of(v).shape();
  if (qs.rank() != 2 || ks.rank() != 2 || vs.rank() != 2) {
    throw DimensionError("attention inputs must be rank 2, got " + qs.str() + ", " + ks.str() + ", " + vs.str());
  }
  if (qs[1] != ks[1] || ks[0] != vs[0]) {
    throw DimensionError("attention shapes do not conform: Q " + qs.str() + ", K " + ks.str() + ", V " + vs.str());
  }
  if (same_length && qs[0] != ks[0]) {
    throw DimensionError("causal attention needs n == m, got Q " + qs.str() + ", K " + ks.str());
  }
  validate(cfg, qs[1]);
  if (vs[1] % cfg.heads != 0) {
    throw DimensionError("value channels " + std::to_string(vs[1]) + " not divisible by " +
                         std::to_string(cfg.heads) + " heads");
  }
}

// Raises InternalError naming the first non-finite (position, head).
template <typename T>
void require_finite_output(const Tensor<T>& out, std::size_t heads, const char* mechanism) {
  const std::size_t d = out.extent(1);
  for (std::size_t idx = 0; idx < out.size(); ++idx) {
    if (!std::isfinite(out[idx])) {
      throw InternalError(std::string(mechanism) + ": non-finite output at step " + std::to_string(idx / d) +
                          ", head " + std::to_string((idx % d) / (d / heads)));
    }
  }
}

template <typename X>
X competition_weights(const X& conserved_outgoing, Activation act) {
  return act == Activation::kSoftmax ? softmax_axis(conserved_outgoing, 0) : sigmoid(conserved_outgoing);
}

// Adds a trailing axis of extent e: n x h -> n x h x e.
template <typename X>
X expand_last(const X& x, std::size_t e) {
  return broadcast_axis(x, 2, e);
}

// sum_c a[i,h,c] * s[h,c], i.e. row-wise dot with a per-head vector.
template <typename X>
X rowdot(const X& a, const X& per_head) {
  return sum_axis(mul(a, broadcast_axis(per_head, 0, value_of(a).extent(0))), 2);
}

}  // namespace detail

template <typename X>
X apply_feature_map(const X& x, FeatureMap phi) {
  switch (phi) {
    case FeatureMap::kSigmoid: return sigmoid(x);
    case FeatureMap::kEluPlusOne: return elu_plus_one(x);
    case FeatureMap::kRelu: return relu(x);
  }
  throw ContractError("unknown feature map");
}

// Flows of the normal (non-causal) mechanism for already feature-mapped
// queries and keys, both n x h x e / m x h x e.
template <typename X>
struct NormalFlows {
  X incoming, outgoing, conserved_incoming, conserved_outgoing;
  X sink_normalized;    // qf / I
  X source_normalized;  // kf / O
};

template <typename X>
NormalFlows<X> flow_quantities_normal(const X& qf, const X& kf, double eps) {
  using T = scalar_t<X>;
  const auto& qv = value_of(qf);
  const auto& kv = value_of(kf);
  if (qv.rank() != 3 || kv.rank() != 3 || qv.extent(1) != kv.extent(1) || qv.extent(2) != kv.extent(2)) {
    throw DimensionError("flow_quantities_normal: expected n x h x e inputs, got " + qv.shape().str() + " and " +
                         kv.shape().str());
  }
  for (T x : qv.values())
    if (x < T(0)) throw DomainError("flow_quantities_normal: negative query feature (phi must be non-negative)");
  for (T x : kv.values())
    if (x < T(0)) throw DomainError("flow_quantities_normal: negative key feature (phi must be non-negative)");
  const T e = static_cast<T>(eps);

  NormalFlows<X> f;
  f.incoming = detail::rowdot(qf, sum_axis(kf, 0));
  f.outgoing = detail::rowdot(kf, sum_axis(qf, 0));
  f.source_normalized = stable_div(kf, f.outgoing, e);
  f.sink_normalized = stable_div(qf, f.incoming, e);
  f.conserved_incoming = detail::rowdot(qf, sum_axis(f.source_normalized, 0));
  f.conserved_outgoing = detail::rowdot(kf, sum_axis(f.sink_normalized, 0));
  return f;
}

template <typename X>
AttentionOutput<X> flow_attention_normal(const X& q, const X& k, const X& v, const AttentionConfig& cfg) {
  using T = scalar_t<X>;
  detail::require_attention_inputs(q, k, v, cfg, false);
  const std::size_t h = cfg.heads;
  const X qf = apply_feature_map(split_heads(q, h), cfg.phi);
  const X kf = apply_feature_map(split_heads(k, h), cfg.phi);
  const X vs = split_heads(v, h);
  const std::size_t ev = value_of(vs).extent(2);

  const NormalFlows<X> f = flow_quantities_normal(qf, kf, cfg.eps);

  const X competed =
      cfg.competition ? mul(vs, detail::expand_last(detail::competition_weights(f.conserved_outgoing, cfg.competition_act), ev))
                      : vs;
  // Per head: context = kf^T competed (e x e'), aggregated = (qf / I) context.
  const X context = matmul(transpose_last2(swap_axes(kf, 0, 1)), swap_axes(competed, 0, 1));
  const X aggregated = swap_axes(matmul(swap_axes(f.sink_normalized, 0, 1), context), 0, 1);
  X result = aggregated;
  if (cfg.allocation) {
    const X gate = cfg.allocation_act == Activation::kSigmoid ? sigmoid(f.conserved_incoming)
                                                              : softmax_axis(f.conserved_incoming, 0);
    result = mul(aggregated, detail::expand_last(gate, ev));
  }
  AttentionOutput<X> out{merge_heads(result), FlowStats<T>{value_of(f.incoming), value_of(f.outgoing),
                                                           value_of(f.conserved_incoming),
                                                           value_of(f.conserved_outgoing)}};
  detail::require_finite_output(value_of(out.output), h, "flow_attention_normal");
  return out;
}

template <typename X>
AttentionOutput<X> flow_attention_causal(const X& q, const X& k, const X& v, const AttentionConfig& cfg) {
  using T = scalar_t<X>;
  detail::require_attention_inputs(q, k, v, cfg, true);
  const std::size_t h = cfg.heads;
  const T e = static_cast<T>(cfg.eps);
  const X qf = apply_feature_map(split_heads(q, h), cfg.phi);
  const X kf = apply_feature_map(split_heads(k, h), cfg.phi);
  const X vs = split_heads(v, h);
  const std::size_t n = value_of(qf).extent(0);
  const std::size_t ev = value_of(vs).extent(2);

  // 1-based positions: the t-th prefix averages over t tokens.
  const X positions = constant_like(q, flowattn::broadcast_axis(arange<T>(1, n + 1), 1, h));
  auto prefix_flow = [&](const X& a, const X& b) {
    return stable_div(sum_axis(mul(a, cumsum_axis(b, 0)), 2), positions, T(0));
  };

  const X incoming = prefix_flow(qf, kf);
  const X outgoing = prefix_flow(kf, qf);
  const X conserved_incoming = prefix_flow(qf, stable_div(kf, outgoing, e));
  const X conserved_outgoing = prefix_flow(kf, stable_div(qf, incoming, e));

  X weighted_values = vs;
  if (cfg.competition) {
    const X weights = cfg.competition_act == Activation::kSoftmax
                          ? mul(causal_softmax_axis(conserved_outgoing, 0), positions)
                          : sigmoid(conserved_outgoing);
    weighted_values = mul(vs, detail::expand_last(weights, ev));
  }
  const X sink_weighted = stable_div(qf, mul(incoming, positions), e);
  X result = causal_dot_product(sink_weighted, kf, weighted_values);
  if (cfg.allocation) {
    const X gate = cfg.allocation_act == Activation::kSigmoid ? sigmoid(conserved_incoming)
                                                              : causal_softmax_axis(conserved_incoming, 0);
    result = mul(result, detail::expand_last(gate, ev));
  }
  AttentionOutput<X> out{merge_heads(result), FlowStats<T>{value_of(incoming), value_of(outgoing),
                                                           value_of(conserved_incoming),
                                                           value_of(conserved_outgoing)}};
  detail::require_finite_output(value_of(out.output), h, "flow_attention_causal");
  return out;
}

// softmax(Q K^T) V per head, without temperature scaling.
template <typename X>
X canonical_attention(const X& q, const X& k, const X& v, const AttentionConfig& cfg) {
  detail::require_attention_inputs(q, k, v, cfg, cfg.causal);
  const std::size_t h = cfg.heads;
  const X qh = swap_axes(split_heads(q, h), 0, 1);  // h x n x e
  const X kt = transpose_last2(swap_axes(split_heads(k, h), 0, 1));  // h x e x m
  const X vh = swap_axes(split_heads(v, h), 0, 1);  // h x m x e'
  X scores = matmul(qh, kt);
  if (cfg.causal) scores = causal_mask(scores);
  const X out = merge_heads(swap_axes(matmul(softmax_axis(scores, 2), vh), 0, 1));
  detail::require_finite_output(value_of(out), h, "canonical_attention");
  return out;
}

template <typename X>
X canonical_attention(const X& q, const X& k, const X& v, bool causal) {
  AttentionConfig cfg;
  cfg.mechanism = Mechanism::kCanonical;
  cfg.causal = causal;
  return canonical_attention(q, k, v, cfg);
}

// R_i = phi(Q_i) (sum_j phi(K_j)^T V_j) / (phi(Q_i) sum_j phi(K_j)^T) with
// phi = elu + 1, contracting keys with values first. The causal variant
// restricts both sums to j <= i.
template <typename X>
X linear_attention_baseline(const X& q, const X& k, const X& v, const AttentionConfig& cfg) {
  using T = scalar_t<X>;
  detail::require_attention_inputs(q, k, v, cfg, cfg.causal);
  const std::size_t h = cfg.heads;
  const X qf = elu_plus_one(split_heads(q, h));
  const X kf = elu_plus_one(split_heads(k, h));
  const X vs = split_heads(v, h);
  X numerator, denominator;
  if (cfg.causal) {
    numerator = causal_dot_product(qf, kf, vs);
    denominator = sum_axis(mul(qf, cumsum_axis(kf, 0)), 2);
  } else {
    const X kv = matmul(transpose_last2(swap_axes(kf, 0, 1)), swap_axes(vs, 0, 1));
    numerator = swap_axes(matmul(swap_axes(qf, 0, 1), kv), 0, 1);
    denominator = detail::rowdot(qf, sum_axis(kf, 0));
  }
  const X out = merge_heads(stable_div(numerator, denominator, static_cast<T>(cfg.eps)));
  detail::require_finite_output(value_of(out), h, "linear_attention_baseline");
  return out;
}

template <typename X>
X linear_attention_baseline(const X& q, const X& k, const X& v) {
  AttentionConfig cfg;
  cfg.mechanism = Mechanism::kLinearBaseline;
  return linear_attention_baseline(q, k, v, cfg);
}

}  // namespace flowattn

#include "flowattn/oracle.hpp"

namespace flowattn {

// Dispatches on cfg.mechanism. The dense flow oracle has no differentiable
// form and is rejected on a tape.
template <typename X>
AttentionOutput<X> attend(const X& q, const X& k, const X& v, const AttentionConfig& cfg) {
  switch (cfg.mechanism) {
    case Mechanism::kCanonical: return {canonical_attention(q, k, v, cfg), std::nullopt};
    case Mechanism::kLinearBaseline: return {linear_attention_baseline(q, k, v, cfg), std::nullopt};
    case Mechanism::kFlowNormal: return flow_attention_normal(q, k, v, cfg);
    case Mechanism::kFlowCausal: return flow_attention_causal(q, k, v, cfg);
    case Mechanism::kFlowOracle:
      if constexpr (std::is_same_v<X, Tensor<scalar_t<X>>>) {
        return flow_oracle_dense_with_stats(q, k, v, cfg);
      } else {
        throw UnsupportedError("flow_oracle has no differentiable form; use flow_normal for training");
      }
  }
  throw ContractError("unknown attention mechanism");
}

}  // namespace flowattn

#endif  // FLOWATTN_ATTENTION_HPP_
