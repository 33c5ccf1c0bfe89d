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

// Brute-force Flow-Attention references. Both materialize the per-head
// capacity matrix C_ij = phi(Q_i) . phi(K_j) that the linear kernels avoid,
// and are written with scalar loops only: no tensor primitive is shared with
// the code they check.

#ifndef FLOWATTN_ORACLE_HPP_
#define FLOWATTN_ORACLE_HPP_

#include <cmath>
#include <limits>
#include <vector>

#include "flowattn/attention.hpp"

namespace flowattn {

namespace oracle_detail {

template <typename T>
T feature(T x, FeatureMap phi) {
  switch (phi) {
    case FeatureMap::kSigmoid: return T(1) / (T(1) + std::exp(-x));
    case FeatureMap::kEluPlusOne: return x > T(0) ? x + T(1) : std::exp(x);
    case FeatureMap::kRelu: return x > T(0) ? x : T(0);
  }
  return x;
}

template <typename T>
T logistic(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

// Row-major [rows x e] slice of head `head` after the feature map.
template <typename T>
std::vector<T> head_features(const Tensor<T>& x, std::size_t head, std::size_t e, FeatureMap phi) {
  const std::size_t rows = x.extent(0), d = x.extent(1);
  std::vector<T> out(rows * e);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < e; ++c) out[r * e + c] = feature(x[r * d + head * e + c], phi);
  return out;
}

template <typename T>
T dot(const T* a, const T* b, std::size_t e) {
  T s = T(0);
  for (std::size_t c = 0; c < e; ++c) s += a[c] * b[c];
  return s;
}

}  // namespace oracle_detail

// Dense O(n m d) evaluation of normal Flow-Attention with the same eps,
// activations and ablation switches as flow_attention_normal.
template <typename T>
AttentionOutput<Tensor<T>> flow_oracle_dense_with_stats(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                                        const AttentionConfig& cfg) {
  using namespace oracle_detail;
  detail::require_attention_inputs(q, k, v, cfg, false);
  const std::size_t n = q.extent(0), m = k.extent(0), d = q.extent(1), dv = v.extent(1);
  const std::size_t h = cfg.heads, e = d / h, ev = dv / h;
  if (n * m > cfg.oracle_cap) {
    throw ResourceError("flow_oracle_dense: " + std::to_string(n) + " x " + std::to_string(m) +
                        " capacity matrix exceeds cap of " + std::to_string(cfg.oracle_cap) + " entries");
  }
  const T eps = static_cast<T>(cfg.eps);
  Tensor<T> out(Shape{n, dv});
  FlowStats<T> stats{Tensor<T>(Shape{n, h}), Tensor<T>(Shape{m, h}), Tensor<T>(Shape{n, h}), Tensor<T>(Shape{m, h})};
  std::vector<T> cap(n * m), in(n), og(m), in_hat(n), og_hat(m), comp(m), alloc(n);

  for (std::size_t hd = 0; hd < h; ++hd) {
    const auto qf = head_features(q, hd, e, cfg.phi);
    const auto kf = head_features(k, hd, e, cfg.phi);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) cap[i * m + j] = dot(&qf[i * e], &kf[j * e], e);

    std::fill(in.begin(), in.end(), T(0));
    std::fill(og.begin(), og.end(), T(0));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        in[i] += cap[i * m + j];
        og[j] += cap[i * m + j];
      }
    std::fill(in_hat.begin(), in_hat.end(), T(0));
    std::fill(og_hat.begin(), og_hat.end(), T(0));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        in_hat[i] += cap[i * m + j] / (og[j] + eps);
        og_hat[j] += cap[i * m + j] / (in[i] + eps);
      }

    if (cfg.competition_act == Activation::kSoftmax) {
      T mx = -std::numeric_limits<T>::infinity();
      for (T x : og_hat) mx = std::max(mx, x);
      T total = T(0);
      for (std::size_t j = 0; j < m; ++j) total += std::exp(og_hat[j] - mx);
      for (std::size_t j = 0; j < m; ++j) comp[j] = std::exp(og_hat[j] - mx) / total;
    } else {
      for (std::size_t j = 0; j < m; ++j) comp[j] = logistic(og_hat[j]);
    }
    if (!cfg.competition) std::fill(comp.begin(), comp.end(), T(1));

    if (cfg.allocation_act == Activation::kSigmoid) {
      for (std::size_t i = 0; i < n; ++i) alloc[i] = logistic(in_hat[i]);
    } else {
      T mx = -std::numeric_limits<T>::infinity();
      for (T x : in_hat) mx = std::max(mx, x);
      T total = T(0);
      for (std::size_t i = 0; i < n; ++i) total += std::exp(in_hat[i] - mx);
      for (std::size_t i = 0; i < n; ++i) alloc[i] = std::exp(in_hat[i] - mx) / total;
    }
    if (!cfg.allocation) std::fill(alloc.begin(), alloc.end(), T(1));

    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < ev; ++c) {
        T acc = T(0);
        for (std::size_t j = 0; j < m; ++j) acc += cap[i * m + j] / (in[i] + eps) * comp[j] * v[j * dv + hd * ev + c];
        out[i * dv + hd * ev + c] = alloc[i] * acc;
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      stats.incoming[i * h + hd] = in[i];
      stats.conserved_incoming[i * h + hd] = in_hat[i];
    }
    for (std::size_t j = 0; j < m; ++j) {
      stats.outgoing[j * h + hd] = og[j];
      stats.conserved_outgoing[j * h + hd] = og_hat[j];
    }
  }
  return {std::move(out), std::move(stats)};
}

template <typename T>
Tensor<T> flow_oracle_dense(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, const AttentionConfig& cfg) {
  return flow_oracle_dense_with_stats(q, k, v, cfg).output;
}

// Causal Flow-Attention evaluated position by position: every quantity at
// position t is rebuilt from explicit sums over the prefix 1..t, including
// the 1/t averaging, the prefix softmax of O^ (rescaled by t) and the
// sigmoid gate on I^. O(n^2 d) per head.
template <typename T>
Tensor<T> flow_causal_prefix_oracle(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                    const AttentionConfig& cfg) {
  using namespace oracle_detail;
  detail::require_attention_inputs(q, k, v, cfg, true);
  const std::size_t n = q.extent(0), d = q.extent(1), dv = v.extent(1);
  const std::size_t h = cfg.heads, e = d / h, ev = dv / h;
  const T eps = static_cast<T>(cfg.eps);
  Tensor<T> out(Shape{n, dv});
  std::vector<T> in(n), og(n), in_hat(n), og_hat(n), comp(n), alloc(n);

  for (std::size_t hd = 0; hd < h; ++hd) {
    const auto qf = head_features(q, hd, e, cfg.phi);
    const auto kf = head_features(k, hd, e, cfg.phi);
    auto cap = [&](std::size_t i, std::size_t j) { return dot(&qf[i * e], &kf[j * e], e); };

    for (std::size_t t = 0; t < n; ++t) {
      const T len = T(t + 1);
      T si = T(0), so = T(0);
      for (std::size_t j = 0; j <= t; ++j) {
        si += cap(t, j);
        so += cap(j, t);
      }
      in[t] = si / len;
      og[t] = so / len;
    }
    for (std::size_t t = 0; t < n; ++t) {
      const T len = T(t + 1);
      T si = T(0), so = T(0);
      for (std::size_t j = 0; j <= t; ++j) {
        si += cap(t, j) / (og[j] + eps);
        so += cap(j, t) / (in[j] + eps);
      }
      in_hat[t] = si / len;
      og_hat[t] = so / len;
    }
    for (std::size_t t = 0; t < n; ++t) {
      if (!cfg.competition) {
        comp[t] = T(1);
      } else if (cfg.competition_act == Activation::kSoftmax) {
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j <= t; ++j) mx = std::max(mx, og_hat[j]);
        T total = T(0);
        for (std::size_t j = 0; j <= t; ++j) total += std::exp(og_hat[j] - mx);
        comp[t] = std::exp(og_hat[t] - mx) / total * T(t + 1);
      } else {
        comp[t] = logistic(og_hat[t]);
      }
      if (!cfg.allocation) {
        alloc[t] = T(1);
      } else if (cfg.allocation_act == Activation::kSigmoid) {
        alloc[t] = logistic(in_hat[t]);
      } else {
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j <= t; ++j) mx = std::max(mx, in_hat[j]);
        T total = T(0);
        for (std::size_t j = 0; j <= t; ++j) total += std::exp(in_hat[j] - mx);
        alloc[t] = std::exp(in_hat[t] - mx) / total;
      }
    }
    for (std::size_t t = 0; t < n; ++t) {
      const T norm = in[t] * T(t + 1) + eps;
      for (std::size_t c = 0; c < ev; ++c) {
        T acc = T(0);
        for (std::size_t j = 0; j <= t; ++j) acc += cap(t, j) / norm * comp[j] * v[j * dv + hd * ev + c];
        out[t * dv + hd * ev + c] = alloc[t] * acc;
      }
    }
  }
  return out;
}

}  // namespace flowattn

#endif  // FLOWATTN_ORACLE_HPP_
