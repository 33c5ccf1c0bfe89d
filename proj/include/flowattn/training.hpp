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

#ifndef FLOWATTN_TRAINING_HPP_
#define FLOWATTN_TRAINING_HPP_

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "flowattn/autodiff.hpp"
#include "flowattn/model.hpp"
#include "flowattn/tasks.hpp"
#include "flowattn/tensor.hpp"

namespace flowattn {

struct TrainConfig {
  std::uint64_t steps = 1000;
  std::size_t batch = 16;
  double lr = 3e-4;
  std::uint64_t warmup = 100;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double adam_eps = 1e-8;
  double clip = 1.0;  // global gradient norm; 0 disables clipping
  std::uint64_t seed = 0;
  std::uint64_t eval_interval = 0;  // 0 evaluates only after the last step
  std::size_t eval_batch = 64;
  std::string dtype = "f64";
};

void validate(const TrainConfig& cfg);

// lr * min(step / warmup, sqrt(warmup / step)); constant lr when warmup = 0.
double learning_rate(const TrainConfig& cfg, std::uint64_t step);

// ---------------------------------------------------------------------------
// Cross entropy
// ---------------------------------------------------------------------------

namespace detail {

// Row-wise log-sum-exp of an rows x classes block.
template <typename T>
T log_sum_exp(const T* row, std::size_t classes) {
  T hi = row[0];
  for (std::size_t c = 1; c < classes; ++c) hi = std::max(hi, row[c]);
  T s = T(0);
  for (std::size_t c = 0; c < classes; ++c) s += std::exp(row[c] - hi);
  return hi + std::log(s);
}

template <typename T>
std::size_t require_logits(const Tensor<T>& logits, std::size_t targets) {
  const std::size_t rows = logits.rank() == 1 ? 1 : logits.extent(0);
  if (logits.rank() > 2 || rows != targets) {
    throw DimensionError("cross_entropy: logits " + logits.shape().str() + " do not match " + std::to_string(targets) +
                         " targets");
  }
  return rows;
}

}  // namespace detail

// Mean negative log-likelihood over unmasked rows. logits is rows x classes,
// or a single row of classes for one target.
template <typename T>
T cross_entropy(const Tensor<T>& logits, std::span<const std::int64_t> targets, std::span<const std::uint8_t> mask) {
  const std::size_t rows = detail::require_logits(logits, targets.size());
  if (mask.size() != rows) throw DimensionError("cross_entropy: mask and targets differ in length");
  const std::size_t classes = logits.extent(logits.rank() - 1);
  T total = T(0);
  std::size_t count = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!mask[r]) continue;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= classes) {
      throw DataError("cross_entropy: target " + std::to_string(targets[r]) + " outside " + std::to_string(classes) +
                      " classes");
    }
    const T* row = logits.data() + r * classes;
    total += detail::log_sum_exp(row, classes) - row[targets[r]];
    ++count;
  }
  if (count == 0) throw ContractError("cross_entropy: every position is masked");
  return total / static_cast<T>(count);
}

namespace ad {

// sum_r weight_r * nll_r as a recorded scalar.
template <typename T>
Var<T> cross_entropy_sum(const Var<T>& logits, std::vector<std::int64_t> targets, std::vector<T> weights) {
  const Tensor<T>& z = logits.value();
  const std::size_t rows = flowattn::detail::require_logits(z, targets.size());
  const std::size_t classes = z.extent(z.rank() - 1);
  Tensor<T> probs(z.shape());
  T total = T(0);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = z.data() + r * classes;
    const T lse = flowattn::detail::log_sum_exp(row, classes);
    for (std::size_t c = 0; c < classes; ++c) probs[r * classes + c] = std::exp(row[c] - lse);
    if (weights[r] == T(0)) continue;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= classes) {
      throw DataError("cross_entropy: target " + std::to_string(targets[r]) + " outside " + std::to_string(classes) +
                      " classes");
    }
    total += weights[r] * (lse - row[targets[r]]);
  }
  const std::size_t il = logits.id();
  return logits.tape().record(
      Op::kCrossEntropy, {il}, Tensor<T>::scalar(total),
      [il, rows, classes, probs = std::move(probs), targets = std::move(targets), weights = std::move(weights)](
          Tape<T>& t, std::size_t self) {
        const T g = t.grad(self)[0];
        Tensor<T> dz = probs;
        for (std::size_t r = 0; r < rows; ++r) {
          T* row = dz.data() + r * classes;
          const T w = weights[r] * g;
          for (std::size_t c = 0; c < classes; ++c) row[c] *= w;
          if (weights[r] != T(0)) row[targets[r]] -= w;
        }
        t.accumulate(il, std::move(dz));
      });
}

}  // namespace ad

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

template <typename T>
using ParamMapT = std::map<std::string, Tensor<T>>;

template <typename T>
struct AdamState {
  std::uint64_t step = 0;
  ParamMapT<T> m;
  ParamMapT<T> v;
};

// Global L2 norm, accumulated in double over parameters in name order.
template <typename T>
double global_norm(const ParamMapT<T>& grads) {
  double s = 0.0;
  for (const auto& [name, g] : grads)
    for (T x : g.values()) s += static_cast<double>(x) * static_cast<double>(x);
  return std::sqrt(s);
}

// Rescales grads in place to global norm <= clip (clip = 0 disables).
// Returns the norm before clipping.
template <typename T>
double clip_gradients(ParamMapT<T>& grads, double clip) {
  const double norm = global_norm(grads);
  if (clip > 0.0 && norm > clip) {
    const double factor = clip / norm;
    for (auto& [name, g] : grads)
      for (T& x : g.values()) x = static_cast<T>(static_cast<double>(x) * factor);
  }
  return norm;
}

// One bias-corrected Adam update after global-norm clipping. Returns the
// pre-clip gradient norm. A non-finite gradient aborts before any update.
template <typename T>
double adam_step(ParamMapT<T>& params, ParamMapT<T> grads, AdamState<T>& state, const TrainConfig& cfg) {
  for (const auto& [name, g] : grads) {
    const auto it = params.find(name);
    if (it == params.end()) throw ContractError("adam_step: gradient for unknown parameter " + name);
    if (!(it->second.shape() == g.shape())) {
      throw DimensionError("adam_step: gradient shape " + g.shape().str() + " for parameter " + name + " of shape " +
                           it->second.shape().str());
    }
    for (T x : g.values()) {
      if (!std::isfinite(x)) throw DomainError("adam_step: non-finite gradient for parameter " + name);
    }
  }
  const double norm = clip_gradients(grads, cfg.clip);
  const std::uint64_t t = ++state.step;
  const double lr = learning_rate(cfg, t);
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (auto& [name, g] : grads) {
    Tensor<T>& p = params.at(name);
    auto [mit, m_new] = state.m.try_emplace(name, g.shape());
    auto [vit, v_new] = state.v.try_emplace(name, g.shape());
    Tensor<T>& m = mit->second;
    Tensor<T>& v = vit->second;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double update = lr * (mi / c1) / (std::sqrt(vi / c2) + cfg.adam_eps);
      p[i] = static_cast<T>(static_cast<double>(p[i]) - update);
    }
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Training and evaluation
// ---------------------------------------------------------------------------

struct MetricRow {
  std::uint64_t step = 0;
  double loss = 0.0;    // training loss at this step
  double metric = 0.0;  // held-out accuracy
  double seconds = 0.0;
};

// Writes step,loss,metric,seconds with round-trippable number formatting.
void write_metrics_csv(const std::vector<MetricRow>& rows, std::ostream& out);

struct EvalResult {
  double loss = 0.0;  // mean nll per scored position
  double perplexity = 0.0;
  double accuracy = 0.0;  // masked-token or classification accuracy
  std::size_t scored = 0;
};

struct TrainOptions {
  std::optional<std::filesystem::path> out_dir;  // checkpoint.ckpt goes here
  std::optional<Checkpoint> init;                // resume from a checkpoint
  std::function<void(const MetricRow&)> on_eval;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<MetricRow> log;
  EvalResult final_eval;
};

TrainResult train(const ModelConfig& model, const Task& task, const TrainConfig& cfg, const TrainOptions& opts = {});

EvalResult evaluate(const Checkpoint& ckpt, const std::vector<TaskBatch>& batches, std::string_view dtype = "f64");

// Shannon entropy of softmax(O^) over the whole sequence for flow
// mechanisms, averaged over layers, heads and samples, next to the uniform
// entropy ln(m) of the same samples.
struct EntropyReport {
  double entropy = 0.0;
  double uniform = 0.0;
  double gap() const { return uniform - entropy; }
};
EntropyReport competition_entropy(const Checkpoint& ckpt, const std::vector<TaskBatch>& batches);

// Fills model fields implied by the task (vocab, length, head type).
ModelConfig model_for_task(ModelConfig base, const Task& task);

}  // namespace flowattn

#endif  // FLOWATTN_TRAINING_HPP_
