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

// Flowformer: token + position embedding, post-norm attention/FFN blocks and
// an LM or classification head. forward() is written once against the
// unqualified primitive set and runs eagerly on Tensor<T> or on a tape.

#ifndef FLOWATTN_MODEL_HPP_
#define FLOWATTN_MODEL_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "flowattn/attention.hpp"
#include "flowattn/autodiff.hpp"
#include "flowattn/rng.hpp"
#include "flowattn/tensor.hpp"

namespace flowattn {

enum class HeadType { kLm, kClassification };

std::string_view to_string(HeadType h);
HeadType parse_head_type(std::string_view s);

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t max_seq_len = 0;
  std::size_t layers = 2;
  std::size_t channels = 32;
  std::size_t ffn_channels = 0;  // 0 selects 4 * channels
  AttentionConfig attention;
  HeadType head = HeadType::kLm;
  std::size_t num_classes = 0;
  bool tie_embeddings = false;
  double dropout = 0.0;
  double ln_eps = 1e-5;

  std::size_t heads() const { return attention.heads; }
  std::size_t ffn() const { return ffn_channels == 0 ? 4 * channels : ffn_channels; }
  std::size_t outputs() const { return head == HeadType::kLm ? vocab_size : num_classes; }
};

// Throws ContractError / DimensionError for an unusable config.
void validate(const ModelConfig& cfg);

// Parameter names and shapes in initialization order.
std::vector<std::pair<std::string, Shape>> parameter_shapes(const ModelConfig& cfg);
std::size_t parameter_count(const ModelConfig& cfg);

using ParamTensors = std::map<std::string, Tensor<double>>;

struct TrainingState {
  std::uint64_t step = 0;
  ParamTensors first_moment;
  ParamTensors second_moment;
};

struct Checkpoint {
  ModelConfig config;
  ParamTensors parameters;
  std::optional<TrainingState> training;
};

Checkpoint init_parameters(const ModelConfig& cfg, std::uint64_t seed);

// Raises ContractError unless names and shapes match the architecture.
void validate_parameters(const ModelConfig& cfg, const ParamTensors& params);

// FLOWCKPT1 file: magic, u64 LE header length, JSON header, raw LE data.
// dtype is "f32" or "f64"; f32 narrows on save.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path, std::string_view dtype = "f64");
Checkpoint load_checkpoint(const std::filesystem::path& path);

template <typename X>
struct ForwardResult {
  X logits;  // n x vocab (lm) or num_classes (classification)
  std::vector<std::optional<FlowStats<scalar_t<X>>>> stats;  // one per layer
};

// Per-call dropout masks; an empty rng disables dropout.
template <typename T>
struct DropoutSource {
  Rng* rng = nullptr;
  double rate = 0.0;
  bool active() const { return rng != nullptr && rate > 0.0; }
};

namespace detail {

template <typename X>
X linear(const X& x, const X& w, const X& b) {
  return add(matmul(x, w), broadcast_axis(b, 0, value_of(x).extent(0)));
}

template <typename X, typename T>
X maybe_dropout(const X& x, const DropoutSource<T>& drop) {
  if (!drop.active()) return x;
  Tensor<T> mask(value_of(x).shape());
  const T keep = static_cast<T>(1.0 / (1.0 - drop.rate));
  for (T& m : mask.values()) m = drop.rng->uniform() < drop.rate ? T(0) : keep;
  if constexpr (std::is_same_v<X, Tensor<T>>) {
    return mul(x, mask);
  } else {
    return dropout(x, std::move(mask));
  }
}

inline void require_tokens(const ModelConfig& cfg, std::span<const std::int64_t> tokens) {
  if (tokens.empty()) throw DimensionError("forward: empty token sequence");
  if (tokens.size() > cfg.max_seq_len) {
    throw DimensionError("forward: sequence length " + std::to_string(tokens.size()) + " exceeds max_seq_len " +
                         std::to_string(cfg.max_seq_len));
  }
}

}  // namespace detail

// X^0 = embed(tokens) + pos; Z = LN(attn(X) + X); X' = LN(FFN(Z) + Z).
template <typename X, typename T = scalar_t<X>>
ForwardResult<X> forward(const ModelConfig& cfg, const std::map<std::string, X>& p,
                         std::span<const std::int64_t> tokens, DropoutSource<T> drop = {}) {
  detail::require_tokens(cfg, tokens);
  const std::size_t n = tokens.size();
  std::vector<std::int64_t> positions(n);
  for (std::size_t i = 0; i < n; ++i) positions[i] = static_cast<std::int64_t>(i);
  const T ln_eps = static_cast<T>(cfg.ln_eps);

  X x = add(gather_rows(p.at("embed.token"), tokens), gather_rows(p.at("embed.pos"), positions));
  x = detail::maybe_dropout(x, drop);

  ForwardResult<X> out;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string pre = "layers." + std::to_string(l) + ".";
    auto w = [&](const char* name) -> const X& { return p.at(pre + name); };
    const X q = detail::linear(x, w("attn.wq"), w("attn.bq"));
    const X k = detail::linear(x, w("attn.wk"), w("attn.bk"));
    const X v = detail::linear(x, w("attn.wv"), w("attn.bv"));
    AttentionOutput<X> a = attend(q, k, v, cfg.attention);
    out.stats.push_back(std::move(a.stats));
    const X attn = detail::maybe_dropout(detail::linear(a.output, w("attn.wo"), w("attn.bo")), drop);
    const X z = layer_norm(add(attn, x), w("ln1.gamma"), w("ln1.beta"), ln_eps);
    const X hidden = gelu(detail::linear(z, w("ffn.w1"), w("ffn.b1")));
    const X ffn = detail::maybe_dropout(detail::linear(hidden, w("ffn.w2"), w("ffn.b2")), drop);
    x = layer_norm(add(ffn, z), w("ln2.gamma"), w("ln2.beta"), ln_eps);
  }

  const X& head_w = cfg.tie_embeddings ? p.at("embed.token") : p.at("head.w");
  auto project = [&](const X& h) {
    const X logits = cfg.tie_embeddings ? matmul(h, transpose_last2(head_w)) : matmul(h, head_w);
    return add(logits, broadcast_axis(p.at("head.b"), 0, value_of(h).extent(0)));
  };
  if (cfg.head == HeadType::kLm) {
    out.logits = project(x);
  } else {
    const X pooled = reshape(scale(sum_axis(x, 0), static_cast<T>(1.0 / static_cast<double>(n))),
                             Shape{1, cfg.channels});
    out.logits = reshape(project(pooled), Shape{cfg.num_classes});
  }
  return out;
}

template <typename T>
std::map<std::string, Tensor<T>> cast_parameters(const ParamTensors& params) {
  std::map<std::string, Tensor<T>> out;
  for (const auto& [name, t] : params) out.emplace(name, t.template cast<T>());
  return out;
}

template <typename T>
std::map<std::string, ad::Var<T>> tape_parameters(ad::Tape<T>& tape, const std::map<std::string, Tensor<T>>& params) {
  std::map<std::string, ad::Var<T>> out;
  for (const auto& [name, t] : params) out.emplace(name, tape.parameter(name, t));
  return out;
}

}  // namespace flowattn

#endif  // FLOWATTN_MODEL_HPP_
