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

#include "flowattn/serialize.hpp"

#include <string>

namespace flowattn {

namespace detail {

void require_known_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed, const char* what) {
  if (!j.is_object()) throw ContractError(std::string(what) + ": expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (std::string_view a : allowed) ok = ok || a == key;
    if (!ok) throw ContractError(std::string(what) + ": unknown key '" + key + "'");
  }
}

}  // namespace detail

namespace {

template <typename V>
void read_if(const nlohmann::json& j, const char* key, V& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const nlohmann::json::exception& e) {
    throw ContractError(std::string("config key '") + key + "': " + e.what());
  }
}

}  // namespace

nlohmann::json to_json(const AttentionConfig& cfg) {
  return {
      {"mechanism", std::string(to_string(cfg.mechanism))},
      {"heads", cfg.heads},
      {"phi", std::string(to_string(cfg.phi))},
      {"competition_act", std::string(to_string(cfg.competition_act))},
      {"allocation_act", std::string(to_string(cfg.allocation_act))},
      {"eps", cfg.eps},
      {"competition", cfg.competition},
      {"allocation", cfg.allocation},
      {"causal", cfg.causal},
      {"oracle_cap", cfg.oracle_cap},
  };
}

AttentionConfig attention_config_from_json(const nlohmann::json& j, AttentionConfig base) {
  detail::require_known_keys(j,
                             {"mechanism", "heads", "phi", "competition_act", "allocation_act", "eps", "competition",
                              "allocation", "causal", "oracle_cap"},
                             "attention config");
  if (j.contains("mechanism")) base.mechanism = parse_mechanism(j.at("mechanism").get<std::string>());
  if (j.contains("phi")) base.phi = parse_feature_map(j.at("phi").get<std::string>());
  if (j.contains("competition_act")) base.competition_act = parse_activation(j.at("competition_act").get<std::string>());
  if (j.contains("allocation_act")) base.allocation_act = parse_activation(j.at("allocation_act").get<std::string>());
  read_if(j, "heads", base.heads);
  read_if(j, "eps", base.eps);
  read_if(j, "competition", base.competition);
  read_if(j, "allocation", base.allocation);
  read_if(j, "causal", base.causal);
  read_if(j, "oracle_cap", base.oracle_cap);
  return base;
}

nlohmann::json to_json(const ModelConfig& cfg) {
  return {
      {"vocab_size", cfg.vocab_size},
      {"max_seq_len", cfg.max_seq_len},
      {"layers", cfg.layers},
      {"channels", cfg.channels},
      {"ffn_channels", cfg.ffn()},
      {"attention", to_json(cfg.attention)},
      {"head", std::string(to_string(cfg.head))},
      {"num_classes", cfg.num_classes},
      {"tie_embeddings", cfg.tie_embeddings},
      {"dropout", cfg.dropout},
      {"ln_eps", cfg.ln_eps},
  };
}

ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base) {
  detail::require_known_keys(j,
                             {"vocab_size", "max_seq_len", "layers", "channels", "ffn_channels", "attention", "head",
                              "num_classes", "tie_embeddings", "dropout", "ln_eps"},
                             "model config");
  read_if(j, "vocab_size", base.vocab_size);
  read_if(j, "max_seq_len", base.max_seq_len);
  read_if(j, "layers", base.layers);
  read_if(j, "channels", base.channels);
  read_if(j, "ffn_channels", base.ffn_channels);
  if (j.contains("attention")) base.attention = attention_config_from_json(j.at("attention"), base.attention);
  if (j.contains("head")) base.head = parse_head_type(j.at("head").get<std::string>());
  read_if(j, "num_classes", base.num_classes);
  read_if(j, "tie_embeddings", base.tie_embeddings);
  read_if(j, "dropout", base.dropout);
  read_if(j, "ln_eps", base.ln_eps);
  return base;
}

nlohmann::json to_json(const TrainConfig& cfg) {
  return {
      {"steps", cfg.steps},       {"batch", cfg.batch},
      {"lr", cfg.lr},             {"warmup", cfg.warmup},
      {"beta1", cfg.beta1},       {"beta2", cfg.beta2},
      {"adam_eps", cfg.adam_eps}, {"clip", cfg.clip},
      {"seed", cfg.seed},         {"eval_interval", cfg.eval_interval},
      {"eval_batch", cfg.eval_batch}, {"dtype", cfg.dtype},
  };
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base) {
  detail::require_known_keys(j,
                             {"steps", "batch", "lr", "warmup", "beta1", "beta2", "adam_eps", "clip", "seed",
                              "eval_interval", "eval_batch", "dtype"},
                             "train config");
  read_if(j, "steps", base.steps);
  read_if(j, "batch", base.batch);
  read_if(j, "lr", base.lr);
  read_if(j, "warmup", base.warmup);
  read_if(j, "beta1", base.beta1);
  read_if(j, "beta2", base.beta2);
  read_if(j, "adam_eps", base.adam_eps);
  read_if(j, "clip", base.clip);
  read_if(j, "seed", base.seed);
  read_if(j, "eval_interval", base.eval_interval);
  read_if(j, "eval_batch", base.eval_batch);
  read_if(j, "dtype", base.dtype);
  return base;
}

nlohmann::json to_json(const TaskParams& p) {
  return {
      {"kind", std::string(to_string(p.kind))},
      {"seq_len", p.seq_len},
      {"vocab", p.vocab},
      {"max_depth", p.max_depth},
      {"max_len", p.max_len},
      {"corpus", p.corpus.string()},
      {"split", p.split},
      {"eval_samples", p.eval_samples},
  };
}

TaskParams task_params_from_json(const nlohmann::json& j, TaskParams base) {
  detail::require_known_keys(j, {"kind", "seq_len", "vocab", "max_depth", "max_len", "corpus", "split", "eval_samples"},
                             "task config");
  if (j.contains("kind")) base.kind = parse_task_kind(j.at("kind").get<std::string>());
  read_if(j, "seq_len", base.seq_len);
  read_if(j, "vocab", base.vocab);
  read_if(j, "max_depth", base.max_depth);
  read_if(j, "max_len", base.max_len);
  std::string corpus = base.corpus.string();
  read_if(j, "corpus", corpus);
  base.corpus = corpus;
  read_if(j, "split", base.split);
  read_if(j, "eval_samples", base.eval_samples);
  return base;
}

nlohmann::json to_json(const BenchConfig& cfg) {
  nlohmann::json mechs = nlohmann::json::array();
  for (Mechanism m : cfg.mechanisms) mechs.push_back(std::string(to_string(m)));
  return {
      {"mechanisms", mechs},
      {"lengths", cfg.lengths},
      {"channels", cfg.channels},
      {"heads", cfg.heads},
      {"reps", cfg.reps},
      {"warmup", cfg.warmup},
      {"with_backward", cfg.with_backward},
      {"seed", cfg.seed},
      {"memory_cap_bytes", cfg.memory_cap_bytes},
  };
}

BenchConfig bench_config_from_json(const nlohmann::json& j, BenchConfig base) {
  detail::require_known_keys(j,
                             {"mechanisms", "lengths", "channels", "heads", "reps", "warmup", "with_backward", "seed",
                              "memory_cap_bytes"},
                             "bench config");
  if (j.contains("mechanisms")) {
    std::vector<std::string> names;
    read_if(j, "mechanisms", names);
    base.mechanisms.clear();
    for (const auto& n : names) base.mechanisms.push_back(parse_mechanism(n));
  }
  read_if(j, "lengths", base.lengths);
  read_if(j, "channels", base.channels);
  read_if(j, "heads", base.heads);
  read_if(j, "reps", base.reps);
  read_if(j, "warmup", base.warmup);
  read_if(j, "with_backward", base.with_backward);
  read_if(j, "seed", base.seed);
  read_if(j, "memory_cap_bytes", base.memory_cap_bytes);
  return base;
}

}  // namespace flowattn
