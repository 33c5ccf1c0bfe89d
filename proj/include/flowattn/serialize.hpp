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

#ifndef FLOWATTN_SERIALIZE_HPP_
#define FLOWATTN_SERIALIZE_HPP_

#include "json.hpp"

#include "flowattn/attention.hpp"
#include "flowattn/bench.hpp"
#include "flowattn/model.hpp"
#include "flowattn/tasks.hpp"
#include "flowattn/training.hpp"

namespace flowattn {

// JSON forms of the configs. Readers accept partial objects layered over
// `base` and reject unknown keys with ContractError.
nlohmann::json to_json(const AttentionConfig& cfg);
nlohmann::json to_json(const ModelConfig& cfg);
AttentionConfig attention_config_from_json(const nlohmann::json& j, AttentionConfig base = {});
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});
nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});
nlohmann::json to_json(const TaskParams& p);
TaskParams task_params_from_json(const nlohmann::json& j, TaskParams base = {});
nlohmann::json to_json(const BenchConfig& cfg);
BenchConfig bench_config_from_json(const nlohmann::json& j, BenchConfig base = {});

namespace detail {

// Throws ContractError naming the first key of `j` not listed in `allowed`.
void require_known_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed, const char* what);

}  // namespace detail

}  // namespace flowattn

#endif  // FLOWATTN_SERIALIZE_HPP_
