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

#include "flowattn/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "flowattn/serialize.hpp"

namespace flowattn {

namespace {

constexpr std::string_view kMagic = "FLOWCKPT1";

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

}  // namespace

std::string_view to_string(HeadType h) { return h == HeadType::kLm ? "lm" : "classification"; }

HeadType parse_head_type(std::string_view s) {
  if (s == "lm") return HeadType::kLm;
  if (s == "classification") return HeadType::kClassification;
  throw ContractError("unknown head type '" + std::string(s) + "' (expected one of: lm, classification)");
}

void validate(const ModelConfig& cfg) {
  if (cfg.layers < 1) throw ContractError("model: layers must be >= 1");
  if (cfg.max_seq_len < 1) throw ContractError("model: max_seq_len must be >= 1");
  if (cfg.vocab_size < 1) throw ContractError("model: vocab_size must be >= 1");
  if (cfg.channels < 1) throw ContractError("model: channels must be >= 1");
  if (cfg.head == HeadType::kClassification && cfg.num_classes < 1) {
    throw ContractError("model: classification head needs num_classes >= 1");
  }
  if (cfg.tie_embeddings && cfg.head != HeadType::kLm) {
    throw ContractError("model: tie_embeddings applies to the lm head only");
  }
  if (!(cfg.dropout >= 0.0 && cfg.dropout < 1.0)) throw ContractError("model: dropout must lie in [0, 1)");
  validate(cfg.attention, cfg.channels);
}

std::vector<std::pair<std::string, Shape>> parameter_shapes(const ModelConfig& cfg) {
  const std::size_t d = cfg.channels, f = cfg.ffn();
  std::vector<std::pair<std::string, Shape>> out{
      {"embed.token", Shape{cfg.vocab_size, d}},
      {"embed.pos", Shape{cfg.max_seq_len, d}},
  };
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string pre = "layers." + std::to_string(l) + ".";
    for (const char* proj : {"q", "k", "v", "o"}) {
      out.emplace_back(pre + "attn.w" + proj, Shape{d, d});
      out.emplace_back(pre + "attn.b" + proj, Shape{d});
    }
    out.emplace_back(pre + "ln1.gamma", Shape{d});
    out.emplace_back(pre + "ln1.beta", Shape{d});
    out.emplace_back(pre + "ffn.w1", Shape{d, f});
    out.emplace_back(pre + "ffn.b1", Shape{f});
    out.emplace_back(pre + "ffn.w2", Shape{f, d});
    out.emplace_back(pre + "ffn.b2", Shape{d});
    out.emplace_back(pre + "ln2.gamma", Shape{d});
    out.emplace_back(pre + "ln2.beta", Shape{d});
  }
  if (!cfg.tie_embeddings) out.emplace_back("head.w", Shape{d, cfg.outputs()});
  out.emplace_back("head.b", Shape{cfg.outputs()});
  return out;
}

std::size_t parameter_count(const ModelConfig& cfg) {
  std::size_t total = 0;
  for (const auto& [name, shape] : parameter_shapes(cfg)) total += shape.numel();
  return total;
}

Checkpoint init_parameters(const ModelConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  Rng rng(seed);
  Checkpoint ckpt{cfg, {}, std::nullopt};
  for (const auto& [name, shape] : parameter_shapes(cfg)) {
    Tensor<double> t(shape);
    const bool is_embedding = name.rfind("embed.", 0) == 0;
    const bool is_gamma = name.ends_with(".gamma");
    const bool is_weight = shape.rank() == 2 && !is_embedding;
    if (is_embedding) {
      t = random_normal<double>(shape, rng, 0.02);
    } else if (is_gamma) {
      t = Tensor<double>(shape, 1.0);
    } else if (is_weight) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(shape[0]));
      t = random_uniform<double>(shape, rng, -bound, bound);
    }
    ckpt.parameters.emplace(name, std::move(t));
  }
  return ckpt;
}

void validate_parameters(const ModelConfig& cfg, const ParamTensors& params) {
  const auto expected = parameter_shapes(cfg);
  for (const auto& [name, shape] : expected) {
    const auto it = params.find(name);
    if (it == params.end()) throw ContractError("checkpoint: missing parameter " + name);
    if (!(it->second.shape() == shape)) {
      throw ContractError("checkpoint: parameter " + name + " has shape " + it->second.shape().str() +
                          ", architecture expects " + shape.str());
    }
  }
  if (params.size() != expected.size()) {
    for (const auto& [name, t] : params) {
      bool known = false;
      for (const auto& e : expected) known = known || e.first == name;
      if (!known) throw ContractError("checkpoint: unexpected parameter " + name);
    }
  }
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path, std::string_view dtype) {
  if (dtype != "f32" && dtype != "f64") throw ContractError("checkpoint: dtype must be f32 or f64");
  validate_parameters(ckpt.config, ckpt.parameters);
  const std::size_t width = dtype == "f32" ? 4 : 8;

  std::vector<std::pair<std::string, const Tensor<double>*>> tensors;
  for (const auto& [name, t] : ckpt.parameters) tensors.emplace_back(name, &t);
  if (ckpt.training) {
    for (const auto& [name, t] : ckpt.training->first_moment) tensors.emplace_back("adam.m." + name, &t);
    for (const auto& [name, t] : ckpt.training->second_moment) tensors.emplace_back("adam.v." + name, &t);
  }

  nlohmann::json header;
  header["format"] = std::string(kMagic);
  header["config"] = to_json(ckpt.config);
  header["dtype"] = std::string(dtype);
  if (ckpt.training) header["adam_step"] = ckpt.training->step;
  nlohmann::json entries = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    std::vector<std::size_t> dims;
    for (std::size_t a = 0; a < t->rank(); ++a) dims.push_back(t->extent(a));
    entries.push_back({{"name", name}, {"shape", dims}, {"offset", offset}, {"bytes", t->size() * width}});
    offset += t->size() * width;
  }
  header["tensors"] = entries;
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("checkpoint: cannot open " + path.string() + " for writing");
  out.write(kMagic.data(), static_cast<std::streamsize>(kMagic.size()));
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : tensors) {
    if (width == 8) {
      out.write(reinterpret_cast<const char*>(t->data()), static_cast<std::streamsize>(t->size() * 8));
    } else {
      std::vector<float> narrow(t->size());
      for (std::size_t i = 0; i < t->size(); ++i) narrow[i] = static_cast<float>((*t)[i]);
      out.write(reinterpret_cast<const char*>(narrow.data()), static_cast<std::streamsize>(narrow.size() * 4));
    }
  }
  if (!out) throw DataError("checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open " + path.string());
  std::string magic(kMagic.size(), '\0');
  in.read(magic.data(), static_cast<std::streamsize>(magic.size()));
  if (!in || magic != kMagic) throw DataError("checkpoint: " + path.string() + " is not a FLOWCKPT1 file");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len > (std::uint64_t{1} << 30)) throw DataError("checkpoint: corrupt header length");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw DataError("checkpoint: truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: header is not valid JSON: ") + e.what());
  }
  const std::string dtype = header.value("dtype", "");
  if (dtype != "f32" && dtype != "f64") throw DataError("checkpoint: unsupported dtype '" + dtype + "'");
  const std::size_t width = dtype == "f32" ? 4 : 8;

  Checkpoint ckpt;
  ckpt.config = model_config_from_json(header.at("config"));
  validate(ckpt.config);
  const std::streamoff data_start = in.tellg();
  TrainingState state;
  bool has_state = header.contains("adam_step");
  if (has_state) state.step = header.at("adam_step").get<std::uint64_t>();

  for (const auto& entry : header.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    const auto dims = entry.at("shape").get<std::vector<std::size_t>>();
    Tensor<double> t(Shape(dims.begin(), dims.end()));
    if (entry.at("bytes").get<std::uint64_t>() != t.size() * width) {
      throw DataError("checkpoint: byte count mismatch for " + name);
    }
    in.seekg(data_start + static_cast<std::streamoff>(entry.at("offset").get<std::uint64_t>()));
    if (width == 8) {
      in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * 8));
    } else {
      std::vector<float> narrow(t.size());
      in.read(reinterpret_cast<char*>(narrow.data()), static_cast<std::streamsize>(narrow.size() * 4));
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = narrow[i];
    }
    if (!in) throw DataError("checkpoint: truncated data for " + name);
    if (name.rfind("adam.m.", 0) == 0) {
      state.first_moment.emplace(name.substr(7), std::move(t));
    } else if (name.rfind("adam.v.", 0) == 0) {
      state.second_moment.emplace(name.substr(7), std::move(t));
    } else {
      ckpt.parameters.emplace(name, std::move(t));
    }
  }
  validate_parameters(ckpt.config, ckpt.parameters);
  if (has_state) {
    validate_parameters(ckpt.config, state.first_moment);
    validate_parameters(ckpt.config, state.second_moment);
    ckpt.training = std::move(state);
  }
  return ckpt;
}

}  // namespace flowattn
