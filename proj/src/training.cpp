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

#include "flowattn/training.hpp"

#include <chrono>
#include <cstdio>

namespace flowattn {

void validate(const TrainConfig& cfg) {
  if (cfg.steps < 1) throw ContractError("train: steps must be >= 1");
  if (!(cfg.lr > 0.0)) throw ContractError("train: learning rate must be positive");
  if (cfg.batch < 1) throw ContractError("train: batch must be >= 1");
  if (cfg.eval_batch < 1) throw ContractError("train: eval_batch must be >= 1");
  if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0 && cfg.beta2 >= 0.0 && cfg.beta2 < 1.0)) {
    throw ContractError("train: adam betas must lie in [0, 1)");
  }
  if (!(cfg.adam_eps > 0.0)) throw ContractError("train: adam eps must be positive");
  if (!(cfg.clip >= 0.0)) throw ContractError("train: clip must be >= 0");
  if (cfg.dtype != "f32" && cfg.dtype != "f64") throw ContractError("train: dtype must be f32 or f64");
}

double learning_rate(const TrainConfig& cfg, std::uint64_t step) {
  if (cfg.warmup == 0) return cfg.lr;
  const double s = static_cast<double>(std::max<std::uint64_t>(step, 1));
  const double w = static_cast<double>(cfg.warmup);
  return cfg.lr * std::min(s / w, std::sqrt(w / s));
}

void write_metrics_csv(const std::vector<MetricRow>& rows, std::ostream& out) {
  out << "step,loss,metric,seconds\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%llu,%.17g,%.17g,%.3f\n", static_cast<unsigned long long>(r.step), r.loss,
                  r.metric, r.seconds);
    out << buf;
  }
}

ModelConfig model_for_task(ModelConfig base, const Task& task) {
  base.vocab_size = task.vocab_size();
  base.max_seq_len = task.max_seq_len();
  if (task.num_classes() > 0) {
    base.head = HeadType::kClassification;
    base.num_classes = task.num_classes();
    base.tie_embeddings = false;
  } else {
    base.head = HeadType::kLm;
    base.num_classes = 0;
  }
  return base;
}

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a * 0x9E3779B97F4A7C15ULL + b + 0x632BE59BD9B4E5ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

template <typename T>
ParamMapT<double> widen(const ParamMapT<T>& m) {
  ParamMapT<double> out;
  for (const auto& [name, t] : m) out.emplace(name, t.template cast<double>());
  return out;
}

template <typename T>
std::vector<T> row_weights(const TaskBatch& batch, std::size_t b) {
  if (!batch.per_token) return {T(1)};
  const auto mask = batch.mask_row(b);
  return std::vector<T>(mask.begin(), mask.end());
}

std::vector<std::int64_t> row_targets(const TaskBatch& batch, std::size_t b) {
  if (!batch.per_token) return {batch.targets[b]};
  const auto t = batch.target_row(b);
  return {t.begin(), t.end()};
}

std::size_t scored_positions(const TaskBatch& batch) {
  if (!batch.per_token) return batch.batch;
  std::size_t n = 0;
  for (std::size_t b = 0; b < batch.batch; ++b)
    for (std::uint8_t m : batch.mask_row(b)) n += m;
  return n;
}

template <typename T>
EvalResult evaluate_typed(const ModelConfig& cfg, const ParamMapT<T>& params, const std::vector<TaskBatch>& batches) {
  double nll = 0.0;
  std::size_t correct = 0, scored = 0;
  for (const TaskBatch& batch : batches) {
    for (std::size_t b = 0; b < batch.batch; ++b) {
      const Tensor<T> logits = forward(cfg, params, batch.row(b)).logits;
      const auto targets = row_targets(batch, b);
      const auto weights = row_weights<T>(batch, b);
      const std::size_t classes = logits.extent(logits.rank() - 1);
      for (std::size_t r = 0; r < targets.size(); ++r) {
        if (weights[r] == T(0)) continue;
        const T* row = logits.data() + r * classes;
        nll += static_cast<double>(detail::log_sum_exp(row, classes) - row[targets[r]]);
        std::size_t best = 0;
        for (std::size_t c = 1; c < classes; ++c)
          if (row[c] > row[best]) best = c;
        correct += static_cast<std::int64_t>(best) == targets[r];
        ++scored;
      }
    }
  }
  if (scored == 0) throw ContractError("evaluate: no scored positions");
  EvalResult r;
  r.loss = nll / static_cast<double>(scored);
  r.perplexity = std::exp(r.loss);
  r.accuracy = static_cast<double>(correct) / static_cast<double>(scored);
  r.scored = scored;
  return r;
}

template <typename T>
Checkpoint to_checkpoint(const ModelConfig& cfg, const ParamMapT<T>& params, const AdamState<T>& adam) {
  Checkpoint ckpt{cfg, widen(params), std::nullopt};
  if (adam.step > 0) ckpt.training = TrainingState{adam.step, widen(adam.m), widen(adam.v)};
  return ckpt;
}

template <typename T>
TrainResult train_typed(const ModelConfig& model, const Task& task, const TrainConfig& cfg, const TrainOptions& opts) {
  Checkpoint start = opts.init ? *opts.init : init_parameters(model, cfg.seed);
  validate_parameters(model, start.parameters);
  ParamMapT<T> params = cast_parameters<T>(start.parameters);
  AdamState<T> adam;
  if (start.training) {
    adam.step = start.training->step;
    adam.m = cast_parameters<T>(start.training->first_moment);
    adam.v = cast_parameters<T>(start.training->second_moment);
  }

  const std::vector<TaskBatch> held_out = task.eval_batches(cfg.eval_batch);
  const std::uint64_t interval = cfg.eval_interval == 0 ? cfg.steps : cfg.eval_interval;
  const auto clock_start = std::chrono::steady_clock::now();
  std::optional<std::filesystem::path> ckpt_path;
  if (opts.out_dir) {
    std::filesystem::create_directories(*opts.out_dir);
    ckpt_path = *opts.out_dir / "checkpoint.ckpt";
  }

  TrainResult result;
  Checkpoint last_good = to_checkpoint(model, params, adam);
  for (std::uint64_t step = 1; step <= cfg.steps; ++step) {
    const TaskBatch batch = task.train_batch(mix(cfg.seed, step), cfg.batch);
    const std::size_t scored = scored_positions(batch);
    if (scored == 0) throw ContractError("train: batch with no scored positions");
    const T inv = static_cast<T>(1.0 / static_cast<double>(scored));

    ParamMapT<T> grads;
    double loss = 0.0;
    for (std::size_t b = 0; b < batch.batch; ++b) {
      ad::Tape<T> tape;
      const auto vars = tape_parameters(tape, params);
      Rng drop_rng(mix(mix(cfg.seed, step), b + 1));
      const DropoutSource<T> drop{model.dropout > 0.0 ? &drop_rng : nullptr, model.dropout};
      const ad::Var<T> logits = forward(model, vars, batch.row(b), drop).logits;
      std::vector<T> weights = row_weights<T>(batch, b);
      for (T& w : weights) w *= inv;
      const ad::Var<T> sample_loss = ad::cross_entropy_sum(logits, row_targets(batch, b), std::move(weights));
      loss += static_cast<double>(sample_loss.value()[0]);
      auto g = tape.backward(sample_loss);
      if (grads.empty()) {
        grads = std::move(g);
      } else {
        for (auto& [name, t] : g) {
          Tensor<T>& acc = grads.at(name);
          for (std::size_t i = 0; i < t.size(); ++i) acc[i] += t[i];
        }
      }
    }

    if (!std::isfinite(loss)) {
      std::string where;
      if (ckpt_path) {
        save_checkpoint(last_good, *ckpt_path, cfg.dtype);
        where = "; last good checkpoint kept at " + ckpt_path->string();
      }
      throw DomainError("train: loss diverged at step " + std::to_string(step) + where);
    }
    adam_step(params, std::move(grads), adam, cfg);

    if (step % interval == 0 || step == cfg.steps) {
      const EvalResult ev = evaluate_typed(model, params, held_out);
      const double seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - clock_start).count();
      MetricRow row{step, loss, ev.accuracy, seconds};
      result.log.push_back(row);
      result.final_eval = ev;
      last_good = to_checkpoint(model, params, adam);
      if (ckpt_path) save_checkpoint(last_good, *ckpt_path, cfg.dtype);
      if (opts.on_eval) opts.on_eval(row);
    }
  }
  result.checkpoint = std::move(last_good);
  return result;
}

}  // namespace

TrainResult train(const ModelConfig& model, const Task& task, const TrainConfig& cfg, const TrainOptions& opts) {
  validate(cfg);
  validate(model);
  if (model.vocab_size < task.vocab_size() || model.max_seq_len < task.max_seq_len()) {
    throw ContractError("train: model vocabulary or length smaller than the task needs");
  }
  if ((task.num_classes() > 0) != (model.head == HeadType::kClassification)) {
    throw ContractError("train: task '" + std::string(task.name()) + "' needs a " +
                        (task.num_classes() > 0 ? "classification" : "lm") + " head");
  }
  if (task.num_classes() > 0 && model.num_classes != task.num_classes()) {
    throw ContractError("train: model num_classes does not match the task");
  }
  if (task.requires_causal() && !model.attention.is_causal()) {
    throw ContractError("train: task '" + std::string(task.name()) +
                        "' predicts tokens that appear in later inputs; use a causal mechanism");
  }
  if (cfg.dtype == "f32") return train_typed<float>(model, task, cfg, opts);
  return train_typed<double>(model, task, cfg, opts);
}

EvalResult evaluate(const Checkpoint& ckpt, const std::vector<TaskBatch>& batches, std::string_view dtype) {
  validate_parameters(ckpt.config, ckpt.parameters);
  if (dtype == "f32") return evaluate_typed(ckpt.config, cast_parameters<float>(ckpt.parameters), batches);
  if (dtype == "f64") return evaluate_typed(ckpt.config, cast_parameters<double>(ckpt.parameters), batches);
  throw ContractError("evaluate: dtype must be f32 or f64");
}

EntropyReport competition_entropy(const Checkpoint& ckpt, const std::vector<TaskBatch>& batches) {
  if (!ckpt.config.attention.has_flow_stats()) {
    throw UnsupportedError("competition_entropy: mechanism " + std::string(to_string(ckpt.config.attention.mechanism)) +
                           " has no flow statistics");
  }
  const auto params = cast_parameters<double>(ckpt.parameters);
  double entropy = 0.0, uniform = 0.0;
  std::size_t count = 0;
  for (const TaskBatch& batch : batches) {
    for (std::size_t b = 0; b < batch.batch; ++b) {
      const auto fwd = forward(ckpt.config, params, batch.row(b));
      for (const auto& stats : fwd.stats) {
        const Tensor<double> p = softmax_axis(stats->conserved_outgoing, 0);  // m x h
        const std::size_t m = p.extent(0), h = p.extent(1);
        for (std::size_t hd = 0; hd < h; ++hd) {
          double hsum = 0.0;
          for (std::size_t j = 0; j < m; ++j) {
            const double pj = p.at(j, hd);
            if (pj > 0.0) hsum -= pj * std::log(pj);
          }
          entropy += hsum;
          uniform += std::log(static_cast<double>(m));
          ++count;
        }
      }
    }
  }
  if (count == 0) throw ContractError("competition_entropy: no samples");
  return {entropy / static_cast<double>(count), uniform / static_cast<double>(count)};
}

}  // namespace flowattn
