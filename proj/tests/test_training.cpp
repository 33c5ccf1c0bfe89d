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

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "flowattn/gradcheck.hpp"
#include "flowattn/training.hpp"
#include "oracles.hpp"

using namespace flowattn;
using TensorD = flowattn::Tensor<double>;

namespace {

std::filesystem::path scratch_dir(const char* name) {
  auto dir = std::filesystem::temp_directory_path() / (std::string("flowattn_test_") + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

ModelConfig small_model(Mechanism mech) {
  ModelConfig m;
  m.layers = 1;
  m.channels = 16;
  m.ffn_channels = 32;
  m.attention.mechanism = mech;
  m.attention.heads = 2;
  return m;
}

std::unique_ptr<Task> copy_task() {
  TaskParams p;
  p.kind = TaskKind::kCopy;
  p.seq_len = 7;
  p.vocab = 6;
  p.eval_samples = 32;
  return make_task(p);
}

}  // namespace

TEST_CASE("cross entropy values") {
  const TensorD uniform(Shape{3, 9}, 0.7);
  const std::vector<std::int64_t> targets{0, 4, 8};
  const std::vector<std::uint8_t> all{1, 1, 1};
  CHECK(cross_entropy(uniform, targets, all) == doctest::Approx(std::log(9.0)).epsilon(1e-14));

  double previous = 1e9;
  for (double margin : {0.0, 1.0, 4.0, 16.0, 64.0}) {
    TensorD z(Shape{1, 5});
    z[2] = margin;
    const std::vector<std::int64_t> t{2};
    const std::vector<std::uint8_t> m{1};
    const double loss = cross_entropy(z, t, m);
    CHECK(loss < previous);
    previous = loss;
  }
  CHECK(previous < 1e-20);

  const TensorD logits = oracle::random(Shape{6, 5}, 3, -4, 4);
  const std::vector<std::int64_t> t{1, 0, 4, 2, 2, 3};
  const std::vector<std::uint8_t> mask{1, 0, 1, 1, 0, 1};
  double naive = 0.0;
  for (std::size_t r : {0, 2, 3, 5}) {
    double z = 0.0;
    for (std::size_t c = 0; c < 5; ++c) z += std::exp(logits.at(r, c));
    naive += -std::log(std::exp(logits.at(r, static_cast<std::size_t>(t[r]))) / z);
  }
  naive /= 4.0;
  CHECK(std::abs(cross_entropy(logits, t, mask) - naive) <= 1e-12 * naive);

  const std::vector<std::uint8_t> none(6, 0);
  CHECK_THROWS_AS(cross_entropy(logits, t, none), ContractError);
}

TEST_CASE("cross entropy adjoint") {
  const ParamMap params{{"z", oracle::random(Shape{4, 6}, 5, -3, 3)}};
  auto fn = [](ad::Tape<double>&, const VarMap& v) {
    return ad::cross_entropy_sum(v.at("z"), {1, 5, 0, 2}, {0.5, 0.0, 0.25, 1.0});
  };
  CHECK(finite_diff_check(fn, params).worst() <= 1e-6);
}

TEST_CASE("learning rate schedule") {
  TrainConfig cfg;
  cfg.lr = 1e-3;
  cfg.warmup = 100;
  CHECK(learning_rate(cfg, 1) == doctest::Approx(1e-5));
  CHECK(learning_rate(cfg, 100) == doctest::Approx(1e-3));
  CHECK(learning_rate(cfg, 400) == doctest::Approx(5e-4));
  cfg.warmup = 0;
  CHECK(learning_rate(cfg, 7) == 1e-3);
}

TEST_CASE("adam step") {
  TrainConfig cfg;
  cfg.lr = 0.01;
  cfg.warmup = 4;

  ParamMapT<double> params{{"w", oracle::random(Shape{3}, 1)}};
  const TensorD start = params.at("w");
  AdamState<double> state;
  adam_step(params, {{"w", TensorD(Shape{3})}}, state, cfg);
  CHECK(params.at("w") == start);
  state.m.at("w") = TensorD(Shape{3}, 2.0);
  adam_step(params, {{"w", TensorD(Shape{3})}}, state, cfg);
  for (double m : state.m.at("w").values()) CHECK(m == doctest::Approx(1.8).epsilon(1e-15));

  // First step with g = 1: m_hat = v_hat = 1, so w moves by lr_1 / (1 + eps).
  ParamMapT<double> fresh{{"w", TensorD(Shape{2}, 0.5)}};
  AdamState<double> s1;
  cfg.clip = 0.0;
  adam_step(fresh, {{"w", TensorD(Shape{2}, 1.0)}}, s1, cfg);
  const double lr1 = 0.01 * (1.0 / 4.0);
  for (double w : fresh.at("w").values()) CHECK(w == doctest::Approx(0.5 - lr1 / (1.0 + 1e-8)).epsilon(1e-14));
  CHECK(s1.step == 1);

  ParamMapT<double> grads{{"a", TensorD::vector({6.0, 0.0})}, {"b", TensorD::vector({0.0, 8.0})}};
  CHECK(clip_gradients(grads, 1.0) == doctest::Approx(10.0));
  CHECK(std::abs(global_norm(grads) - 1.0) <= 1e-12);

  ParamMapT<double> bad{{"layers.0.attn.wq", TensorD::vector({1.0, std::nan("")})}};
  ParamMapT<double> target{{"layers.0.attn.wq", TensorD(Shape{2})}};
  try {
    adam_step(target, bad, state, cfg);
    FAIL("expected DomainError");
  } catch (const DomainError& e) {
    CHECK(std::string(e.what()).find("layers.0.attn.wq") != std::string::npos);
  }
}

TEST_CASE("initial loss is near ln(vocab)") {
  const auto task = copy_task();
  const ModelConfig model = model_for_task(small_model(Mechanism::kFlowCausal), *task);
  const auto params = init_parameters(model, 0).parameters;
  const TaskBatch batch = task->train_batch(1, 8);
  for (std::size_t b = 0; b < batch.batch; ++b) {
    const TensorD logits = forward(model, params, batch.row(b)).logits;
    const double loss = cross_entropy(logits, batch.target_row(b), batch.mask_row(b));
    CHECK(std::abs(loss - std::log(6.0)) <= 0.5);
  }
}

TEST_CASE("single-character corpus is learned quickly") {
  const auto dir = scratch_dir("single_char");
  {
    std::ofstream out(dir / "a.txt");
    out << std::string(400, 'a');
  }
  TaskParams p;
  p.kind = TaskKind::kCharLm;
  p.corpus = dir / "a.txt";
  p.seq_len = 16;
  p.eval_samples = 4;
  const auto task = make_task(p);
  CHECK(task->vocab_size() == 3);
  const ModelConfig model = model_for_task(small_model(Mechanism::kFlowCausal), *task);
  TrainConfig cfg;
  cfg.steps = 200;
  cfg.batch = 4;
  cfg.lr = 3e-3;
  cfg.warmup = 20;
  const TrainResult r = train(model, *task, cfg);
  CHECK(r.final_eval.loss < 0.01);
  CHECK(r.log.back().loss < 0.01);

  ModelConfig noncausal = model;
  noncausal.attention.mechanism = Mechanism::kFlowNormal;
  CHECK_THROWS_AS(train(noncausal, *task, cfg), ContractError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("training is deterministic and checkpoints round-trip") {
  const auto task = copy_task();
  const ModelConfig model = model_for_task(small_model(Mechanism::kFlowCausal), *task);
  TrainConfig cfg;
  cfg.steps = 40;
  cfg.batch = 4;
  cfg.lr = 3e-3;
  cfg.warmup = 10;
  cfg.eval_interval = 20;
  cfg.seed = 7;
  const auto dir = scratch_dir("determinism");
  TrainOptions opts;
  opts.out_dir = dir;
  const TrainResult a = train(model, *task, cfg, opts);
  const TrainResult b = train(model, *task, cfg);
  REQUIRE(a.log.size() == 2);
  REQUIRE(b.log.size() == 2);
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    CHECK(a.log[i].step == b.log[i].step);
    CHECK(a.log[i].loss == b.log[i].loss);
    CHECK(a.log[i].metric == b.log[i].metric);
  }
  CHECK(a.checkpoint.parameters == b.checkpoint.parameters);

  const Checkpoint loaded = load_checkpoint(dir / "checkpoint.ckpt");
  const auto eval = task->eval_batches(16);
  const EvalResult before = evaluate(a.checkpoint, eval);
  const EvalResult after = evaluate(loaded, eval);
  CHECK(before.loss == after.loss);
  CHECK(before.accuracy == after.accuracy);
  REQUIRE(loaded.training.has_value());
  CHECK(loaded.training->step == 40);

  std::ostringstream csv;
  write_metrics_csv(a.log, csv);
  CHECK(csv.str().rfind("step,loss,metric,seconds\n20,", 0) == 0);

  cfg.dtype = "f32";
  const TrainResult f = train(model, *task, cfg, opts);
  const Checkpoint f_loaded = load_checkpoint(dir / "checkpoint.ckpt");
  CHECK(evaluate(f.checkpoint, eval, "f32").loss == evaluate(f_loaded, eval, "f32").loss);
  std::filesystem::remove_all(dir);
}

TEST_CASE("train rejects mismatched heads") {
  TaskParams p;
  p.kind = TaskKind::kListOps;
  p.max_depth = 1;
  p.max_len = 16;
  const auto task = make_task(p);
  ModelConfig model = model_for_task(small_model(Mechanism::kFlowNormal), *task);
  model.head = HeadType::kLm;
  TrainConfig cfg;
  cfg.steps = 1;
  CHECK_THROWS_AS(train(model, *task, cfg), ContractError);
  cfg.steps = 0;
  CHECK_THROWS_AS(train(model_for_task(model, *task), *task, cfg), ContractError);
}

TEST_CASE("entropy report") {
  const auto task = copy_task();
  const ModelConfig model = model_for_task(small_model(Mechanism::kFlowCausal), *task);
  const EntropyReport r = competition_entropy(init_parameters(model, 0), task->eval_batches(8));
  CHECK(r.uniform == doctest::Approx(std::log(7.0)));
  CHECK(r.gap() >= 0.0);
  CHECK(r.gap() < 0.1);
  ModelConfig canon = model;
  canon.attention.mechanism = Mechanism::kCanonical;
  CHECK_THROWS_AS(competition_entropy(init_parameters(canon, 0), task->eval_batches(8)), UnsupportedError);
}
