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

// Acceptance run: one PASS/FAIL line per criterion, exit status 0 iff all pass.
// Usage: acceptance [criterion ...]   (default: 1-9)

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "flowattn/bench.hpp"
#include "flowattn/error.hpp"
#include "flowattn/inspect.hpp"
#include "flowattn/properties.hpp"
#include "flowattn/training.hpp"

using namespace flowattn;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool passed = false;
  std::string summary;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Outcome from_property(const PropertyResult& r, double budget_seconds) {
  Outcome o;
  o.passed = r.passed && r.seconds < budget_seconds;
  o.summary = fmt("worst %.3e <= %.0e over %zu cases, %.2f s (budget %.0f s)", r.worst, r.tolerance, r.cases,
                  r.seconds, budget_seconds);
  if (!r.detail.empty()) o.summary += "; " + r.detail;
  return o;
}

// ---------------------------------------------------------------------------
// Shared training runs for criteria 6-8
// ---------------------------------------------------------------------------

std::unique_ptr<Task> copy_task() {
  TaskParams p;
  p.kind = TaskKind::kCopy;
  p.seq_len = 11;
  p.vocab = 10;
  p.eval_samples = 256;
  return make_task(p);
}

std::unique_ptr<Task> listops_task() {
  TaskParams p;
  p.kind = TaskKind::kListOps;
  p.max_depth = 1;
  p.max_len = 16;
  p.eval_samples = 500;
  return make_task(p);
}

ModelConfig micro_model(Mechanism mech, const Task& task) {
  ModelConfig m;
  m.layers = 2;
  m.channels = 32;
  m.ffn_channels = 64;
  m.attention.mechanism = mech;
  m.attention.heads = 4;
  return model_for_task(m, task);
}

TrainConfig recipe(std::uint64_t steps, std::uint64_t eval_interval) {
  TrainConfig c;
  c.steps = steps;
  c.batch = 16;
  c.lr = 3e-3;
  c.warmup = 100;
  c.eval_interval = eval_interval;
  c.seed = 0;
  return c;
}

struct Runs {
  std::unique_ptr<Task> copy;
  ModelConfig copy_model;
  std::optional<TrainResult> copy_a, copy_b;
  double copy_seconds = 0.0;
};

Runs& runs() {
  static Runs r;
  return r;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

const TrainResult& trained_copy() {
  Runs& r = runs();
  if (!r.copy_a) {
    r.copy = copy_task();
    r.copy_model = micro_model(Mechanism::kFlowCausal, *r.copy);
    const auto t0 = std::chrono::steady_clock::now();
    r.copy_a = train(r.copy_model, *r.copy, recipe(3000, 250));
    r.copy_seconds = seconds_since(t0);
  }
  return *r.copy_a;
}

bool same_metrics(const std::vector<MetricRow>& a, const std::vector<MetricRow>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].step != b[i].step || a[i].loss != b[i].loss || a[i].metric != b[i].metric) return false;
  }
  return true;
}

// Mean Shannon entropy of softmax(O^) per (sample, layer, head), recomputed
// from the raw flow statistics with scalar loops.
std::pair<double, double> entropy_oracle(const Checkpoint& ckpt, const std::vector<TaskBatch>& batches) {
  const auto params = cast_parameters<double>(ckpt.parameters);
  double entropy = 0.0, uniform = 0.0;
  std::size_t count = 0;
  for (const TaskBatch& batch : batches) {
    for (std::size_t b = 0; b < batch.batch; ++b) {
      const auto fwd = forward(ckpt.config, params, batch.row(b));
      for (const auto& stats : fwd.stats) {
        const Tensor<double>& o = stats->conserved_outgoing;
        const std::size_t m = o.extent(0), h = o.extent(1);
        for (std::size_t hd = 0; hd < h; ++hd) {
          double top = -INFINITY;
          for (std::size_t j = 0; j < m; ++j) top = std::max(top, o.at(j, hd));
          double z = 0.0;
          for (std::size_t j = 0; j < m; ++j) z += std::exp(o.at(j, hd) - top);
          double e = 0.0;
          for (std::size_t j = 0; j < m; ++j) {
            const double p = std::exp(o.at(j, hd) - top) / z;
            if (p > 0.0) e -= p * std::log(p);
          }
          entropy += e;
          uniform += std::log(static_cast<double>(m));
          ++count;
        }
      }
    }
  }
  return {entropy / static_cast<double>(count), uniform / static_cast<double>(count)};
}

// ---------------------------------------------------------------------------
// Criteria
// ---------------------------------------------------------------------------

Outcome criterion_conservation() { return from_property(check_conservation(), 5.0); }
Outcome criterion_oracle() { return from_property(check_oracle_equivalence(), 10.0); }
Outcome criterion_causal() { return from_property(check_causality(), 10.0); }
Outcome criterion_gradients() { return from_property(check_gradients(), 30.0); }

Outcome criterion_scaling() {
  BenchConfig cfg;
  cfg.mechanisms = {Mechanism::kFlowNormal, Mechanism::kFlowCausal, Mechanism::kCanonical};
  cfg.lengths = {512, 1024, 2048, 4096};
  cfg.channels = 64;
  cfg.heads = 4;
  cfg.reps = 7;
  const auto t0 = std::chrono::steady_clock::now();
  const BenchReport r = bench_attention(cfg);
  const double elapsed = seconds_since(t0);

  auto exponent = [&](Mechanism m) { return r.fits.at(m) ? r.fits.at(m)->exponent : NAN; };
  const double en = exponent(Mechanism::kFlowNormal), ec = exponent(Mechanism::kFlowCausal),
               eq = exponent(Mechanism::kCanonical);
  const auto normal = r.series(Mechanism::kFlowNormal);
  const double ratio = normal.back()->median_seconds / normal.front()->median_seconds;
  bool monotone = true;
  for (Mechanism m : cfg.mechanisms) {
    const auto s = r.series(m);
    for (std::size_t i = 1; i < s.size(); ++i) monotone = monotone && s[i]->median_seconds >= s[i - 1]->median_seconds;
  }
  Outcome o;
  o.passed = en >= 0.8 && en <= 1.3 && ec >= 0.8 && ec <= 1.3 && eq >= 1.7 && eq <= 2.3 && ratio <= 12.0 &&
             monotone && elapsed < 180.0;
  o.summary = fmt(
      "exponents flow_normal %.3f, flow_causal %.3f in [0.8, 1.3]; canonical %.3f in [1.7, 2.3]; "
      "flow_normal t(4096)/t(512) %.2f <= 12; medians %s; %.1f s (budget 180 s)",
      en, ec, eq, ratio, monotone ? "monotone" : "NOT monotone", elapsed);
  return o;
}

Outcome criterion_entropy() {
  const TrainResult& trained = trained_copy();
  const Runs& r = runs();
  const auto eval = r.copy->eval_batches(64);
  const Checkpoint untrained = init_parameters(r.copy_model, 0);
  const auto [h_trained, u_trained] = entropy_oracle(trained.checkpoint, eval);
  const auto [h_init, u_init] = entropy_oracle(untrained, eval);
  const double gap_trained = u_trained - h_trained, gap_init = u_init - h_init;
  const double lib_gap = competition_entropy(trained.checkpoint, eval).gap();
  Outcome o;
  o.passed = gap_trained >= 0.5 && gap_init < 0.1 && std::abs(lib_gap - gap_trained) <= 1e-9;
  o.summary = fmt("entropy gap trained %.4f >= 0.5, untrained %.4f < 0.1 nats (uniform %.4f); library report %.4f",
                  gap_trained, gap_init, u_trained, lib_gap);
  return o;
}

Outcome criterion_training() {
  Runs& r = runs();
  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult& copy = trained_copy();
  r.copy_b = train(r.copy_model, *r.copy, recipe(3000, 250));
  const bool copy_det = same_metrics(copy.log, r.copy_b->log);

  const auto lo_task = listops_task();
  const ModelConfig lo_model = micro_model(Mechanism::kFlowNormal, *lo_task);
  const TrainResult lo_a = train(lo_model, *lo_task, recipe(5000, 500));
  const TrainResult lo_b = train(lo_model, *lo_task, recipe(5000, 500));
  const bool lo_det = same_metrics(lo_a.log, lo_b.log);
  const double elapsed = seconds_since(t0) + r.copy_seconds;

  Outcome o;
  o.passed = copy.final_eval.accuracy >= 0.99 && lo_a.final_eval.accuracy >= 0.5 && copy_det && lo_det &&
             elapsed < 1200.0;
  o.summary = fmt(
      "copy (flow_causal, len 11) accuracy %.4f >= 0.99 at 3000 steps; listops-mini (flow_normal, depth 1, len <= 16) "
      "accuracy %.4f >= 0.50 at 5000 steps; reruns %s; %.1f s (budget 1200 s)",
      copy.final_eval.accuracy, lo_a.final_eval.accuracy, copy_det && lo_det ? "bit-identical" : "DIFFER", elapsed);
  return o;
}

Outcome criterion_persistence() {
  const auto task = copy_task();
  const ModelConfig model = micro_model(Mechanism::kFlowCausal, *task);
  const auto dir = fs::temp_directory_path() / "flowattn_acceptance_ckpt";
  fs::remove_all(dir);
  bool ok = true;
  std::string details;
  for (const char* dtype : {"f64", "f32"}) {
    TrainConfig cfg = recipe(300, 100);
    cfg.dtype = dtype;
    cfg.seed = 11;
    TrainOptions opts;
    opts.out_dir = dir / dtype;
    const TrainResult a = train(model, *task, cfg, opts);
    const TrainResult b = train(model, *task, cfg);
    std::ostringstream csv_a, csv_b;
    write_metrics_csv(a.log, csv_a);
    write_metrics_csv(b.log, csv_b);
    const bool logs = same_metrics(a.log, b.log);

    const auto eval = task->eval_batches(64);
    const Checkpoint loaded = load_checkpoint(*opts.out_dir / "checkpoint.ckpt");
    const EvalResult before = evaluate(a.checkpoint, eval, dtype);
    const EvalResult after = evaluate(loaded, eval, dtype);
    const bool round_trip = before.loss == after.loss && before.accuracy == after.accuracy;
    ok = ok && logs && round_trip;
    details += fmt("%s: logs %s, eval loss %.17g -> %.17g%s; ", dtype, logs ? "identical" : "DIFFER", before.loss,
                   after.loss, round_trip ? "" : " MISMATCH");
  }
  fs::remove_all(dir);
  Outcome o;
  o.passed = ok;
  o.summary = details + "seconds column excluded from comparison";
  return o;
}

std::vector<std::vector<double>> read_rows(const fs::path& path) {
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    std::istringstream cells(line);
    std::string cell;
    std::getline(cells, cell, ',');
    rows.emplace_back();
    while (std::getline(cells, cell, ',')) rows.back().push_back(std::strtod(cell.c_str(), nullptr));
  }
  return rows;
}

Outcome criterion_dump() {
  const auto dir = fs::temp_directory_path() / "flowattn_acceptance_dump";
  fs::remove_all(dir);
  std::vector<Checkpoint> models;
  const auto task = copy_task();
  for (Mechanism m : {Mechanism::kFlowNormal, Mechanism::kFlowCausal}) {
    models.push_back(init_parameters(micro_model(m, *task), 5));
  }
  models.push_back(trained_copy().checkpoint);

  double worst_sum = 0.0, lo = 1.0, hi = 0.0;
  bool single_exact = true;
  std::size_t rows_checked = 0;
  const std::vector<std::int64_t> tokens{3, 7, 2, 9, 4, 1, 0, 0, 0, 0, 0};
  for (const Checkpoint& ckpt : models) {
    for (std::size_t layer = 0; layer < ckpt.config.layers; ++layer) {
      const auto [comp, alloc] = write_dump(dump_attention(ckpt, tokens, layer), dir);
      for (const auto& row : read_rows(comp)) {
        worst_sum = std::max(worst_sum, std::abs(std::accumulate(row.begin(), row.end(), 0.0) - 1.0));
        ++rows_checked;
      }
      for (const auto& row : read_rows(alloc)) {
        for (double a : row) {
          lo = std::min(lo, a);
          hi = std::max(hi, a);
        }
      }
      const auto [c1, a1] = write_dump(dump_attention(ckpt, std::vector<std::int64_t>{5}, layer), dir);
      for (const auto& row : read_rows(c1)) single_exact = single_exact && row.size() == 1 && row[0] == 1.0;
    }
  }
  fs::remove_all(dir);
  Outcome o;
  o.passed = worst_sum <= 1e-6 && lo > 0.0 && hi < 1.0 && single_exact;
  o.summary = fmt(
      "%zu competition rows, max |sum - 1| %.2e <= 1e-6; allocation in [%.6f, %.6f] within (0, 1); single source "
      "weight %s",
      rows_checked, worst_sum, lo, hi, single_exact ? "exactly 1" : "NOT 1");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"conservation", criterion_conservation},
      {"oracle equivalence", criterion_oracle},
      {"causal correctness", criterion_causal},
      {"gradients", criterion_gradients},
      {"scaling shape", criterion_scaling},
      {"non-degeneracy", criterion_entropy},
      {"training proxies", criterion_training},
      {"determinism and persistence", criterion_persistence},
      {"weight-dump contract", criterion_dump},
  };
  std::set<std::size_t> selected;
  for (int i = 1; i < argc; ++i) {
    const long k = std::strtol(argv[i], nullptr, 10);
    if (k < 1 || k > static_cast<long>(criteria.size())) {
      std::fprintf(stderr, "usage: %s [criterion 1-9 ...]\n", argv[0]);
      return 2;
    }
    selected.insert(static_cast<std::size_t>(k));
  }
  if (selected.empty())
    for (std::size_t k = 1; k <= criteria.size(); ++k) selected.insert(k);

  int failures = 0;
  for (std::size_t k : selected) {
    const auto& [name, run] = criteria[k - 1];
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o.passed = false;
      o.summary = std::string("exception: ") + e.what();
    }
    if (!o.passed) ++failures;
    std::printf("[%s] %zu %s: %s\n", o.passed ? "PASS" : "FAIL", k, name, o.summary.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", selected.size() - static_cast<std::size_t>(failures), selected.size());
  return failures == 0 ? 0 : 1;
}
