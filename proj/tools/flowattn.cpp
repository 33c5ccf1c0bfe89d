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

// flowattn: bench, gradcheck, train, eval, dump-attn, ablate, selftest.
//
// Exit codes: 0 success, 1 property failure, 2 usage error, 3 data error.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "flowattn/bench.hpp"
#include "flowattn/error.hpp"
#include "flowattn/gradcheck.hpp"
#include "flowattn/inspect.hpp"
#include "flowattn/properties.hpp"
#include "flowattn/rng.hpp"
#include "flowattn/serialize.hpp"
#include "flowattn/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace flowattn;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitProperty = 1;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;

// ---------------------------------------------------------------------------
// Flag storage. Each value is applied over the --config file only when the
// flag was given on the command line.
// ---------------------------------------------------------------------------

struct GlobalFlags {
  std::uint64_t seed = 0;
  std::string dtype = "f64";
  std::string config;
  std::string out = "./out";
  CLI::Option* seed_opt = nullptr;
  CLI::Option* dtype_opt = nullptr;
  CLI::Option* out_opt = nullptr;
};

template <typename T>
struct Flag {
  T value{};
  CLI::Option* opt = nullptr;

  bool given() const { return opt != nullptr && opt->count() > 0; }
  void apply(T& dst) const {
    if (given()) dst = value;
  }
};

struct TaskFlags {
  Flag<std::string> kind;
  Flag<std::size_t> seq_len, vocab, max_depth, max_len, eval_samples;
  Flag<std::string> corpus;
  Flag<double> split;

  void add(CLI::App* app) {
    kind.opt = app->add_option("--task", kind.value, "copy, listops or char-lm");
    seq_len.opt = app->add_option("--seq-len", seq_len.value, "copy: odd total length; char-lm: window length");
    vocab.opt = app->add_option("--vocab", vocab.value, "copy: vocabulary size");
    max_depth.opt = app->add_option("--max-depth", max_depth.value, "listops: nesting depth");
    max_len.opt = app->add_option("--max-len", max_len.value, "listops: maximum tokens");
    corpus.opt = app->add_option("--corpus", corpus.value, "char-lm: UTF-8 text file");
    split.opt = app->add_option("--split", split.value, "char-lm: train fraction");
    eval_samples.opt = app->add_option("--eval-samples", eval_samples.value, "held-out samples");
  }

  TaskParams resolve(const json& section) const {
    TaskParams p = task_params_from_json(section);
    if (kind.given()) p.kind = parse_task_kind(kind.value);
    seq_len.apply(p.seq_len);
    vocab.apply(p.vocab);
    max_depth.apply(p.max_depth);
    max_len.apply(p.max_len);
    if (corpus.given()) p.corpus = corpus.value;
    split.apply(p.split);
    eval_samples.apply(p.eval_samples);
    return p;
  }
};

struct AttentionFlags {
  Flag<std::string> mechanism, phi, competition_act, allocation_act;
  Flag<std::size_t> heads;
  Flag<double> eps;
  Flag<bool> no_competition, no_allocation;

  void add(CLI::App* app) {
    mechanism.opt = app->add_option("--mechanism", mechanism.value,
                                    "canonical, linear_baseline, flow_normal, flow_causal or flow_oracle");
    heads.opt = app->add_option("--heads", heads.value, "attention heads");
    phi.opt = app->add_option("--phi", phi.value, "feature map: sigmoid, elu_plus_one or relu");
    competition_act.opt = app->add_option("--competition-act", competition_act.value, "softmax or sigmoid");
    allocation_act.opt = app->add_option("--allocation-act", allocation_act.value, "softmax or sigmoid");
    eps.opt = app->add_option("--eps", eps.value, "flow normalization epsilon");
    no_competition.opt = app->add_flag("--no-competition", no_competition.value, "replace competition(O^) * V with V");
    no_allocation.opt = app->add_flag("--no-allocation", no_allocation.value, "replace allocation(I^) * A with A");
  }

  bool sets_mechanism() const { return mechanism.given(); }

  void apply(AttentionConfig& a) const {
    if (mechanism.given()) a.mechanism = parse_mechanism(mechanism.value);
    if (phi.given()) a.phi = parse_feature_map(phi.value);
    if (competition_act.given()) a.competition_act = parse_activation(competition_act.value);
    if (allocation_act.given()) a.allocation_act = parse_activation(allocation_act.value);
    heads.apply(a.heads);
    eps.apply(a.eps);
    if (no_competition.given()) a.competition = false;
    if (no_allocation.given()) a.allocation = false;
  }
};

struct ModelFlags {
  AttentionFlags attention;
  Flag<std::size_t> layers, channels, ffn;
  Flag<double> dropout;

  void add(CLI::App* app) {
    attention.add(app);
    layers.opt = app->add_option("--layers", layers.value, "transformer blocks");
    channels.opt = app->add_option("--channels,-d", channels.value, "model width");
    ffn.opt = app->add_option("--ffn", ffn.value, "feed-forward width (0 = 4 * channels)");
    dropout.opt = app->add_option("--dropout", dropout.value, "dropout rate");
  }

  // Task-derived fields are filled in by model_for_task. Without an explicit
  // mechanism, tasks that need causality get flow_causal.
  ModelConfig resolve(const json& section, const Task& task) const {
    ModelConfig base;
    base.attention.heads = 4;
    ModelConfig m = model_config_from_json(section, base);
    const bool explicit_mech =
        attention.sets_mechanism() || (section.contains("attention") && section["attention"].contains("mechanism"));
    if (!explicit_mech && task.requires_causal()) m.attention.mechanism = Mechanism::kFlowCausal;
    attention.apply(m.attention);
    layers.apply(m.layers);
    channels.apply(m.channels);
    ffn.apply(m.ffn_channels);
    dropout.apply(m.dropout);
    return model_for_task(m, task);
  }
};

struct TrainFlags {
  Flag<std::uint64_t> steps, warmup, eval_interval;
  Flag<std::size_t> batch, eval_batch;
  Flag<double> lr, clip;

  void add(CLI::App* app) {
    steps.opt = app->add_option("--steps", steps.value, "optimizer steps");
    batch.opt = app->add_option("--batch", batch.value, "samples per step");
    lr.opt = app->add_option("--lr", lr.value, "peak learning rate");
    warmup.opt = app->add_option("--warmup", warmup.value, "linear warmup steps");
    clip.opt = app->add_option("--clip", clip.value, "global gradient norm clip (0 disables)");
    eval_interval.opt = app->add_option("--eval-interval", eval_interval.value, "steps between evaluations");
    eval_batch.opt = app->add_option("--eval-batch", eval_batch.value, "evaluation batch size");
  }

  TrainConfig resolve(const json& section, const GlobalFlags& g) const {
    TrainConfig c = train_config_from_json(section);
    steps.apply(c.steps);
    batch.apply(c.batch);
    lr.apply(c.lr);
    warmup.apply(c.warmup);
    clip.apply(c.clip);
    eval_interval.apply(c.eval_interval);
    eval_batch.apply(c.eval_batch);
    c.seed = g.seed;
    c.dtype = g.dtype;
    return c;
  }
};

json train_section(const TrainConfig& c) {
  json j = to_json(c);
  j.erase("seed");
  j.erase("dtype");
  return j;
}

// ---------------------------------------------------------------------------
// Config file handling
// ---------------------------------------------------------------------------

json read_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw DataError("cannot read config file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError("config file " + path + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw ContractError("config file " + path + ": expected a JSON object");
  return j;
}

json section(const json& cfg, const char* key) {
  if (!cfg.contains(key)) return json::object();
  return cfg.at(key);
}

// Applies top-level keys and rejects keys the command does not know.
void resolve_globals(const json& cfg, const std::string& command, std::initializer_list<std::string_view> sections,
                     GlobalFlags& g) {
  std::vector<std::string_view> allowed{"command", "seed", "dtype", "out"};
  allowed.insert(allowed.end(), sections.begin(), sections.end());
  for (const auto& [key, value] : cfg.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ContractError("config: unknown key '" + key + "' for command " + command);
    }
  }
  if (cfg.contains("command") && cfg.at("command").get<std::string>() != command) {
    throw ContractError("config: written for command '" + cfg.at("command").get<std::string>() + "', not '" +
                        command + "'");
  }
  if (cfg.contains("seed") && !(g.seed_opt && g.seed_opt->count())) g.seed = cfg.at("seed").get<std::uint64_t>();
  if (cfg.contains("dtype") && !(g.dtype_opt && g.dtype_opt->count())) g.dtype = cfg.at("dtype").get<std::string>();
  if (cfg.contains("out") && !(g.out_opt && g.out_opt->count())) g.out = cfg.at("out").get<std::string>();
  if (g.dtype != "f32" && g.dtype != "f64") throw ContractError("--dtype must be f32 or f64, got '" + g.dtype + "'");
}

// Prints the resolved config and stores it as <out>/config.json.
void echo_config(const std::string& command, const GlobalFlags& g, json body) {
  json full{{"command", command}, {"seed", g.seed}, {"dtype", g.dtype}, {"out", g.out}};
  for (auto& [key, value] : body.items()) full[key] = value;
  std::cerr << "resolved config:\n" << full.dump(2) << "\n";
  fs::create_directories(g.out);
  std::ofstream(fs::path(g.out) / "config.json") << full.dump(2) << "\n";
}

void require_f64(const GlobalFlags& g, const char* command) {
  if (g.dtype != "f64") throw UnsupportedError(std::string(command) + " runs in f64 only");
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

struct BenchCmd {
  Flag<std::vector<std::string>> mechanisms;
  Flag<std::vector<std::size_t>> lengths;
  Flag<std::size_t> channels, heads, reps, warmup;
  Flag<bool> backward;
  Flag<std::uint64_t> memory_cap;
  bool as_json = false;

  void add(CLI::App* app) {
    mechanisms.opt = app->add_option("--mechanisms", mechanisms.value, "comma-separated mechanisms")->delimiter(',');
    lengths.opt = app->add_option("--lengths", lengths.value, "comma-separated sequence lengths")->delimiter(',');
    channels.opt = app->add_option("--channels,-d", channels.value, "model width");
    heads.opt = app->add_option("--heads", heads.value, "attention heads");
    reps.opt = app->add_option("--reps", reps.value, "timed repetitions (>= 5)");
    warmup.opt = app->add_option("--warmup", warmup.value, "untimed warmup runs");
    backward.opt = app->add_flag("--backward", backward.value, "time forward plus reverse pass");
    memory_cap.opt = app->add_option("--memory-cap", memory_cap.value, "bytes above which a point is skipped");
    app->add_flag("--json", as_json, "print the report as JSON instead of table and CSV");
    app->footer(
        "Writes <out>/bench.csv with columns mechanism,length,present,median_seconds,\n"
        "median_steps_per_sec,iqr_steps_per_sec,peak_bytes,allocations. Absent points\n"
        "(out of memory) have present=0 and empty measurements.");
  }

  int run(GlobalFlags& g, const json& cfg) {
    resolve_globals(cfg, "bench", {"bench"}, g);
    require_f64(g, "bench");
    BenchConfig c = bench_config_from_json(section(cfg, "bench"));
    if (mechanisms.given()) {
      c.mechanisms.clear();
      for (const auto& m : mechanisms.value) c.mechanisms.push_back(parse_mechanism(m));
    }
    lengths.apply(c.lengths);
    channels.apply(c.channels);
    heads.apply(c.heads);
    reps.apply(c.reps);
    warmup.apply(c.warmup);
    if (backward.given()) c.with_backward = true;
    memory_cap.apply(c.memory_cap_bytes);
    c.seed = g.seed;
    validate(c);
    json body = to_json(c);
    body.erase("seed");
    echo_config("bench", g, {{"bench", body}});

    const BenchReport report = bench_attention(c, [](const BenchPoint& p) {
      std::cerr << "  " << to_string(p.mechanism) << " n=" << p.length << ": "
                << (p.present ? std::to_string(p.median_seconds) + " s" : p.note) << "\n";
    });
    std::ostringstream csv;
    write_bench_csv(report, csv);
    write_file(fs::path(g.out) / "bench.csv", csv.str());
    if (as_json) {
      const std::string text = bench_json(report).dump(2);
      write_file(fs::path(g.out) / "bench.json", text + "\n");
      std::cout << text << "\n";
    } else {
      write_bench_table(report, std::cout);
      std::cout << "\n" << csv.str();
    }
    return kExitOk;
  }
};

struct GradcheckCmd {
  AttentionFlags attention;
  Flag<std::size_t> n, m, d;
  Flag<double> step, tolerance;

  void add(CLI::App* app) {
    attention.add(app);
    n.opt = app->add_option("-n", n.value, "query length");
    m.opt = app->add_option("-m", m.value, "key/value length (causal mechanisms use n)");
    d.opt = app->add_option("-d", d.value, "channels");
    step.opt = app->add_option("--step", step.value, "central difference step");
    tolerance.opt = app->add_option("--tolerance", tolerance.value, "maximum relative error");
    app->footer("Writes <out>/gradcheck.csv with columns parameter,max_rel_err,coordinates.");
  }

  int run(GlobalFlags& g, const json& cfg) {
    resolve_globals(cfg, "gradcheck", {"gradcheck"}, g);
    require_f64(g, "gradcheck");
    const json sec = section(cfg, "gradcheck");
    detail::require_known_keys(sec, {"attention", "n", "m", "d", "step", "tolerance"}, "gradcheck config");
    AttentionConfig a;
    a.heads = 2;
    if (sec.contains("attention")) a = attention_config_from_json(sec.at("attention"), a);
    attention.apply(a);
    std::size_t nn = sec.value("n", std::size_t{6}), mm = sec.value("m", std::size_t{6}), dd = sec.value("d", std::size_t{8});
    double h = sec.value("step", 1e-5), tol = sec.value("tolerance", 1e-4);
    n.apply(nn);
    m.apply(mm);
    d.apply(dd);
    step.apply(h);
    tolerance.apply(tol);
    if (a.is_causal()) mm = nn;
    validate(a, dd);
    echo_config("gradcheck", g,
                {{"gradcheck", {{"attention", to_json(a)}, {"n", nn}, {"m", mm}, {"d", dd}, {"step", h}, {"tolerance", tol}}}});
    if (a.mechanism == Mechanism::kFlowOracle) {
      throw UnsupportedError("flow_oracle has no differentiable form; check flow_normal instead");
    }

    Rng rng(g.seed);
    const ParamMap params{{"q", random_uniform<double>(Shape{nn, dd}, rng)},
                          {"k", random_uniform<double>(Shape{mm, dd}, rng)},
                          {"v", random_uniform<double>(Shape{mm, dd}, rng)}};
    const Tensor<double> w = random_uniform<double>(Shape{nn, dd}, rng);
    auto fn = [&](ad::Tape<double>& t, const VarMap& x) {
      return ad::sum_all(ad::mul(attend(x.at("q"), x.at("k"), x.at("v"), a).output, t.constant(w)));
    };
    const GradCheckReport report = finite_diff_check(fn, params, h);

    std::ostringstream csv;
    csv << "parameter,max_rel_err,coordinates\n";
    for (const auto& e : report.entries) {
      char buf[128];
      std::snprintf(buf, sizeof buf, "%s,%.6e,%zu\n", e.parameter.c_str(), e.max_rel_err, e.coordinates);
      csv << buf;
      std::cout << "  " << e.parameter << ": max_rel_err " << buf + e.parameter.size() + 1;
    }
    write_file(fs::path(g.out) / "gradcheck.csv", csv.str());
    const bool ok = report.worst() <= tol;
    std::cout << (ok ? "PASS" : "FAIL") << " gradcheck " << to_string(a.mechanism) << ": worst " << report.worst()
              << " (tolerance " << tol << ")\n";
    return ok ? kExitOk : kExitProperty;
  }
};

struct TrainCmd {
  TaskFlags task;
  ModelFlags model;
  TrainFlags train;
  Flag<std::string> resume;

  void add(CLI::App* app) {
    task.add(app);
    model.add(app);
    train.add(app);
    resume.opt = app->add_option("--resume", resume.value, "continue from a checkpoint (model config comes from it)");
    app->footer(
        "Writes <out>/checkpoint.ckpt and <out>/metrics.csv with columns step,loss,metric,seconds.\n"
        "loss is the training loss of the step's batch; metric is held-out accuracy.");
  }

  int run(GlobalFlags& g, const json& cfg) {
    resolve_globals(cfg, "train", {"task", "model", "train", "resume"}, g);
    const TaskParams tp = task.resolve(section(cfg, "task"));
    const auto t = make_task(tp);
    std::string resume_path = cfg.value("resume", std::string());
    resume.apply(resume_path);
    std::optional<Checkpoint> init;
    ModelConfig mc;
    if (!resume_path.empty()) {
      init = load_checkpoint(resume_path);
      mc = init->config;
    } else {
      mc = model.resolve(section(cfg, "model"), *t);
    }
    const TrainConfig tc = train.resolve(section(cfg, "train"), g);
    validate(tc);
    echo_config("train", g,
                {{"task", to_json(tp)}, {"model", to_json(mc)}, {"train", train_section(tc)}, {"resume", resume_path}});

    TrainOptions opts;
    opts.out_dir = g.out;
    opts.init = init;
    opts.on_eval = [](const MetricRow& r) {
      std::printf("step %llu loss %.6f metric %.4f (%.1f s)\n", static_cast<unsigned long long>(r.step), r.loss,
                  r.metric, r.seconds);
      std::fflush(stdout);
    };
    const TrainResult r = flowattn::train(mc, *t, tc, opts);
    std::ofstream metrics(fs::path(g.out) / "metrics.csv");
    write_metrics_csv(r.log, metrics);
    std::printf("final eval: loss %.6f perplexity %.4f accuracy %.4f over %zu scored\n", r.final_eval.loss,
                r.final_eval.perplexity, r.final_eval.accuracy, r.final_eval.scored);
    return kExitOk;
  }
};

struct EvalCmd {
  TaskFlags task;
  Flag<std::string> checkpoint;
  Flag<std::size_t> eval_batch;
  Flag<bool> export_jsonl;

  void add(CLI::App* app) {
    task.add(app);
    checkpoint.opt = app->add_option("--checkpoint", checkpoint.value, "checkpoint to evaluate");
    eval_batch.opt = app->add_option("--eval-batch", eval_batch.value, "evaluation batch size");
    export_jsonl.opt = app->add_flag("--export-jsonl", export_jsonl.value,
                                     "write the held-out samples to <out>/eval.jsonl");
    app->footer(
        "Writes <out>/eval.json (loss, perplexity, accuracy, scored). --export-jsonl writes one\n"
        "sample per line: {\"input\": [...], \"target\": ..., \"mask\": [...]}.");
  }

  int run(GlobalFlags& g, const json& cfg) {
    resolve_globals(cfg, "eval", {"task", "checkpoint", "eval_batch", "export_jsonl"}, g);
    const TaskParams tp = task.resolve(section(cfg, "task"));
    std::string ckpt_path = cfg.value("checkpoint", std::string());
    std::size_t batch = cfg.value("eval_batch", std::size_t{64});
    bool jsonl = cfg.value("export_jsonl", false);
    checkpoint.apply(ckpt_path);
    eval_batch.apply(batch);
    if (export_jsonl.given()) jsonl = true;
    if (ckpt_path.empty() && !jsonl) throw ContractError("eval: give --checkpoint, --export-jsonl or both");
    if (batch == 0) throw ContractError("eval: --eval-batch must be positive");
    echo_config("eval", g,
                {{"task", to_json(tp)}, {"checkpoint", ckpt_path}, {"eval_batch", batch}, {"export_jsonl", jsonl}});

    const auto t = make_task(tp);
    const std::vector<TaskBatch> batches = t->eval_batches(batch);
    if (jsonl) {
      std::ofstream out(fs::path(g.out) / "eval.jsonl");
      for (const TaskBatch& b : batches) write_jsonl(b, out);
      std::cerr << "wrote " << (fs::path(g.out) / "eval.jsonl").string() << "\n";
    }
    if (!ckpt_path.empty()) {
      const Checkpoint ckpt = load_checkpoint(ckpt_path);
      const EvalResult r = evaluate(ckpt, batches, g.dtype);
      const json j{{"loss", r.loss}, {"perplexity", r.perplexity}, {"accuracy", r.accuracy}, {"scored", r.scored}};
      write_file(fs::path(g.out) / "eval.json", j.dump(2) + "\n");
      std::cout << j.dump(2) << "\n";
    }
    return kExitOk;
  }
};

struct DumpCmd {
  ModelFlags model;
  Flag<std::string> checkpoint;
  Flag<std::vector<std::int64_t>> tokens;
  Flag<std::size_t> layer, head, vocab_size;

  void add(CLI::App* app) {
    model.add(app);
    checkpoint.opt = app->add_option("--checkpoint", checkpoint.value, "trained checkpoint (default: random init)");
    tokens.opt = app->add_option("--tokens", tokens.value, "comma-separated input token ids")->delimiter(',');
    layer.opt = app->add_option("--layer", layer.value, "layer index");
    head.opt = app->add_option("--head", head.value, "head index (default: all heads)");
    vocab_size.opt = app->add_option("--vocab-size", vocab_size.value, "random init: vocabulary size");
    app->footer(
        "Writes <out>/competition_layer<L>.csv (softmax(O^) over the m sources) and\n"
        "<out>/allocation_layer<L>.csv (sigmoid(I^) over the n sinks). Columns: head,w0,...,w<k-1>;\n"
        "one row per head.");
  }

  int run(GlobalFlags& g, const json& cfg) {
    resolve_globals(cfg, "dump-attn", {"checkpoint", "model", "tokens", "layer", "head"}, g);
    std::string ckpt_path = cfg.value("checkpoint", std::string());
    checkpoint.apply(ckpt_path);
    std::vector<std::int64_t> ids = cfg.value("tokens", std::vector<std::int64_t>{});
    tokens.apply(ids);
    std::size_t lyr = cfg.value("layer", std::size_t{0});
    layer.apply(lyr);
    std::optional<std::size_t> hd;
    if (cfg.contains("head") && !cfg.at("head").is_null()) hd = cfg.at("head").get<std::size_t>();
    if (head.given()) hd = head.value;
    if (ids.empty()) throw ContractError("dump-attn: --tokens is required");

    Checkpoint ckpt;
    if (!ckpt_path.empty()) {
      ckpt = load_checkpoint(ckpt_path);
    } else {
      ModelConfig base;
      base.attention.heads = 4;
      ModelConfig mc = model_config_from_json(section(cfg, "model"), base);
      model.attention.apply(mc.attention);
      model.layers.apply(mc.layers);
      model.channels.apply(mc.channels);
      model.ffn.apply(mc.ffn_channels);
      vocab_size.apply(mc.vocab_size);
      const std::int64_t top = *std::max_element(ids.begin(), ids.end());
      if (mc.vocab_size == 0 && top >= 0) mc.vocab_size = static_cast<std::size_t>(top) + 1;
      if (mc.max_seq_len == 0) mc.max_seq_len = ids.size();
      ckpt = init_parameters(mc, g.seed);
    }
    echo_config("dump-attn", g,
                {{"checkpoint", ckpt_path},
                 {"model", ckpt_path.empty() ? to_json(ckpt.config) : json(nullptr)},
                 {"tokens", ids},
                 {"layer", lyr},
                 {"head", hd ? json(*hd) : json(nullptr)}});

    const AttentionDump dump = dump_attention(ckpt, ids, lyr, hd);
    const auto [comp, alloc] = write_dump(dump, g.out);
    for (std::size_t r = 0; r < dump.heads.size(); ++r) {
      double sum = 0.0;
      for (double w : dump.competition[r]) sum += w;
      const auto [lo, hi] = std::minmax_element(dump.allocation[r].begin(), dump.allocation[r].end());
      std::printf("layer %zu head %zu: competition sum %.12f, allocation in [%.6f, %.6f]\n", dump.layer,
                  dump.heads[r], sum, *lo, *hi);
    }
    std::cout << "wrote " << comp.string() << " and " << alloc.string() << "\n";
    return kExitOk;
  }
};

struct AblateCmd {
  TaskFlags task;
  ModelFlags model;
  TrainFlags train;
  Flag<std::vector<std::string>> axes;

  void add(CLI::App* app) {
    task.add(app);
    model.add(app);
    train.add(app);
    axes.opt = app->add_option("--axes", axes.value,
                               "comma-separated subset of phi, competition_act, allocation_act, no_competition, "
                               "no_allocation")
                   ->delimiter(',');
    app->footer(
        "Trains one model per configuration in the cross product of the axes and writes\n"
        "<out>/ablate.csv with columns default,phi,competition_act,allocation_act,competition,\n"
        "allocation,loss,metric. default=1 marks the library default configuration.");
  }

  int run(GlobalFlags& g, const json& cfg) {
    resolve_globals(cfg, "ablate", {"task", "model", "train", "axes"}, g);
    const TaskParams tp = task.resolve(section(cfg, "task"));
    const auto t = make_task(tp);
    const ModelConfig mc = model.resolve(section(cfg, "model"), *t);
    const TrainConfig tc = train.resolve(section(cfg, "train"), g);
    validate(tc);
    std::vector<std::string> names = cfg.value("axes", std::vector<std::string>{"competition_act", "allocation_act"});
    axes.apply(names);
    std::vector<AblationAxis> parsed;
    for (const auto& n : names) parsed.push_back(parse_ablation_axis(n));
    (void)ablation_grid(mc.attention, parsed);
    echo_config("ablate", g, {{"task", to_json(tp)}, {"model", to_json(mc)}, {"train", train_section(tc)}, {"axes", names}});

    const auto rows = run_ablation(mc, *t, tc, parsed, [](const AblationRow& r) {
      std::cerr << "  " << to_string(r.attention.phi) << "/" << to_string(r.attention.competition_act) << "/"
                << to_string(r.attention.allocation_act) << (r.attention.competition ? "" : " no-competition")
                << (r.attention.allocation ? "" : " no-allocation") << ": metric " << r.metric << "\n";
    });
    std::ostringstream csv;
    write_ablation_csv(rows, csv);
    write_file(fs::path(g.out) / "ablate.csv", csv.str());
    write_ablation_table(rows, std::cout);
    return kExitOk;
  }
};

struct SelftestCmd {
  std::string fault;

  void add(CLI::App* app) {
    app->add_option("--inject-fault", fault)->group("")->check(CLI::IsMember({"negative-eps"}));
    app->footer("Runs conservation, oracle-equivalence, causality and gradient suites at fixed seeds.");
  }

  int run(GlobalFlags& g, const json& cfg) {
    resolve_globals(cfg, "selftest", {}, g);
    require_f64(g, "selftest");
    echo_config("selftest", g, json::object());
    PropertyOptions opts;
    opts.seed = g.seed;
    opts.inject_negative_eps = fault == "negative-eps";
    const auto results = run_selftest(opts, [](const PropertyResult& r) {
      std::printf("%s %-18s worst %.3e tolerance %.0e cases %zu (%.2f s)\n", r.passed ? "PASS" : "FAIL",
                  r.name.c_str(), r.worst, r.tolerance, r.cases, r.seconds);
      std::fflush(stdout);
    });
    const PropertyResult& last = results.back();
    if (!last.passed) {
      std::printf("selftest FAILED %s: %s\n", last.name.c_str(), last.detail.c_str());
      return kExitProperty;
    }
    std::printf("selftest passed (%zu suites)\n", results.size());
    return kExitOk;
  }
};

int exit_code_for(const Error& e) {
  if (dynamic_cast<const DataError*>(&e)) return kExitData;
  if (dynamic_cast<const DomainError*>(&e) || dynamic_cast<const InternalError*>(&e)) return kExitProperty;
  return kExitUsage;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flowattn: Flow-Attention kernels, micro-model training and diagnostics"};
  app.fallthrough();
  app.require_subcommand(1);
  GlobalFlags g;
  g.seed_opt = app.add_option("--seed", g.seed, "random seed")->capture_default_str();
  g.dtype_opt = app.add_option("--dtype", g.dtype, "f32 or f64")->capture_default_str();
  app.add_option("--config", g.config, "JSON config; explicit flags take precedence");
  g.out_opt = app.add_option("--out", g.out, "output directory")->capture_default_str();
  app.footer("Exit codes: 0 success, 1 property failure, 2 usage error, 3 data error.");

  BenchCmd bench;
  GradcheckCmd gradcheck;
  TrainCmd train;
  EvalCmd eval;
  DumpCmd dump;
  AblateCmd ablate;
  SelftestCmd selftest;
  auto* bench_app = app.add_subcommand("bench", "time attention mechanisms across sequence lengths");
  auto* grad_app = app.add_subcommand("gradcheck", "compare attention gradients with central differences");
  auto* train_app = app.add_subcommand("train", "train a micro-model on a synthetic or text task");
  auto* eval_app = app.add_subcommand("eval", "evaluate a checkpoint and/or export held-out samples");
  auto* dump_app = app.add_subcommand("dump-attn", "write competition and allocation weights of one layer");
  auto* ablate_app = app.add_subcommand("ablate", "train one model per activation/ablation configuration");
  auto* self_app = app.add_subcommand("selftest", "run the property suites");
  bench.add(bench_app);
  gradcheck.add(grad_app);
  train.add(train_app);
  eval.add(eval_app);
  dump.add(dump_app);
  ablate.add(ablate_app);
  selftest.add(self_app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    const json cfg = read_config(g.config);
    if (*bench_app) return bench.run(g, cfg);
    if (*grad_app) return gradcheck.run(g, cfg);
    if (*train_app) return train.run(g, cfg);
    if (*eval_app) return eval.run(g, cfg);
    if (*dump_app) return dump.run(g, cfg);
    if (*ablate_app) return ablate.run(g, cfg);
    if (*self_app) return selftest.run(g, cfg);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const json::exception& e) {
    std::cerr << "error: config: " << e.what() << "\n";
    return kExitUsage;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitProperty;
  }
  return kExitUsage;
}
