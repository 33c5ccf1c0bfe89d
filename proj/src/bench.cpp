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

#include "flowattn/bench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <new>

#include "flowattn/autodiff.hpp"
#include "flowattn/error.hpp"
#include "flowattn/rng.hpp"
#include "flowattn/serialize.hpp"

namespace flowattn {

TimingSamples time_region(const std::function<void()>& body, std::size_t reps, std::size_t warmup) {
  if (reps == 0) throw ContractError("time_region: reps must be positive");
  for (std::size_t i = 0; i < warmup; ++i) body();

  using Clock = std::chrono::steady_clock;
  TimingSamples out;
  out.seconds.resize(reps);
  std::vector<Clock::time_point> marks(reps + 1);

  alloc::reset_peak();
  const alloc::Counters before = alloc::snapshot();
  marks[0] = Clock::now();
  for (std::size_t r = 0; r < reps; ++r) {
    body();
    marks[r + 1] = Clock::now();
  }
  const alloc::Counters after = alloc::snapshot();

  for (std::size_t r = 0; r < reps; ++r) {
    out.seconds[r] = std::chrono::duration<double>(marks[r + 1] - marks[r]).count();
  }
  out.allocations = after.allocations - before.allocations;
  out.peak_transient = after.peak_bytes - before.live_bytes;
  return out;
}

double median(std::vector<double> values) {
  if (values.empty()) throw ContractError("median: empty sample");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

namespace {

double quantile_sorted(const std::vector<double>& sorted, double p) {
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

}  // namespace

double interquartile_range(std::vector<double> values) {
  if (values.empty()) throw ContractError("interquartile_range: empty sample");
  std::sort(values.begin(), values.end());
  return quantile_sorted(values, 0.75) - quantile_sorted(values, 0.25);
}

ScalingFit fit_scaling(std::span<const double> lengths, std::span<const double> times) {
  if (lengths.size() != times.size()) {
    throw ContractError("fit_scaling: " + std::to_string(lengths.size()) + " lengths but " +
                        std::to_string(times.size()) + " times");
  }
  if (lengths.size() < 3) throw ContractError("fit_scaling: need at least 3 points");
  const std::size_t n = lengths.size();
  std::vector<double> x(n), y(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(lengths[i] > 0.0) || !(times[i] > 0.0)) {
      throw ContractError("fit_scaling: lengths and times must be positive");
    }
    x[i] = std::log(lengths[i]);
    y[i] = std::log(times[i]);
  }
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx == 0.0) throw ContractError("fit_scaling: lengths must not all be equal");
  ScalingFit fit;
  fit.exponent = sxy / sxx;
  fit.intercept = my - fit.exponent * mx;
  return fit;
}

void validate(const BenchConfig& cfg) {
  if (cfg.mechanisms.empty()) throw ContractError("bench: no mechanisms");
  if (cfg.lengths.empty()) throw ContractError("bench: no lengths");
  if (cfg.reps < 5) throw ContractError("bench: reps must be at least 5, got " + std::to_string(cfg.reps));
  std::vector<std::size_t> sorted = cfg.lengths;
  std::sort(sorted.begin(), sorted.end());
  if (sorted.front() == 0) throw ContractError("bench: lengths must be positive");
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw ContractError("bench: duplicate sequence length");
  }
  for (Mechanism m : cfg.mechanisms) {
    if (m == Mechanism::kFlowOracle) throw ContractError("bench: flow_oracle is a test oracle, not a benchmark target");
  }
  AttentionConfig a;
  a.heads = cfg.heads;
  validate(a, cfg.channels);
}

std::vector<const BenchPoint*> BenchReport::series(Mechanism m) const {
  std::vector<const BenchPoint*> out;
  for (const BenchPoint& p : points)
    if (p.mechanism == m) out.push_back(&p);
  return out;
}

namespace {

// Rough peak working set. Only the quadratic path can exceed the cap.
std::uint64_t estimated_bytes(Mechanism m, std::size_t n, std::size_t d, std::size_t h, bool backward) {
  const std::uint64_t linear = 64ull * n * d * sizeof(double);
  if (m != Mechanism::kCanonical) return backward ? 4 * linear : linear;
  const std::uint64_t square = 3ull * h * n * n * sizeof(double);
  return (backward ? 3 * square : square) + linear;
}

std::string format_bytes(std::uint64_t b) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f GiB", static_cast<double>(b) / static_cast<double>(1ull << 30));
  return buf;
}

BenchPoint measure(const BenchConfig& cfg, Mechanism mech, std::size_t n) {
  BenchPoint p;
  p.mechanism = mech;
  p.length = n;
  const std::uint64_t need = estimated_bytes(mech, n, cfg.channels, cfg.heads, cfg.with_backward);
  if (need > cfg.memory_cap_bytes) {
    p.note = "out of memory: estimated " + format_bytes(need) + " exceeds cap " + format_bytes(cfg.memory_cap_bytes);
    return p;
  }

  AttentionConfig acfg;
  acfg.mechanism = mech;
  acfg.heads = cfg.heads;
  Rng rng(cfg.seed ^ (static_cast<std::uint64_t>(n) << 8));
  const Shape shape{n, cfg.channels};
  const Tensor<double> q = random_normal<double>(shape, rng, 0.5);
  const Tensor<double> k = random_normal<double>(shape, rng, 0.5);
  const Tensor<double> v = random_normal<double>(shape, rng, 0.5);
  const Tensor<double> w = random_normal<double>(shape, rng, 1.0);

  std::function<void()> body;
  if (cfg.with_backward) {
    body = [&] {
      ad::Tape<double> tape;
      const auto qv = tape.parameter("q", q);
      const auto kv = tape.parameter("k", k);
      const auto vv = tape.parameter("v", v);
      const auto out = attend(qv, kv, vv, acfg).output;
      tape.backward(ad::sum_all(ad::mul(out, tape.constant(w))));
    };
  } else {
    body = [&] { (void)attend(q, k, v, acfg); };
  }

  try {
    const TimingSamples s = time_region(body, cfg.reps, cfg.warmup);
    std::vector<double> rates(s.seconds.size());
    for (std::size_t i = 0; i < rates.size(); ++i) rates[i] = 1.0 / s.seconds[i];
    p.present = true;
    p.median_seconds = median(s.seconds);
    p.median_steps_per_sec = median(rates);
    p.iqr_steps_per_sec = interquartile_range(rates);
    p.allocations = s.allocations;
    p.peak_transient_bytes = s.peak_transient;
  } catch (const std::bad_alloc&) {
    p.present = false;
    p.note = "out of memory: allocation failed";
  }
  return p;
}

}  // namespace

BenchReport bench_attention(const BenchConfig& cfg, const BenchProgress& progress) {
  validate(cfg);
  BenchReport report;
  report.config = cfg;
  std::vector<std::size_t> lengths = cfg.lengths;
  std::sort(lengths.begin(), lengths.end());
  for (Mechanism m : cfg.mechanisms) {
    for (std::size_t n : lengths) {
      report.points.push_back(measure(cfg, m, n));
      if (progress) progress(report.points.back());
    }
    std::vector<double> xs, ts;
    for (const BenchPoint* p : report.series(m)) {
      if (!p->present) continue;
      xs.push_back(static_cast<double>(p->length));
      ts.push_back(p->median_seconds);
    }
    report.fits[m] = xs.size() >= 3 ? std::optional<ScalingFit>(fit_scaling(xs, ts)) : std::nullopt;
  }
  return report;
}

void write_bench_csv(const BenchReport& report, std::ostream& out) {
  out << "mechanism,length,present,median_seconds,median_steps_per_sec,iqr_steps_per_sec,peak_bytes,allocations\n";
  char buf[256];
  for (const BenchPoint& p : report.points) {
    if (p.present) {
      std::snprintf(buf, sizeof buf, "%.*s,%zu,1,%.9g,%.9g,%.9g,%llu,%llu\n",
                    static_cast<int>(to_string(p.mechanism).size()), to_string(p.mechanism).data(), p.length,
                    p.median_seconds, p.median_steps_per_sec, p.iqr_steps_per_sec,
                    static_cast<unsigned long long>(p.peak_transient_bytes),
                    static_cast<unsigned long long>(p.allocations));
    } else {
      std::snprintf(buf, sizeof buf, "%.*s,%zu,0,,,,,\n", static_cast<int>(to_string(p.mechanism).size()),
                    to_string(p.mechanism).data(), p.length);
    }
    out << buf;
  }
}

void write_bench_table(const BenchReport& report, std::ostream& out) {
  const BenchConfig& c = report.config;
  char buf[256];
  std::snprintf(buf, sizeof buf, "d=%zu h=%zu reps=%zu warmup=%zu pass=%s\n", c.channels, c.heads, c.reps, c.warmup,
                c.with_backward ? "forward+backward" : "forward");
  out << buf;
  std::snprintf(buf, sizeof buf, "%-16s %8s %12s %14s %12s %12s\n", "mechanism", "length", "median_s", "steps/s",
                "iqr", "peak_MiB");
  out << buf;
  for (const BenchPoint& p : report.points) {
    const std::string name(to_string(p.mechanism));
    if (p.present) {
      std::snprintf(buf, sizeof buf, "%-16s %8zu %12.6f %14.3f %12.3f %12.1f\n", name.c_str(), p.length,
                    p.median_seconds, p.median_steps_per_sec, p.iqr_steps_per_sec,
                    static_cast<double>(p.peak_transient_bytes) / (1024.0 * 1024.0));
    } else {
      std::snprintf(buf, sizeof buf, "%-16s %8zu %12s  (%s)\n", name.c_str(), p.length, "-", p.note.c_str());
    }
    out << buf;
  }
  for (const auto& [m, fit] : report.fits) {
    const std::string name(to_string(m));
    if (fit) {
      std::snprintf(buf, sizeof buf, "exponent %-16s %.3f\n", name.c_str(), fit->exponent);
    } else {
      std::snprintf(buf, sizeof buf, "exponent %-16s n/a (fewer than 3 points)\n", name.c_str());
    }
    out << buf;
  }
}

nlohmann::json bench_json(const BenchReport& report) {
  nlohmann::json j;
  j["config"] = to_json(report.config);
  nlohmann::json points = nlohmann::json::array();
  for (const BenchPoint& p : report.points) {
    nlohmann::json e{{"mechanism", std::string(to_string(p.mechanism))}, {"length", p.length}, {"present", p.present}};
    if (p.present) {
      e["median_seconds"] = p.median_seconds;
      e["median_steps_per_sec"] = p.median_steps_per_sec;
      e["iqr_steps_per_sec"] = p.iqr_steps_per_sec;
      e["peak_bytes"] = p.peak_transient_bytes;
      e["allocations"] = p.allocations;
    } else {
      e["note"] = p.note;
    }
    points.push_back(std::move(e));
  }
  j["points"] = std::move(points);
  nlohmann::json fits = nlohmann::json::object();
  for (const auto& [m, fit] : report.fits) {
    fits[std::string(to_string(m))] = fit ? nlohmann::json{{"exponent", fit->exponent}, {"intercept", fit->intercept}}
                                          : nlohmann::json(nullptr);
  }
  j["fits"] = std::move(fits);
  return j;
}

}  // namespace flowattn
