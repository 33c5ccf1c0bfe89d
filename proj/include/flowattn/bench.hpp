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

#ifndef FLOWATTN_BENCH_HPP_
#define FLOWATTN_BENCH_HPP_

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "flowattn/attention.hpp"

namespace flowattn {

// Counters maintained by the replacement global operator new/delete that
// ships with the benchmark code.
namespace alloc {

struct Counters {
  std::uint64_t allocations = 0;
  std::uint64_t live_bytes = 0;
  std::uint64_t peak_bytes = 0;
};

Counters snapshot();
// Restarts peak tracking from the current live size.
void reset_peak();

}  // namespace alloc

struct TimingSamples {
  std::vector<double> seconds;     // one per timed repetition
  std::uint64_t allocations = 0;   // inside the timed repetitions
  std::uint64_t peak_transient = 0;  // bytes above the pre-run live size
};

// Runs `body` warmup times untimed, then reps times under the clock. The
// harness itself performs no allocation between the first and last clock
// read, so allocations counts only what `body` does.
TimingSamples time_region(const std::function<void()>& body, std::size_t reps, std::size_t warmup);

double median(std::vector<double> values);
// Interquartile range with linear interpolation between order statistics.
double interquartile_range(std::vector<double> values);

struct ScalingFit {
  double exponent = 0.0;
  double intercept = 0.0;  // log(time) at log(n) = 0
};

// Least-squares slope of log(time) against log(length).
ScalingFit fit_scaling(std::span<const double> lengths, std::span<const double> times);

struct BenchConfig {
  std::vector<Mechanism> mechanisms{Mechanism::kCanonical, Mechanism::kLinearBaseline, Mechanism::kFlowNormal,
                                    Mechanism::kFlowCausal};
  std::vector<std::size_t> lengths{512, 1024, 2048, 4096};
  std::size_t channels = 64;
  std::size_t heads = 4;
  std::size_t reps = 5;
  std::size_t warmup = 3;
  bool with_backward = false;
  std::uint64_t seed = 0;
  // Estimated working set above which a point is recorded as absent.
  std::uint64_t memory_cap_bytes = std::uint64_t{3} << 30;
};

void validate(const BenchConfig& cfg);

struct BenchPoint {
  Mechanism mechanism = Mechanism::kFlowNormal;
  std::size_t length = 0;
  bool present = false;
  std::string note;  // reason when absent
  double median_seconds = 0.0;
  double median_steps_per_sec = 0.0;
  double iqr_steps_per_sec = 0.0;
  std::uint64_t peak_transient_bytes = 0;
  std::uint64_t allocations = 0;
};

struct BenchReport {
  BenchConfig config;
  std::vector<BenchPoint> points;
  std::map<Mechanism, std::optional<ScalingFit>> fits;

  std::vector<const BenchPoint*> series(Mechanism m) const;
};

// Called after each measured point, e.g. for progress output.
using BenchProgress = std::function<void(const BenchPoint&)>;

BenchReport bench_attention(const BenchConfig& cfg, const BenchProgress& progress = {});

void write_bench_csv(const BenchReport& report, std::ostream& out);
void write_bench_table(const BenchReport& report, std::ostream& out);
nlohmann::json bench_json(const BenchReport& report);

}  // namespace flowattn

#endif  // FLOWATTN_BENCH_HPP_
