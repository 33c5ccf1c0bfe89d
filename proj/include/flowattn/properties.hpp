#ifndef FLOWATTN_PROPERTIES_HPP_
#define FLOWATTN_PROPERTIES_HPP_

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace flowattn {

// Outcome of one seeded property suite. `worst` is the largest observed
// error against `tolerance`.
struct PropertyResult {
  std::string name;
  bool passed = false;
  double worst = 0.0;
  double tolerance = 0.0;
  std::size_t cases = 0;
  std::string detail;
  double seconds = 0.0;
};

struct PropertyOptions {
  std::uint64_t seed = 0;
  // Test hook: runs every suite with eps < 0.
  bool inject_negative_eps = false;
};

// Normalized per-source outgoing and per-sink incoming capacity equal 1 with
// eps = 0, over 100 random (Q, K), phi = sigmoid, n, m <= 64, h <= 4.
PropertyResult check_conservation(const PropertyOptions& opts = {});
// flow_normal against the dense capacity-matrix oracle over 100 shapes.
PropertyResult check_oracle_equivalence(const PropertyOptions& opts = {});
// flow_causal against the prefix-recomputation oracle for n <= 32, plus 50
// future-perturbation trials that must leave prefixes bit-identical.
PropertyResult check_causality(const PropertyOptions& opts = {});
// Reverse-mode gradients of normal and causal flow attention against central
// differences, n, m, d <= 8, h in {1, 2}.
PropertyResult check_gradients(const PropertyOptions& opts = {});

// Runs the four suites in order; stops at the first failure.
std::vector<PropertyResult> run_selftest(const PropertyOptions& opts = {},
                                         const std::function<void(const PropertyResult&)>& on_result = {});

}  // namespace flowattn

#endif  // FLOWATTN_PROPERTIES_HPP_
