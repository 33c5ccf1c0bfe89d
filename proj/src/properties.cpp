#include "flowattn/properties.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "flowattn/attention.hpp"
#include "flowattn/error.hpp"
#include "flowattn/gradcheck.hpp"
#include "flowattn/oracle.hpp"
#include "flowattn/rng.hpp"

namespace flowattn {

namespace {

using Clock = std::chrono::steady_clock;

double normwise_rel_err(const Tensor<double>& got, const Tensor<double>& want) {
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < want.size(); ++i) {
    diff = std::max(diff, std::abs(got[i] - want[i]));
    scale = std::max(scale, std::abs(want[i]));
  }
  return diff / std::max(scale, 1e-300);
}

AttentionConfig flow_config(Mechanism mech, std::size_t heads, double eps, const PropertyOptions& opts) {
  AttentionConfig cfg;
  cfg.mechanism = mech;
  cfg.heads = heads;
  cfg.eps = opts.inject_negative_eps ? -1e-3 : eps;
  return cfg;
}

// Wraps a suite body: times it and turns exceptions into a named failure.
template <typename Body>
PropertyResult run_suite(std::string name, double tolerance, Body body) {
  PropertyResult r;
  r.name = std::move(name);
  r.tolerance = tolerance;
  const auto start = Clock::now();
  try {
    body(r);
    r.passed = r.worst <= tolerance && r.detail.empty();
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = e.what();
  }
  r.seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return r;
}

void note_case(PropertyResult& r, double err, const std::string& where) {
  ++r.cases;
  if (!(err <= r.worst)) {
    r.worst = std::isnan(err) ? INFINITY : err;
    if (r.worst > r.tolerance) r.detail = where;
  }
}

std::string describe(const char* what, std::uint64_t seed, std::size_t n, std::size_t m, std::size_t d,
                     std::size_t h) {
  return std::string(what) + " (seed " + std::to_string(seed) + ", n=" + std::to_string(n) +
         ", m=" + std::to_string(m) + ", d=" + std::to_string(d) + ", h=" + std::to_string(h) + ")";
}

}  // namespace

PropertyResult check_conservation(const PropertyOptions& opts) {
  return run_suite("conservation", 1e-10, [&](PropertyResult& r) {
    for (std::uint64_t s = 0; s < 100; ++s) {
      const std::uint64_t seed = opts.seed * 1000 + s;
      Rng rng(seed);
      const std::size_t h = 1 + rng.below(4);
      const std::size_t n = 1 + rng.below(64), m = 1 + rng.below(64), d = h * (1 + rng.below(8));
      const Tensor<double> q = random_uniform<double>(Shape{n, d}, rng, -3, 3);
      const Tensor<double> k = random_uniform<double>(Shape{m, d}, rng, -3, 3);
      const Tensor<double> v = random_uniform<double>(Shape{m, d}, rng);
      const AttentionConfig cfg = flow_config(Mechanism::kFlowNormal, h, 0.0, opts);
      const auto stats = flow_attention_normal(q, k, v, cfg).stats;
      if (!stats) throw InternalError("flow_attention_normal returned no flow statistics");

      // Normalized capacity sums, rebuilt from phi(Q), phi(K) and the flows.
      const std::size_t e = d / h;
      double worst = 0.0;
      for (std::size_t hd = 0; hd < h; ++hd) {
        std::vector<double> qsum(e, 0.0), ksum(e, 0.0);
        auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t c = 0; c < e; ++c) qsum[c] += sig(q.at(i, hd * e + c));
        for (std::size_t j = 0; j < m; ++j)
          for (std::size_t c = 0; c < e; ++c) ksum[c] += sig(k.at(j, hd * e + c));
        for (std::size_t j = 0; j < m; ++j) {
          double out = 0.0;
          for (std::size_t c = 0; c < e; ++c) out += sig(k.at(j, hd * e + c)) * qsum[c];
          worst = std::max(worst, std::abs(out / (stats->outgoing.at(j, hd) + cfg.eps) - 1.0));
        }
        for (std::size_t i = 0; i < n; ++i) {
          double in = 0.0;
          for (std::size_t c = 0; c < e; ++c) in += sig(q.at(i, hd * e + c)) * ksum[c];
          worst = std::max(worst, std::abs(in / (stats->incoming.at(i, hd) + cfg.eps) - 1.0));
        }
      }
      note_case(r, worst, describe("conservation", seed, n, m, d, h));
    }
  });
}

PropertyResult check_oracle_equivalence(const PropertyOptions& opts) {
  return run_suite("oracle-equivalence", 1e-10, [&](PropertyResult& r) {
    for (std::uint64_t s = 0; s < 100; ++s) {
      const std::uint64_t seed = opts.seed * 1000 + 100 + s;
      Rng rng(seed);
      const std::size_t h = 1 + rng.below(4);
      const std::size_t n = 1 + rng.below(48), m = 1 + rng.below(48), d = h * (1 + rng.below(8));
      const Tensor<double> q = random_uniform<double>(Shape{n, d}, rng, -2, 2);
      const Tensor<double> k = random_uniform<double>(Shape{m, d}, rng, -2, 2);
      const Tensor<double> v = random_uniform<double>(Shape{m, d}, rng, -2, 2);
      const AttentionConfig cfg = flow_config(Mechanism::kFlowNormal, h, 1e-6, opts);
      const double err = normwise_rel_err(flow_attention_normal(q, k, v, cfg).output, flow_oracle_dense(q, k, v, cfg));
      note_case(r, err, describe("flow_normal vs dense oracle", seed, n, m, d, h));
    }
  });
}

PropertyResult check_causality(const PropertyOptions& opts) {
  return run_suite("causality", 1e-10, [&](PropertyResult& r) {
    for (std::uint64_t s = 0; s < 50; ++s) {
      const std::uint64_t seed = opts.seed * 1000 + 200 + s;
      Rng rng(seed);
      const std::size_t h = 1 + rng.below(2);
      const std::size_t n = 1 + rng.below(32), d = h * (1 + rng.below(6));
      const Tensor<double> q = random_uniform<double>(Shape{n, d}, rng, -2, 2);
      const Tensor<double> k = random_uniform<double>(Shape{n, d}, rng, -2, 2);
      const Tensor<double> v = random_uniform<double>(Shape{n, d}, rng, -2, 2);
      const AttentionConfig cfg = flow_config(Mechanism::kFlowCausal, h, 1e-6, opts);
      const Tensor<double> out = flow_attention_causal(q, k, v, cfg).output;
      note_case(r, normwise_rel_err(out, flow_causal_prefix_oracle(q, k, v, cfg)),
                describe("flow_causal vs prefix oracle", seed, n, n, d, h));

      // Perturb everything after a random cut; rows up to the cut must not move.
      const std::size_t cut = rng.below(n);
      Tensor<double> q2 = q, k2 = k, v2 = v;
      for (std::size_t i = (cut + 1) * d; i < n * d; ++i) {
        q2[i] += rng.uniform(-3, 3);
        k2[i] += rng.uniform(-3, 3);
        v2[i] += rng.uniform(-3, 3);
      }
      const Tensor<double> out2 = flow_attention_causal(q2, k2, v2, cfg).output;
      for (std::size_t i = 0; i < (cut + 1) * d; ++i) {
        if (out2[i] != out[i]) {
          r.detail = describe("prefix changed under future perturbation", seed, n, n, d, h);
          return;
        }
      }
    }
  });
}

PropertyResult check_gradients(const PropertyOptions& opts) {
  return run_suite("gradients", 1e-4, [&](PropertyResult& r) {
    std::uint64_t seed = opts.seed * 1000 + 300;
    for (Mechanism mech : {Mechanism::kFlowNormal, Mechanism::kFlowCausal}) {
      for (std::size_t h : {1, 2}) {
        for (int trial = 0; trial < 3; ++trial, ++seed) {
          Rng rng(seed);
          const std::size_t n = 1 + rng.below(8);
          const std::size_t m = mech == Mechanism::kFlowCausal ? n : 1 + rng.below(8);
          const std::size_t d = h * (1 + rng.below(8 / h));
          const AttentionConfig cfg = flow_config(mech, h, 1e-6, opts);
          const ParamMap params{{"q", random_uniform<double>(Shape{n, d}, rng)},
                                {"k", random_uniform<double>(Shape{m, d}, rng)},
                                {"v", random_uniform<double>(Shape{m, d}, rng)}};
          const Tensor<double> w = random_uniform<double>(Shape{n, d}, rng);
          auto fn = [&](ad::Tape<double>& t, const VarMap& x) {
            return ad::sum_all(ad::mul(attend(x.at("q"), x.at("k"), x.at("v"), cfg).output, t.constant(w)));
          };
          note_case(r, finite_diff_check(fn, params).worst(),
                    describe(mech == Mechanism::kFlowNormal ? "flow_normal gradient" : "flow_causal gradient", seed,
                             n, m, d, h));
        }
      }
    }
  });
}

std::vector<PropertyResult> run_selftest(const PropertyOptions& opts,
                                         const std::function<void(const PropertyResult&)>& on_result) {
  std::vector<PropertyResult> out;
  for (auto suite : {check_conservation, check_oracle_equivalence, check_causality, check_gradients}) {
    out.push_back(suite(opts));
    if (on_result) on_result(out.back());
    if (!out.back().passed) break;
  }
  return out;
}

}  // namespace flowattn
