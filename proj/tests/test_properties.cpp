#include "doctest.h"
#include "flowattn/properties.hpp"

using namespace flowattn;

TEST_CASE("property suites pass at the default seed") {
  std::size_t reported = 0;
  const auto results = run_selftest({}, [&](const PropertyResult&) { ++reported; });
  REQUIRE(results.size() == 4);
  CHECK(reported == 4);
  for (const auto& r : results) {
    INFO(r.name << ": " << r.detail);
    CHECK(r.passed);
    CHECK(r.worst <= r.tolerance);
  }
  CHECK(results[0].cases == 100);
  CHECK(results[1].cases == 100);
  CHECK(results[2].cases == 50);
}

TEST_CASE("negative eps fault is caught and named") {
  PropertyOptions opts;
  opts.inject_negative_eps = true;
  const auto results = run_selftest(opts);
  REQUIRE(results.size() == 1);
  CHECK_FALSE(results[0].passed);
  CHECK(results[0].name == "conservation");
  CHECK_FALSE(results[0].detail.empty());
}
