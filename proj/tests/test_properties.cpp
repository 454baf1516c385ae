#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <string>

#include <nlohmann/json.hpp>

#include "resmoe/proptest.hpp"
#include "resmoe/rng.hpp"

using namespace resmoe;

namespace {

DesignMatrix tiny_design(std::size_t rows, std::uint64_t seed) {
  SplitMix64 rng(seed);
  DenseMatrix m(rows, 3);
  for (double& v : m.data) v = rng.next_normal();
  return DesignMatrix(ExpertKind::TwoLayer, 1, std::move(m));
}

} // namespace

TEST_CASE("exhaustive reference loss is zero for identical inputs") {
  const DesignMatrix w = tiny_design(3, 1);
  CHECK(brute_force_barycenter_loss({w, w, w}) ==
        doctest::Approx(0.0).epsilon(1e-18));

  // A single input is its own barycenter.
  CHECK(brute_force_barycenter_loss({w}) == doctest::Approx(0.0).epsilon(1e-18));
}

TEST_CASE("barycenter suite holds on random toy instances") {
  const SuiteResult r = run_barycenter_suite(20, 2024);
  CHECK(r.suite == "barycenter");
  CHECK(r.cases == 20);
  CHECK(r.failures == 0);
  CHECK(r.max_gap <= 1e-9);
  CHECK(r.elapsed_s >= 0.0);
}

TEST_CASE("hidden-unit renumbering never changes outputs") {
  const SuiteResult r = run_equivariance_suite(200, 7);
  CHECK(r.suite == "equivariance");
  CHECK(r.cases == 200);
  CHECK(r.failures == 0);
  CHECK(r.max_gap <= 1e-12);
}

TEST_CASE("every codec is lossless at full keep ratio") {
  const SuiteResult r = run_codec_suite(10, 5);
  CHECK(r.suite == "codec_lossless");
  CHECK(r.failures == 0);
  CHECK(r.max_gap <= 1e-10);
}

TEST_CASE("error curves fall as the keep ratio rises") {
  const SuiteResult r = run_monotonicity_suite(3, 11);
  CHECK(r.suite == "sweep_monotone");
  CHECK(r.failures == 0);
}

TEST_CASE("suite results render like metric reports") {
  SuiteResult a;
  a.suite = "barycenter";
  a.cases = 50;
  a.failures = 0;
  a.max_gap = 2.5e-12;
  a.elapsed_s = 1.75;
  SuiteResult b;
  b.suite = "codec_lossless";
  b.cases = 10;
  b.failures = 1;
  b.max_gap = 0.5;
  b.elapsed_s = 0.25;

  const std::string csv = render_suite_results({a, b}, ReportFormat::CSV);
  CHECK(csv.rfind("suite,cases,failures,max_gap,elapsed_s\n", 0) == 0);
  CHECK(csv.find("barycenter,50,0,") != std::string::npos);
  CHECK(csv.find("codec_lossless,10,1,") != std::string::npos);

  const auto parsed =
      nlohmann::json::parse(render_suite_results({a, b}, ReportFormat::JSON));
  REQUIRE(parsed.is_array());
  REQUIRE(parsed.size() == 2);
  CHECK(parsed[0]["suite"] == "barycenter");
  CHECK(parsed[0]["failures"] == 0);
  CHECK(parsed[1]["max_gap"] == 0.5);
  CHECK(render_suite_results({}, ReportFormat::JSON) == "[]\n");
}
