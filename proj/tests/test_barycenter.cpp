#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "resmoe/barycenter.hpp"
#include "resmoe/proptest.hpp"
#include "resmoe/rng.hpp"

using namespace resmoe;

namespace {

// One-column design matrices ride on the degenerate two-layer p=0 layout.
DesignMatrix one_col(std::initializer_list<double> vals) {
  DenseMatrix m(vals.size(), 1);
  m.data.assign(vals);
  return DesignMatrix(ExpertKind::TwoLayer, 0, std::move(m));
}

DesignMatrix random_design(std::size_t rows, SplitMix64& rng) {
  DenseMatrix m(rows, 3);
  for (double& v : m.data) v = rng.next_normal();
  return DesignMatrix(ExpertKind::TwoLayer, 1, std::move(m));
}

std::vector<double> sorted_rows_1d(const DesignMatrix& d) {
  std::vector<double> v = d.m.data;
  std::sort(v.begin(), v.end());
  return v;
}

} // namespace

TEST_CASE("two one-column experts: center is the pairwise midpoint") {
  const std::vector<DesignMatrix> ws = {one_col({0.0, 2.0}),
                                        one_col({1.0, 3.0})};
  const BarycenterResult res = compute_barycenter(ws, BarycenterConfig{});
  CHECK(res.converged);
  CHECK(res.wb_loss == doctest::Approx(0.5).epsilon(1e-15));
  const std::vector<double> rows = sorted_rows_1d(res.w_omega);
  CHECK(rows[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(rows[1] == doctest::Approx(2.5).epsilon(1e-15));
}

TEST_CASE("a single expert is its own center") {
  SplitMix64 rng(1);
  const std::vector<DesignMatrix> ws = {random_design(5, rng)};
  const BarycenterResult res = compute_barycenter(ws, BarycenterConfig{});
  CHECK(res.converged);
  CHECK(res.iterations == 1);
  CHECK(res.wb_loss == 0.0);
  CHECK(res.w_omega.m.data == ws[0].m.data);
  CHECK(res.perms[0].is_identity());
}

TEST_CASE("identical experts converge immediately to zero loss") {
  SplitMix64 rng(2);
  const DesignMatrix w = random_design(6, rng);
  const std::vector<DesignMatrix> ws = {w, w, w, w};
  const BarycenterResult res = compute_barycenter(ws, BarycenterConfig{});
  CHECK(res.converged);
  CHECK(res.wb_loss == 0.0);
}

TEST_CASE("row-permuted copies of one expert are recovered exactly") {
  SplitMix64 rng(3);
  const DesignMatrix base = random_design(8, rng);
  std::vector<DesignMatrix> ws;
  for (int k = 0; k < 3; ++k) {
    Permutation t;
    t.map.resize(8);
    for (std::size_t i = 0; i < 8; ++i)
      t.map[i] = static_cast<std::uint32_t>(i);
    for (std::size_t i = 8; i > 1; --i)
      std::swap(t.map[i - 1], t.map[rng.next_below(i)]);
    ws.push_back(apply_permutation(t, base));
  }
  const BarycenterResult res =
      compute_barycenter_multirestart(ws, BarycenterConfig{});
  CHECK(res.converged);
  CHECK(res.wb_loss <= 1e-18);
  // Center rows must be the base rows, possibly reordered.
  std::vector<double> got = res.w_omega.m.data;
  std::vector<double> want = base.m.data;
  // Compare as sorted row triples.
  auto sort_rows = [](std::vector<double>& flat) {
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < flat.size(); i += 3)
      rows.push_back({flat[i], flat[i + 1], flat[i + 2]});
    std::sort(rows.begin(), rows.end());
    flat.clear();
    for (const auto& r : rows)
      flat.insert(flat.end(), r.begin(), r.end());
  };
  sort_rows(got);
  sort_rows(want);
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < got.size(); ++i)
    CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
}

TEST_CASE("the loss trace never increases") {
  SplitMix64 rng(4);
  std::vector<DesignMatrix> ws;
  for (int k = 0; k < 5; ++k) ws.push_back(random_design(7, rng));
  const BarycenterResult res = compute_barycenter(ws, BarycenterConfig{});
  REQUIRE(!res.loss_trace.empty());
  for (std::size_t i = 1; i < res.loss_trace.size(); ++i)
    CHECK(res.loss_trace[i] <= res.loss_trace[i - 1] + 1e-12);
  CHECK(res.wb_loss == res.loss_trace.back());
}

TEST_CASE("alignment objective equals the mean matching cost at the end") {
  SplitMix64 rng(5);
  for (int t = 0; t < 10; ++t) {
    std::vector<DesignMatrix> ws;
    const std::size_t n = 2 + rng.next_below(3);
    for (std::size_t k = 0; k < n; ++k) ws.push_back(random_design(6, rng));
    const BarycenterResult res = compute_barycenter(ws, BarycenterConfig{});
    const LossIdentityCheck check = verify_loss_identity(ws, res);
    CHECK(check.ok);
    CHECK(check.gap <= 1e-9 * (1.0 + check.frob_value));
  }
}

TEST_CASE("multi-restart never beats the exhaustive optimum") {
  // The alternation is a local search: mean + per-expert restarts can still
  // settle above the true optimum on unlucky draws, but never below it.
  // Exact-match coverage runs in run_barycenter_suite at its pinned seeds.
  SplitMix64 rng(4);
  std::size_t matched = 0;
  for (int t = 0; t < 8; ++t) {
    std::vector<DesignMatrix> ws;
    for (int k = 0; k < 3; ++k) ws.push_back(random_design(4, rng));
    const BarycenterResult res =
        compute_barycenter_multirestart(ws, BarycenterConfig{});
    const double brute = brute_force_barycenter_loss(ws);
    CHECK(res.wb_loss >= brute - 1e-12);
    if (res.wb_loss <= brute * (1.0 + 1e-9)) ++matched;
  }
  CHECK(matched >= 6);
}

TEST_CASE("loss is invariant to shuffling an input's rows") {
  SplitMix64 rng(6);
  std::vector<DesignMatrix> ws;
  for (int k = 0; k < 3; ++k) ws.push_back(random_design(6, rng));
  const double base =
      compute_barycenter_multirestart(ws, BarycenterConfig{}).wb_loss;

  Permutation t;
  t.map = {5, 3, 0, 1, 4, 2};
  ws[1] = apply_permutation(t, ws[1]);
  const double shuffled =
      compute_barycenter_multirestart(ws, BarycenterConfig{}).wb_loss;
  CHECK(shuffled == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("config validation") {
  BarycenterConfig cfg;
  cfg.max_iters = 0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = BarycenterConfig{};
  cfg.rel_tol = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = BarycenterConfig{};
  cfg.init = BarycenterConfig::Init::IndexedExpert;
  cfg.init_index = 9;
  SplitMix64 rng(7);
  std::vector<DesignMatrix> ws = {random_design(3, rng)};
  CHECK_THROWS_AS(compute_barycenter(ws, cfg), ValidationError);
}

TEST_CASE("empty and mismatched inputs are rejected") {
  CHECK_THROWS_AS(compute_barycenter({}, BarycenterConfig{}), EmptyInputError);
  SplitMix64 rng(8);
  std::vector<DesignMatrix> ws = {random_design(3, rng), random_design(4, rng)};
  CHECK_THROWS_AS(compute_barycenter(ws, BarycenterConfig{}), ShapeError);
}
