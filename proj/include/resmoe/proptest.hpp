#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "resmoe/barycenter.hpp"
#include "resmoe/metrics.hpp"

namespace resmoe {

// Outcome of one property suite. max_gap is the largest deviation the
// suite observed, measured the same way the property is stated (relative
// where the bound is relative).
struct SuiteResult {
  std::string suite;
  std::size_t cases = 0;
  std::size_t failures = 0;
  double max_gap = 0.0;
  double elapsed_s = 0.0;
};

// Exact optimum of the alignment objective by exhaustive enumeration over
// all (rows!)^N permutation tuples; per tuple the best center is the mean
// of the aligned experts, so the value is closed-form. Only viable at toy
// dims (rows <= 4, N <= 3 keeps the tuple count at or below 13,824).
double brute_force_barycenter_loss(const std::vector<DesignMatrix>& ws);

// Random small instances, duplicate-row and all-equal cases included. Each
// case requires: the multi-restart barycenter matches the enumeration
// optimum to 1e-9 relative; the alignment objective equals the mean squared
// row-matching cost at the fixed point; every stored alignment is a
// bijection.
SuiteResult run_barycenter_suite(std::size_t cases, std::uint64_t seed);

// Random (expert, permutation, input) triples: permuting hidden units and
// carrying the matching column swap into the second layer must leave the
// expert's output unchanged to 1e-12.
SuiteResult run_equivariance_suite(std::size_t cases, std::uint64_t seed);

// Every method at keep-ratio 1 (full rank for the SVD methods, one group
// per expert for merging) must restore layer outputs to 1e-10 on random
// inputs and reach epsilon <= 1e-12.
SuiteResult run_codec_suite(std::size_t inputs, std::uint64_t seed);

// Planted models: epsilon and mean output L2 error are non-increasing in
// the keep ratio over {0.1, 0.25, 0.5, 1.0}, checked per seed for both
// sparse-residual and low-rank-residual compression.
SuiteResult run_monotonicity_suite(std::size_t seeds, std::uint64_t seed);

// Same conventions as render_report: CSV header plus one row per suite, or
// a JSON array of objects.
std::string render_suite_results(const std::vector<SuiteResult>& results,
                                 ReportFormat format);

} // namespace resmoe
