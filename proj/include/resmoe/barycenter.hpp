#pragma once

#include <cstdint>
#include <vector>

#include "resmoe/assignment.hpp"
#include "resmoe/experts.hpp"

namespace resmoe {

struct BarycenterConfig {
  enum class Init { Mean, FirstExpert, IndexedExpert, RandomExpert };

  std::size_t max_iters = 100;
  double rel_tol = 1e-8;
  Init init = Init::Mean;
  std::size_t init_index = 0;  // IndexedExpert
  std::uint64_t init_seed = 0; // RandomExpert

  void validate() const {
    if (max_iters < 1)
      throw ValidationError("barycenter config: max_iters must be >= 1");
    if (!(rel_tol > 0.0))
      throw ValidationError("barycenter config: rel_tol must be > 0");
  }
};

struct BarycenterResult {
  DesignMatrix w_omega;
  std::vector<Permutation> perms; // perms[k] aligns expert k onto w_omega
  double wb_loss = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  std::vector<double> loss_trace; // objective after each alignment step
};

// (1/N) sum_k ||T_k W_k - W_omega||_F^2
double frobenius_objective(const std::vector<DesignMatrix>& ws,
                           const DesignMatrix& w_omega,
                           const std::vector<Permutation>& perms);

// Free-support barycenter of the uniform row distributions by alternating
// minimization: (a) re-align every expert to the current center with
// solve_assignment, (b) replace the center with the mean of the aligned
// experts. The loss is non-increasing and the assignment space is finite,
// so a fixed point is reached quickly. The returned permutations are
// optimal for the returned center. Alternation can stall in a local
// minimum; compute_barycenter_multirestart is the certified variant for
// small instances.
BarycenterResult compute_barycenter(const std::vector<DesignMatrix>& ws,
                                    const BarycenterConfig& cfg);

// Runs compute_barycenter from the Mean initialization and once from each
// expert, returning the lowest-loss result (first on ties).
BarycenterResult compute_barycenter_multirestart(
    const std::vector<DesignMatrix>& ws, const BarycenterConfig& cfg);

// At any fixed point the alignment objective equals the mean squared
// 2-Wasserstein distance to the center. w2_squared averages the matching
// cost over rows, so the row count scales it back to the Frobenius value.
struct LossIdentityCheck {
  double frob_value = 0.0;
  double wb_value = 0.0;
  double gap = 0.0;
  bool ok = false;
};

LossIdentityCheck verify_loss_identity(const std::vector<DesignMatrix>& ws,
                                       const BarycenterResult& result);

} // namespace resmoe
