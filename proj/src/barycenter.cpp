#include "resmoe/barycenter.hpp"

#include <cmath>
#include <cstdint>
#include <exception>

#include "resmoe/kernels.hpp"
#include "resmoe/rng.hpp"

namespace resmoe {

namespace {

void require_uniform(const std::vector<DesignMatrix>& ws) {
  if (ws.empty()) throw EmptyInputError("barycenter: no design matrices");
  for (std::size_t k = 1; k < ws.size(); ++k) {
    if (ws[k].kind != ws[0].kind)
      throw ShapeError("barycenter: mixed expert kinds");
    require_same_shape(ws[k].m, ws[0].m, "barycenter");
  }
}

DesignMatrix initial_center(const std::vector<DesignMatrix>& ws,
                            const BarycenterConfig& cfg) {
  switch (cfg.init) {
    case BarycenterConfig::Init::FirstExpert:
      return ws[0];
    case BarycenterConfig::Init::IndexedExpert:
      if (cfg.init_index >= ws.size())
        throw ValidationError("barycenter: init_index out of range");
      return ws[cfg.init_index];
    case BarycenterConfig::Init::RandomExpert: {
      SplitMix64 rng(cfg.init_seed);
      return ws[rng.next_below(ws.size())];
    }
    case BarycenterConfig::Init::Mean:
      break;
  }
  DenseMatrix mean(ws[0].m.rows, ws[0].m.cols);
  for (const auto& w : ws)
    for (std::size_t i = 0; i < mean.data.size(); ++i)
      mean.data[i] += w.m.data[i];
  const double inv = 1.0 / static_cast<double>(ws.size());
  for (double& v : mean.data) v *= inv;
  return DesignMatrix(ws[0].kind, ws[0].p, std::move(mean));
}

} // namespace

double frobenius_objective(const std::vector<DesignMatrix>& ws,
                           const DesignMatrix& w_omega,
                           const std::vector<Permutation>& perms) {
  require_uniform(ws);
  if (perms.size() != ws.size())
    throw ShapeError("frobenius_objective: one permutation per expert required");
  require_same_shape(w_omega.m, ws[0].m, "frobenius_objective");
  double total = 0.0;
  for (std::size_t k = 0; k < ws.size(); ++k) {
    const DenseMatrix aligned = apply_permutation(perms[k], ws[k].m);
    total += kernels::frobenius_sq_diff(aligned, w_omega.m);
  }
  return total / static_cast<double>(ws.size());
}

BarycenterResult compute_barycenter(const std::vector<DesignMatrix>& ws,
                                    const BarycenterConfig& cfg) {
  cfg.validate();
  require_uniform(ws);
  const std::size_t n = ws.size();
  const std::size_t rows = ws[0].m.rows, cols = ws[0].m.cols;

  BarycenterResult res;
  res.w_omega = initial_center(ws, cfg);
  res.perms.assign(n, identity_permutation(rows));

  double prev = 0.0;
  for (std::size_t it = 0;; ++it) {
    // (a) re-align every expert to the current center. The solves are
    // independent; each writes only its own slot. Exceptions must not
    // escape the parallel region, so the first one is stashed.
    const std::int64_t nn = static_cast<std::int64_t>(n);
    std::exception_ptr fail = nullptr;
#pragma omp parallel for schedule(dynamic) if (kernels::parallel_enabled())
    for (std::int64_t k = 0; k < nn; ++k) {
      try {
        const auto plan = solve_assignment(
            cost_matrix(ws[static_cast<std::size_t>(k)], res.w_omega));
        res.perms[static_cast<std::size_t>(k)] = plan_to_permutation(plan);
      } catch (...) {
#pragma omp critical
        if (!fail) fail = std::current_exception();
      }
    }
    if (fail) std::rethrow_exception(fail);

    const double cur = frobenius_objective(ws, res.w_omega, res.perms);
    res.loss_trace.push_back(cur);
    res.wb_loss = cur;

    if (it > 0 && prev - cur <= cfg.rel_tol * std::max(prev, 1e-300)) {
      res.converged = true;
      break;
    }
    if (it >= cfg.max_iters) break;
    prev = cur;

    // (b) center = mean of aligned experts, the Frobenius minimizer for
    // fixed alignments. Fixed summation order over experts.
    DenseMatrix acc(rows, cols);
    for (std::size_t k = 0; k < n; ++k) {
      const auto& perm = res.perms[k];
      const DenseMatrix& w = ws[k].m;
      for (std::size_t i = 0; i < rows; ++i) {
        const double* src = w.data.data() + i * cols;
        double* dst = acc.data.data() + static_cast<std::size_t>(perm.map[i]) * cols;
        for (std::size_t j = 0; j < cols; ++j) dst[j] += src[j];
      }
    }
    const double inv = 1.0 / static_cast<double>(n);
    for (double& v : acc.data) v *= inv;
    res.w_omega = DesignMatrix(ws[0].kind, ws[0].p, std::move(acc));
    res.iterations = it + 1;
  }
  return res;
}

BarycenterResult compute_barycenter_multirestart(
    const std::vector<DesignMatrix>& ws, const BarycenterConfig& cfg) {
  BarycenterConfig c = cfg;
  c.init = BarycenterConfig::Init::Mean;
  BarycenterResult best = compute_barycenter(ws, c);
  for (std::size_t k = 0; k < ws.size(); ++k) {
    c.init = BarycenterConfig::Init::IndexedExpert;
    c.init_index = k;
    BarycenterResult r = compute_barycenter(ws, c);
    if (r.wb_loss < best.wb_loss) best = std::move(r);
  }
  return best;
}

LossIdentityCheck verify_loss_identity(const std::vector<DesignMatrix>& ws,
                                       const BarycenterResult& result) {
  LossIdentityCheck check;
  check.frob_value = frobenius_objective(ws, result.w_omega, result.perms);
  const double rows = static_cast<double>(result.w_omega.rows());
  double acc = 0.0;
  for (const auto& w : ws) acc += rows * w2_squared(w, result.w_omega);
  check.wb_value = acc / static_cast<double>(ws.size());
  check.gap = std::fabs(check.frob_value - check.wb_value);
  check.ok = check.gap <= 1e-9 * (1.0 + check.frob_value);
  return check;
}

} // namespace resmoe
