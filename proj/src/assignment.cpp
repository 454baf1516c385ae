#include "resmoe/assignment.hpp"

#include <cmath>
#include <limits>

#include "resmoe/kernels.hpp"

namespace resmoe {

bool Permutation::is_identity() const {
  for (std::size_t i = 0; i < map.size(); ++i)
    if (map[i] != i) return false;
  return true;
}

Permutation Permutation::inverse() const {
  Permutation inv;
  inv.map.resize(map.size());
  for (std::size_t i = 0; i < map.size(); ++i) inv.map[map[i]] = static_cast<std::uint32_t>(i);
  return inv;
}

CostMatrix cost_matrix(const DenseMatrix& src, const DenseMatrix& dst) {
  if (src.rows == 0 || dst.rows == 0)
    throw EmptyInputError("cost_matrix: empty input");
  if (src.rows != dst.rows)
    throw ShapeError("cost_matrix: row counts differ (" +
                     std::to_string(src.rows) + " vs " +
                     std::to_string(dst.rows) + ")");
  if (src.cols != dst.cols)
    throw ShapeError("cost_matrix: column counts differ");
  CostMatrix c;
  kernels::pairwise_sqdist(src, dst, c.entries);
  return c;
}

CostMatrix cost_matrix(const DesignMatrix& src, const DesignMatrix& dst) {
  if (src.kind != dst.kind)
    throw ShapeError("cost_matrix: expert kinds differ");
  return cost_matrix(src.m, dst.m);
}

TransportPlan solve_assignment(const CostMatrix& c) {
  const std::size_t n = c.n();
  if (n == 0) throw EmptyInputError("solve_assignment: empty cost matrix");
  if (c.entries.cols != n)
    throw ShapeError("solve_assignment: cost matrix must be square");
  for (double v : c.entries.data)
    if (!std::isfinite(v))
      throw InvalidCostError("solve_assignment: non-finite cost entry");

  // Shortest augmenting paths with potentials; 1-based with a virtual
  // column 0.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> match(n + 1, 0); // match[col] = row (1-based)
  std::vector<std::size_t> way(n + 1, 0);

  auto cost = [&](std::size_t i, std::size_t j) {
    return c.entries.at(i - 1, j - 1);
  };

  for (std::size_t i = 1; i <= n; ++i) {
    match[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = match[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0, j) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  TransportPlan plan;
  plan.assignment.resize(n);
  for (std::size_t j = 1; j <= n; ++j)
    plan.assignment[match[j] - 1] = static_cast<std::uint32_t>(j - 1);
  plan.total_cost = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    plan.total_cost += c.entries.at(i, plan.assignment[i]);
  return plan;
}

double w2_squared(const DenseMatrix& a, const DenseMatrix& b) {
  const TransportPlan plan = solve_assignment(cost_matrix(a, b));
  return plan.total_cost / static_cast<double>(a.rows);
}

double w2_squared(const DesignMatrix& a, const DesignMatrix& b) {
  if (a.kind != b.kind) throw ShapeError("w2_squared: expert kinds differ");
  return w2_squared(a.m, b.m);
}

Permutation plan_to_permutation(const TransportPlan& plan) {
  Permutation t;
  t.map = plan.assignment;
  return t;
}

Permutation identity_permutation(std::size_t n) {
  Permutation t;
  t.map.resize(n);
  for (std::size_t i = 0; i < n; ++i) t.map[i] = static_cast<std::uint32_t>(i);
  return t;
}

DenseMatrix apply_permutation(const Permutation& perm, const DenseMatrix& w) {
  if (perm.n() != w.rows)
    throw ShapeError("apply_permutation: size mismatch");
  DenseMatrix out(w.rows, w.cols);
  for (std::size_t i = 0; i < w.rows; ++i) {
    const double* src = w.data.data() + i * w.cols;
    double* dst = out.data.data() + static_cast<std::size_t>(perm.map[i]) * w.cols;
    std::copy(src, src + w.cols, dst);
  }
  return out;
}

DesignMatrix apply_permutation(const Permutation& perm, const DesignMatrix& w) {
  return DesignMatrix(w.kind, w.p, apply_permutation(perm, w.m));
}

Permutation align_rows(const DenseMatrix& src, const DenseMatrix& dst) {
  return plan_to_permutation(solve_assignment(cost_matrix(src, dst)));
}

} // namespace resmoe
