#pragma once

#include <cstdint>

#include "resmoe/experts.hpp"
#include "resmoe/matrix.hpp"

namespace resmoe {

// Square cost matrix for matching rows of a source matrix to rows of a
// destination matrix.
struct CostMatrix {
  DenseMatrix entries; // n x n

  std::size_t n() const { return entries.rows; }
};

// Optimal coupling between two uniform discrete distributions with equal
// support size. For this problem the optimal plan is a permutation carrying
// mass 1/n per pair, so the plan is stored as the column assigned to each
// row.
struct TransportPlan {
  std::vector<std::uint32_t> assignment; // assignment[row] = column
  double total_cost = 0.0;               // sum of matched entries, unscaled
};

// Row permutation. apply(perm, w) builds T*w where T is the 0/1 matrix with
// T[perm[i]][i] = 1, i.e. row i of w lands at row perm[i] of the result.
struct Permutation {
  std::vector<std::uint32_t> map; // map[source_row] = target_row

  std::size_t n() const { return map.size(); }
  bool is_identity() const;
  Permutation inverse() const;
};

// entries[i][j] = squared euclidean distance between row i of src and row j
// of dst. Throws ShapeError on column mismatch or empty input.
CostMatrix cost_matrix(const DenseMatrix& src, const DenseMatrix& dst);
CostMatrix cost_matrix(const DesignMatrix& src, const DesignMatrix& dst);

// Exact minimum-cost assignment (Jonker-Volgenant style shortest augmenting
// paths, O(n^3)). Deterministic: rows are inserted in order and strict
// comparisons break ties toward lower indices. Throws InvalidCostError on
// NaN or infinite entries, EmptyInputError on n = 0.
TransportPlan solve_assignment(const CostMatrix& c);

// Squared 2-Wasserstein distance between the uniform distributions on the
// rows of a and b: minimal assignment cost divided by the number of rows.
double w2_squared(const DenseMatrix& a, const DenseMatrix& b);
double w2_squared(const DesignMatrix& a, const DesignMatrix& b);

// The permutation that moves source rows onto their matched destination
// rows: map[row] = assignment[row].
Permutation plan_to_permutation(const TransportPlan& plan);

Permutation identity_permutation(std::size_t n);

// T * w: row i of w lands at row perm.map[i] of the result.
DenseMatrix apply_permutation(const Permutation& perm, const DenseMatrix& w);
DesignMatrix apply_permutation(const Permutation& perm, const DesignMatrix& w);

// Finds the permutation aligning src onto dst (minimizing ||T*src - dst||_F)
// and returns it. Equivalent to plan_to_permutation(solve_assignment(
// cost_matrix(src, dst))).
Permutation align_rows(const DenseMatrix& src, const DenseMatrix& dst);

} // namespace resmoe
