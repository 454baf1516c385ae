#pragma once

#include <cstdint>
#include <vector>

#include "resmoe/experts.hpp"
#include "resmoe/matrix.hpp"

namespace resmoe {

enum class SparseFormat { COO, CSR };
enum class IndexWidth { I16 = 16, I32 = 32, I64 = 64 };

std::string to_string(SparseFormat f);
std::string to_string(IndexWidth w);

// Magnitude-pruned matrix. Entries are stored row-major. COO keeps
// (row, col) pairs at the declared index width; CSR keeps per-row pointers
// (always 32-bit) plus column indices at the declared width. Values are
// kept as doubles in memory; files store them as 32-bit floats.
struct SparseResidual {
  std::size_t rows = 0;
  std::size_t cols = 0;
  SparseFormat format = SparseFormat::COO;
  IndexWidth index_width = IndexWidth::I32;
  double keep_ratio = 1.0;

  std::vector<std::uint32_t> row_idx; // COO only
  std::vector<std::uint32_t> col_idx;
  std::vector<std::uint32_t> row_ptr; // CSR only, rows + 1 entries
  std::vector<double> values;

  std::size_t nnz() const { return values.size(); }
  DenseMatrix decode() const;
};

// Truncated SVD, u * diag(s) * v^T with orthonormal factor columns and
// non-increasing singular values.
struct LowRankResidual {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t rank = 0;
  DenseMatrix u; // rows x rank
  Vector s;      // rank
  DenseMatrix v; // cols x rank

  DenseMatrix decode() const;
};

// Whole rows kept by L1 norm; the rest decode to zero.
struct RowPrunedMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint32_t> kept; // ascending row indices
  DenseMatrix block;               // kept.size() x cols

  DenseMatrix decode() const;
};

// Keeps the ceil(s * rows * cols) largest-|value| entries; ties break by
// (row, col) ascending. Throws ValidationError unless 0 < s <= 1, and
// IndexOverflow when a stored coordinate does not fit the declared width.
SparseResidual prune_magnitude(const DenseMatrix& m, double s,
                               SparseFormat format, IndexWidth width);

// One global magnitude threshold across all inputs (total budget
// ceil(s * total size)), then encoded per matrix.
std::vector<SparseResidual> prune_concat(const std::vector<DenseMatrix>& ms,
                                         double s, SparseFormat format,
                                         IndexWidth width);

// Keeps the ceil(s * rows) rows of largest L1 norm (ties toward lower
// index). On a design matrix this removes whole hidden units: the w1/b1
// (and w3/b3) row together with the matching w2 column.
RowPrunedMatrix prune_structured(const DenseMatrix& m, double s);
DesignMatrix prune_structured(const DesignMatrix& d, double s);

// Largest rank whose factored parameter count k*(p_inner + cols) stays
// within the keep_ratio budget s * p_inner * cols, where cols counts the
// weight matrices only (2p two-layer, 3p gated); at least 1.
std::size_t svd_rank_for_budget(ExpertKind kind, std::size_t p,
                                std::size_t p_inner, double s);

// Best rank-k approximation in Frobenius norm. Throws RankError unless
// 1 <= k <= min(rows, cols).
LowRankResidual svd_truncate(const DenseMatrix& m, std::size_t k);

} // namespace resmoe
