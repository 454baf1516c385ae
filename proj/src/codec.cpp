#include "resmoe/codec.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>
#include <Eigen/SVD>

namespace resmoe {

std::string to_string(SparseFormat f) {
  return f == SparseFormat::COO ? "coo" : "csr";
}

std::string to_string(IndexWidth w) {
  switch (w) {
    case IndexWidth::I16: return "16";
    case IndexWidth::I32: return "32";
    case IndexWidth::I64: return "64";
  }
  return "32";
}

DenseMatrix SparseResidual::decode() const {
  DenseMatrix m(rows, cols);
  if (format == SparseFormat::COO) {
    for (std::size_t e = 0; e < values.size(); ++e)
      m.at(row_idx[e], col_idx[e]) = values[e];
  } else {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::uint32_t e = row_ptr[r]; e < row_ptr[r + 1]; ++e)
        m.at(r, col_idx[e]) = values[e];
  }
  return m;
}

DenseMatrix LowRankResidual::decode() const {
  DenseMatrix m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    double* out = m.data.data() + i * cols;
    for (std::size_t r = 0; r < rank; ++r) {
      const double w = u.at(i, r) * s[r];
      const double* vrow = v.data.data(); // v is cols x rank
      for (std::size_t j = 0; j < cols; ++j) out[j] += w * vrow[j * rank + r];
    }
  }
  return m;
}

DenseMatrix RowPrunedMatrix::decode() const {
  DenseMatrix m(rows, cols);
  for (std::size_t b = 0; b < kept.size(); ++b) {
    const double* src = block.data.data() + b * cols;
    double* dst = m.data.data() + static_cast<std::size_t>(kept[b]) * cols;
    std::copy(src, src + cols, dst);
  }
  return m;
}

namespace {

struct Entry {
  double mag;
  std::uint32_t matrix;
  std::uint32_t row;
  std::uint32_t col;
  double value;
};

void check_ratio(double s) {
  if (!(s > 0.0) || s > 1.0)
    throw ValidationError("keep_ratio must be in (0, 1], got " +
                          std::to_string(s));
}

std::uint64_t width_max(IndexWidth w) {
  switch (w) {
    case IndexWidth::I16: return 0xffffULL;
    case IndexWidth::I32: return 0xffffffffULL;
    case IndexWidth::I64: return 0xffffffffffffffffULL;
  }
  return 0xffffffffULL;
}

// Entries must arrive sorted by (row, col).
SparseResidual encode_sorted(const DenseMatrix& shape_of,
                             const std::vector<Entry>& kept, double s,
                             SparseFormat format, IndexWidth width) {
  const std::uint64_t max_idx = width_max(width);
  SparseResidual out;
  out.rows = shape_of.rows;
  out.cols = shape_of.cols;
  out.format = format;
  out.index_width = width;
  out.keep_ratio = s;
  out.values.reserve(kept.size());
  for (const Entry& e : kept) {
    const std::uint64_t need = format == SparseFormat::COO
                                   ? std::max<std::uint64_t>(e.row, e.col)
                                   : e.col;
    if (need > max_idx)
      throw IndexOverflowError("sparse index " + std::to_string(need) +
                               " exceeds " + to_string(width) +
                               "-bit index width");
  }
  if (format == SparseFormat::COO) {
    out.row_idx.reserve(kept.size());
    out.col_idx.reserve(kept.size());
    for (const Entry& e : kept) {
      out.row_idx.push_back(e.row);
      out.col_idx.push_back(e.col);
      out.values.push_back(e.value);
    }
  } else {
    if (shape_of.rows + 1 > width_max(IndexWidth::I32))
      throw IndexOverflowError("csr row pointers exceed 32-bit range");
    out.row_ptr.assign(shape_of.rows + 1, 0);
    out.col_idx.reserve(kept.size());
    for (const Entry& e : kept) {
      out.row_ptr[e.row + 1]++;
      out.col_idx.push_back(e.col);
      out.values.push_back(e.value);
    }
    for (std::size_t r = 0; r < shape_of.rows; ++r)
      out.row_ptr[r + 1] += out.row_ptr[r];
  }
  return out;
}

std::vector<Entry> collect(const DenseMatrix& m, std::uint32_t matrix_id) {
  std::vector<Entry> entries;
  entries.reserve(m.data.size());
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j)
      entries.push_back(Entry{std::fabs(m.at(i, j)), matrix_id,
                              static_cast<std::uint32_t>(i),
                              static_cast<std::uint32_t>(j), m.at(i, j)});
  return entries;
}

void keep_top(std::vector<Entry>& entries, std::size_t budget) {
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.mag != b.mag) return a.mag > b.mag;
    if (a.matrix != b.matrix) return a.matrix < b.matrix;
    if (a.row != b.row) return a.row < b.row;
    return a.col < b.col;
  });
  if (entries.size() > budget) entries.resize(budget);
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.matrix != b.matrix) return a.matrix < b.matrix;
    if (a.row != b.row) return a.row < b.row;
    return a.col < b.col;
  });
}

} // namespace

SparseResidual prune_magnitude(const DenseMatrix& m, double s,
                               SparseFormat format, IndexWidth width) {
  check_ratio(s);
  if (m.empty()) throw EmptyInputError("prune_magnitude: empty matrix");
  std::vector<Entry> entries = collect(m, 0);
  const auto budget = static_cast<std::size_t>(
      std::ceil(s * static_cast<double>(m.rows) * static_cast<double>(m.cols)));
  keep_top(entries, budget);
  return encode_sorted(m, entries, s, format, width);
}

std::vector<SparseResidual> prune_concat(const std::vector<DenseMatrix>& ms,
                                         double s, SparseFormat format,
                                         IndexWidth width) {
  check_ratio(s);
  if (ms.empty()) throw EmptyInputError("prune_concat: no matrices");
  std::vector<Entry> entries;
  std::size_t total = 0;
  for (std::size_t k = 0; k < ms.size(); ++k) {
    if (ms[k].empty()) throw EmptyInputError("prune_concat: empty matrix");
    total += ms[k].data.size();
    auto part = collect(ms[k], static_cast<std::uint32_t>(k));
    entries.insert(entries.end(), part.begin(), part.end());
  }
  const auto budget =
      static_cast<std::size_t>(std::ceil(s * static_cast<double>(total)));
  keep_top(entries, budget);

  std::vector<SparseResidual> out;
  out.reserve(ms.size());
  std::size_t pos = 0;
  for (std::size_t k = 0; k < ms.size(); ++k) {
    std::vector<Entry> mine;
    while (pos < entries.size() && entries[pos].matrix == k)
      mine.push_back(entries[pos++]);
    out.push_back(encode_sorted(ms[k], mine, s, format, width));
  }
  return out;
}

RowPrunedMatrix prune_structured(const DenseMatrix& m, double s) {
  check_ratio(s);
  if (m.empty()) throw EmptyInputError("prune_structured: empty matrix");
  std::vector<std::size_t> order(m.rows);
  std::vector<double> l1(m.rows, 0.0);
  for (std::size_t i = 0; i < m.rows; ++i) {
    order[i] = i;
    for (std::size_t j = 0; j < m.cols; ++j) l1[i] += std::fabs(m.at(i, j));
  }
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (l1[a] != l1[b]) return l1[a] > l1[b];
    return a < b;
  });
  const auto keep = static_cast<std::size_t>(
      std::ceil(s * static_cast<double>(m.rows)));
  order.resize(std::min(keep, m.rows));
  std::sort(order.begin(), order.end());

  RowPrunedMatrix out;
  out.rows = m.rows;
  out.cols = m.cols;
  out.block = DenseMatrix(order.size(), m.cols);
  for (std::size_t b = 0; b < order.size(); ++b) {
    out.kept.push_back(static_cast<std::uint32_t>(order[b]));
    const double* src = m.data.data() + order[b] * m.cols;
    std::copy(src, src + m.cols, out.block.data.data() + b * m.cols);
  }
  return out;
}

DesignMatrix prune_structured(const DesignMatrix& d, double s) {
  return DesignMatrix(d.kind, d.p, prune_structured(d.m, s).decode());
}

std::size_t svd_rank_for_budget(ExpertKind kind, std::size_t p,
                                std::size_t p_inner, double s) {
  check_ratio(s);
  const double weight_cols =
      static_cast<double>((kind == ExpertKind::Gated ? 3 : 2) * p);
  const double pi = static_cast<double>(p_inner);
  const double exact = s * pi * weight_cols / (pi + weight_cols);
  const auto k = static_cast<std::size_t>(std::floor(exact));
  return std::max<std::size_t>(1, k);
}

LowRankResidual svd_truncate(const DenseMatrix& m, std::size_t k) {
  const std::size_t maxrank = std::min(m.rows, m.cols);
  if (k < 1 || k > maxrank)
    throw RankError("svd_truncate: rank " + std::to_string(k) +
                    " outside [1, " + std::to_string(maxrank) + "]");
  Eigen::MatrixXd a(m.rows, m.cols);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j) a(i, j) = m.at(i, j);
  Eigen::BDCSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const auto& u = svd.matrixU();
  const auto& v = svd.matrixV();

  LowRankResidual out;
  out.rows = m.rows;
  out.cols = m.cols;
  out.rank = k;
  out.u = DenseMatrix(m.rows, k);
  out.s.resize(k);
  out.v = DenseMatrix(m.cols, k);
  for (std::size_t r = 0; r < k; ++r) {
    out.s[r] = sv(static_cast<Eigen::Index>(r));
    for (std::size_t i = 0; i < m.rows; ++i)
      out.u.at(i, r) = u(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(r));
    for (std::size_t j = 0; j < m.cols; ++j)
      out.v.at(j, r) = v(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(r));
  }
  return out;
}

} // namespace resmoe
