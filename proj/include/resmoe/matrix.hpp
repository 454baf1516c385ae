#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "resmoe/errors.hpp"

namespace resmoe {

using Vector = std::vector<double>;

// Dense row-major matrix of doubles. Small value type used everywhere;
// heavy loops live in kernels.hpp so they can run serial or OpenMP.
struct DenseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data; // rows * cols, row-major

  DenseMatrix() = default;
  DenseMatrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  std::span<double> row(std::size_t i) {
    return std::span<double>(data.data() + i * cols, cols);
  }
  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(data.data() + i * cols, cols);
  }

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }

  bool same_shape(const DenseMatrix& o) const {
    return rows == o.rows && cols == o.cols;
  }
};

inline DenseMatrix transpose(const DenseMatrix& m) {
  DenseMatrix t(m.cols, m.rows);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j)
      t.at(j, i) = m.at(i, j);
  return t;
}

inline void require_same_shape(const DenseMatrix& a, const DenseMatrix& b,
                               const char* what) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(what) + ": shape mismatch (" +
                     std::to_string(a.rows) + "x" + std::to_string(a.cols) +
                     " vs " + std::to_string(b.rows) + "x" +
                     std::to_string(b.cols) + ")");
}

} // namespace resmoe
