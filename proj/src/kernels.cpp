#include "resmoe/kernels.hpp"

#include <atomic>
#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace resmoe::kernels {

namespace {
std::atomic<bool> g_parallel{true};
} // namespace

bool parallel_enabled() {
#ifdef _OPENMP
  return g_parallel.load(std::memory_order_relaxed);
#else
  return false;
#endif
}

void set_parallel(bool on) { g_parallel.store(on, std::memory_order_relaxed); }

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace serial {

void matvec(const DenseMatrix& m, std::span<const double> x,
            std::span<double> y) {
  if (x.size() != m.cols || y.size() != m.rows)
    throw ShapeError("matvec: vector length mismatch");
  for (std::size_t i = 0; i < m.rows; ++i) {
    const double* row = m.data.data() + i * m.cols;
    double acc = 0.0;
    for (std::size_t j = 0; j < m.cols; ++j) acc += row[j] * x[j];
    y[i] = acc;
  }
}

void matvec_transpose(const DenseMatrix& m, std::span<const double> x,
                      std::span<double> y) {
  if (x.size() != m.rows || y.size() != m.cols)
    throw ShapeError("matvec_transpose: vector length mismatch");
  for (std::size_t j = 0; j < m.cols; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < m.rows; ++i) acc += m.data[i * m.cols + j] * x[i];
    y[j] = acc;
  }
}

void pairwise_sqdist(const DenseMatrix& a, const DenseMatrix& b,
                     DenseMatrix& c) {
  if (a.cols != b.cols)
    throw ShapeError("pairwise_sqdist: row dimension mismatch");
  if (c.rows != a.rows || c.cols != b.rows) c = DenseMatrix(a.rows, b.rows);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* ra = a.data.data() + i * a.cols;
    for (std::size_t j = 0; j < b.rows; ++j) {
      const double* rb = b.data.data() + j * b.cols;
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols; ++k) {
        const double d = ra[k] - rb[k];
        acc += d * d;
      }
      c.at(i, j) = acc;
    }
  }
}

double frobenius_sq(const DenseMatrix& m) {
  // Row-major partial sums added in row order; the parallel variant keeps
  // the same grouping so the two agree bitwise.
  double total = 0.0;
  for (std::size_t i = 0; i < m.rows; ++i) {
    const double* row = m.data.data() + i * m.cols;
    double acc = 0.0;
    for (std::size_t j = 0; j < m.cols; ++j) acc += row[j] * row[j];
    total += acc;
  }
  return total;
}

double frobenius_sq_diff(const DenseMatrix& a, const DenseMatrix& b) {
  require_same_shape(a, b, "frobenius_sq_diff");
  double total = 0.0;
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* ra = a.data.data() + i * a.cols;
    const double* rb = b.data.data() + i * a.cols;
    double acc = 0.0;
    for (std::size_t j = 0; j < a.cols; ++j) {
      const double d = ra[j] - rb[j];
      acc += d * d;
    }
    total += acc;
  }
  return total;
}

} // namespace serial

void matvec(const DenseMatrix& m, std::span<const double> x,
            std::span<double> y) {
  if (!parallel_enabled() || m.rows < 64) {
    serial::matvec(m, x, y);
    return;
  }
  if (x.size() != m.cols || y.size() != m.rows)
    throw ShapeError("matvec: vector length mismatch");
  const std::int64_t rows = static_cast<std::int64_t>(m.rows);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < rows; ++i) {
    const double* row = m.data.data() + i * static_cast<std::int64_t>(m.cols);
    double acc = 0.0;
    for (std::size_t j = 0; j < m.cols; ++j) acc += row[j] * x[j];
    y[static_cast<std::size_t>(i)] = acc;
  }
}

void matvec_transpose(const DenseMatrix& m, std::span<const double> x,
                      std::span<double> y) {
  if (!parallel_enabled() || m.cols < 64) {
    serial::matvec_transpose(m, x, y);
    return;
  }
  if (x.size() != m.rows || y.size() != m.cols)
    throw ShapeError("matvec_transpose: vector length mismatch");
  const std::int64_t cols = static_cast<std::int64_t>(m.cols);
#pragma omp parallel for schedule(static)
  for (std::int64_t j = 0; j < cols; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < m.rows; ++i)
      acc += m.data[i * m.cols + static_cast<std::size_t>(j)] * x[i];
    y[static_cast<std::size_t>(j)] = acc;
  }
}

void pairwise_sqdist(const DenseMatrix& a, const DenseMatrix& b,
                     DenseMatrix& c) {
  if (!parallel_enabled() || a.rows < 16) {
    serial::pairwise_sqdist(a, b, c);
    return;
  }
  if (a.cols != b.cols)
    throw ShapeError("pairwise_sqdist: row dimension mismatch");
  if (c.rows != a.rows || c.cols != b.rows) c = DenseMatrix(a.rows, b.rows);
  const std::int64_t rows = static_cast<std::int64_t>(a.rows);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < rows; ++i) {
    const double* ra = a.data.data() + i * static_cast<std::int64_t>(a.cols);
    for (std::size_t j = 0; j < b.rows; ++j) {
      const double* rb = b.data.data() + j * b.cols;
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols; ++k) {
        const double d = ra[k] - rb[k];
        acc += d * d;
      }
      c.at(static_cast<std::size_t>(i), j) = acc;
    }
  }
}

double frobenius_sq(const DenseMatrix& m) {
  if (!parallel_enabled() || m.rows < 64) return serial::frobenius_sq(m);
  const std::int64_t rows = static_cast<std::int64_t>(m.rows);
  std::vector<double> partial(m.rows);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < rows; ++i) {
    const double* row = m.data.data() + i * static_cast<std::int64_t>(m.cols);
    double acc = 0.0;
    for (std::size_t j = 0; j < m.cols; ++j) acc += row[j] * row[j];
    partial[static_cast<std::size_t>(i)] = acc;
  }
  double total = 0.0;
  for (double v : partial) total += v; // fixed order, matches serial
  return total;
}

double frobenius_sq_diff(const DenseMatrix& a, const DenseMatrix& b) {
  if (!parallel_enabled() || a.rows < 64)
    return serial::frobenius_sq_diff(a, b);
  require_same_shape(a, b, "frobenius_sq_diff");
  const std::int64_t rows = static_cast<std::int64_t>(a.rows);
  std::vector<double> partial(a.rows);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < rows; ++i) {
    const double* ra = a.data.data() + i * static_cast<std::int64_t>(a.cols);
    const double* rb = b.data.data() + i * static_cast<std::int64_t>(a.cols);
    double acc = 0.0;
    for (std::size_t j = 0; j < a.cols; ++j) {
      const double d = ra[j] - rb[j];
      acc += d * d;
    }
    partial[static_cast<std::size_t>(i)] = acc;
  }
  double total = 0.0;
  for (double v : partial) total += v;
  return total;
}

} // namespace resmoe::kernels
