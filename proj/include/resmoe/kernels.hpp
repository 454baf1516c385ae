#pragma once

#include <span>

#include "resmoe/matrix.hpp"

// Hot loops, each in two versions: a plain serial reference under
// kernels::serial, and a top-level OpenMP variant that parallelizes over
// rows. Every parallel loop writes disjoint outputs and keeps the inner
// summation order identical to the serial code, so results are bitwise
// equal regardless of thread count. set_parallel(false) forces the serial
// path at runtime (used by tests and the benchmark).

namespace resmoe::kernels {

bool parallel_enabled();
void set_parallel(bool on);
int max_threads();

namespace serial {

// y = M x
void matvec(const DenseMatrix& m, std::span<const double> x,
            std::span<double> y);

// y = M^T x
void matvec_transpose(const DenseMatrix& m, std::span<const double> x,
                      std::span<double> y);

// c[i][j] = squared euclidean distance between row i of a and row j of b
void pairwise_sqdist(const DenseMatrix& a, const DenseMatrix& b,
                     DenseMatrix& c);

double frobenius_sq(const DenseMatrix& m);

// ||a - b||_F^2
double frobenius_sq_diff(const DenseMatrix& a, const DenseMatrix& b);

} // namespace serial

void matvec(const DenseMatrix& m, std::span<const double> x,
            std::span<double> y);
void matvec_transpose(const DenseMatrix& m, std::span<const double> x,
                      std::span<double> y);
void pairwise_sqdist(const DenseMatrix& a, const DenseMatrix& b,
                     DenseMatrix& c);
double frobenius_sq(const DenseMatrix& m);
double frobenius_sq_diff(const DenseMatrix& a, const DenseMatrix& b);

} // namespace resmoe::kernels
