#include <chrono>
#include <cmath>
#include <cstdio>
#include <vector>

#include "resmoe/barycenter.hpp"
#include "resmoe/codec.hpp"
#include "resmoe/kernels.hpp"
#include "resmoe/rng.hpp"

// Times the serial reference against the OpenMP path on the hot pieces and
// checks they agree bitwise. Each measurement repeats three times and keeps
// the best.

namespace {

using namespace resmoe;
using Clock = std::chrono::steady_clock;

template <typename F>
double best_of_3(F&& f) {
  double best = 1e300;
  for (int r = 0; r < 3; ++r) {
    const auto t0 = Clock::now();
    f();
    const double s = std::chrono::duration<double>(Clock::now() - t0).count();
    if (s < best) best = s;
  }
  return best;
}

DenseMatrix random_matrix(std::size_t rows, std::size_t cols, SplitMix64& rng) {
  DenseMatrix m(rows, cols);
  for (double& v : m.data) v = rng.next_normal();
  return m;
}

double max_abs_diff(const std::vector<double>& a,
                    const std::vector<double>& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

void report(const char* name, double serial_s, double parallel_s,
            double diff) {
  std::printf("%-18s serial %8.4f s   parallel %8.4f s   speedup %5.2fx   "
              "max|diff| %g\n",
              name, serial_s, parallel_s, serial_s / parallel_s, diff);
}

} // namespace

int main() {
  std::printf("threads available: %d\n\n", kernels::max_threads());
  SplitMix64 rng(42);

  {
    const DenseMatrix a = random_matrix(768, 512, rng);
    const DenseMatrix b = random_matrix(768, 512, rng);
    DenseMatrix c0(768, 768), c1(768, 768);
    const double ts = best_of_3([&] {
      for (int i = 0; i < 8; ++i) kernels::serial::pairwise_sqdist(a, b, c0);
    });
    const double tp = best_of_3([&] {
      for (int i = 0; i < 8; ++i) kernels::pairwise_sqdist(a, b, c1);
    });
    report("pairwise_sqdist", ts, tp, max_abs_diff(c0.data, c1.data));
  }

  {
    const DenseMatrix m = random_matrix(4096, 2048, rng);
    std::vector<double> x(2048), y0(4096), y1(4096);
    for (double& v : x) v = rng.next_normal();
    const double ts = best_of_3([&] {
      for (int i = 0; i < 64; ++i) kernels::serial::matvec(m, x, y0);
    });
    const double tp = best_of_3([&] {
      for (int i = 0; i < 64; ++i) kernels::matvec(m, x, y1);
    });
    report("matvec", ts, tp, max_abs_diff(y0, y1));
  }

  {
    SplitMix64 gen(7);
    std::vector<DesignMatrix> ws;
    for (int k = 0; k < 8; ++k)
      ws.emplace_back(ExpertKind::TwoLayer, 63,
                      random_matrix(256, 127, gen));
    BarycenterConfig cfg;
    cfg.max_iters = 4;
    cfg.rel_tol = 1e-300; // run all four iterations
    BarycenterResult r0, r1;
    kernels::set_parallel(false);
    const double ts = best_of_3([&] { r0 = compute_barycenter(ws, cfg); });
    kernels::set_parallel(true);
    const double tp = best_of_3([&] { r1 = compute_barycenter(ws, cfg); });
    report("barycenter", ts, tp,
           max_abs_diff(r0.w_omega.m.data, r1.w_omega.m.data));
  }

  {
    SplitMix64 gen(9);
    const DenseMatrix m = random_matrix(1024, 1024, gen);
    SparseResidual s0, s1;
    kernels::set_parallel(false);
    const double ts = best_of_3([&] {
      s0 = prune_magnitude(m, 0.25, SparseFormat::CSR, IndexWidth::I32);
    });
    kernels::set_parallel(true);
    const double tp = best_of_3([&] {
      s1 = prune_magnitude(m, 0.25, SparseFormat::CSR, IndexWidth::I32);
    });
    report("prune_magnitude", ts, tp, max_abs_diff(s0.values, s1.values));
  }

  return 0;
}
