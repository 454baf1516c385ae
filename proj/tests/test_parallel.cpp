#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <vector>

#include "resmoe/barycenter.hpp"
#include "resmoe/compressed.hpp"
#include "resmoe/kernels.hpp"
#include "resmoe/rng.hpp"
#include "resmoe/synth.hpp"

using namespace resmoe;

namespace {

struct ParallelGuard {
  bool prev = kernels::parallel_enabled();
  ~ParallelGuard() { kernels::set_parallel(prev); }
};

DenseMatrix random_matrix(std::size_t rows, std::size_t cols, SplitMix64& rng) {
  DenseMatrix m(rows, cols);
  for (double& v : m.data) v = rng.next_normal();
  return m;
}

SynthSpec wide_spec(std::uint64_t seed) {
  SynthSpec s;
  s.family = SynthFamily::Planted;
  s.kind = ExpertKind::TwoLayer;
  s.activation = Activation::GELU;
  s.n_experts = 5;
  s.p = 5;
  s.p_inner = 80; // above every parallel cutover
  s.top_k = 2;
  s.noise_sigma = 0.05;
  s.seed = seed;
  return s;
}

} // namespace

TEST_CASE("parallel toggle reports and restores") {
  ParallelGuard guard;
  CHECK(kernels::max_threads() >= 1);
  kernels::set_parallel(false);
  CHECK(!kernels::parallel_enabled());
  kernels::set_parallel(true);
}

TEST_CASE("threaded kernels agree with the serial reference bitwise") {
  ParallelGuard guard;
  kernels::set_parallel(true);
  SplitMix64 rng(404);

  SUBCASE("matvec") {
    const DenseMatrix m = random_matrix(130, 83, rng);
    std::vector<double> x(83), ys(130), yp(130);
    for (double& v : x) v = rng.next_normal();
    kernels::serial::matvec(m, x, ys);
    kernels::matvec(m, x, yp);
    CHECK(ys == yp);
  }
  SUBCASE("matvec_transpose") {
    const DenseMatrix m = random_matrix(90, 111, rng);
    std::vector<double> x(90), ys(111), yp(111);
    for (double& v : x) v = rng.next_normal();
    kernels::serial::matvec_transpose(m, x, ys);
    kernels::matvec_transpose(m, x, yp);
    CHECK(ys == yp);
  }
  SUBCASE("pairwise_sqdist") {
    const DenseMatrix a = random_matrix(41, 19, rng);
    const DenseMatrix b = random_matrix(37, 19, rng);
    DenseMatrix cs, cp;
    kernels::serial::pairwise_sqdist(a, b, cs);
    kernels::pairwise_sqdist(a, b, cp);
    CHECK(cs.data == cp.data);
  }
  SUBCASE("frobenius norms") {
    const DenseMatrix a = random_matrix(97, 61, rng);
    const DenseMatrix b = random_matrix(97, 61, rng);
    CHECK(kernels::serial::frobenius_sq(a) == kernels::frobenius_sq(a));
    CHECK(kernels::serial::frobenius_sq_diff(a, b) ==
          kernels::frobenius_sq_diff(a, b));
  }
}

TEST_CASE("disabling the toggle routes through the serial path") {
  ParallelGuard guard;
  SplitMix64 rng(405);
  const DenseMatrix m = random_matrix(128, 70, rng);
  std::vector<double> x(70), ya(128), yb(128);
  for (double& v : x) v = rng.next_normal();
  kernels::set_parallel(false);
  kernels::matvec(m, x, ya);
  kernels::serial::matvec(m, x, yb);
  CHECK(ya == yb);
}

TEST_CASE("barycenters are identical with and without threads") {
  ParallelGuard guard;
  const MoELayer layer = generate(wide_spec(9));
  std::vector<DesignMatrix> designs;
  for (const auto& e : layer.experts) designs.push_back(pack_design(e));
  BarycenterConfig cfg;

  kernels::set_parallel(false);
  const BarycenterResult serial = compute_barycenter_multirestart(designs, cfg);
  kernels::set_parallel(true);
  const BarycenterResult threaded =
      compute_barycenter_multirestart(designs, cfg);

  CHECK(serial.wb_loss == threaded.wb_loss);
  CHECK(serial.iterations == threaded.iterations);
  CHECK(serial.converged == threaded.converged);
  CHECK(serial.loss_trace == threaded.loss_trace);
  CHECK(serial.w_omega.m.data == threaded.w_omega.m.data);
  REQUIRE(serial.perms.size() == threaded.perms.size());
  for (std::size_t k = 0; k < serial.perms.size(); ++k)
    CHECK(serial.perms[k].map == threaded.perms[k].map);
}

TEST_CASE("compression artifacts are identical with and without threads") {
  ParallelGuard guard;
  const MoELayer layer = generate(wide_spec(10));

  for (Method m : {Method::ResMoE_UP, Method::ResMoE_SVD}) {
    CAPTURE(to_string(m));
    kernels::set_parallel(false);
    const CompressedLayer serial =
        compress_layer(layer, m, 0.25, CompressionConfig{});
    kernels::set_parallel(true);
    const CompressedLayer threaded =
        compress_layer(layer, m, 0.25, CompressionConfig{});

    CHECK(serial.wb_loss == threaded.wb_loss);
    CHECK(serial.residual_norms == threaded.residual_norms);
    REQUIRE(serial.perms.size() == threaded.perms.size());
    for (std::size_t k = 0; k < serial.perms.size(); ++k)
      CHECK(serial.perms[k].map == threaded.perms[k].map);
    for (std::size_t k = 0; k < layer.n_experts(); ++k)
      CHECK(restored_design(serial, k).m.data ==
            restored_design(threaded, k).m.data);

    SplitMix64 rng(11);
    for (int t = 0; t < 5; ++t) {
      Vector x(layer.p());
      for (double& v : x) v = rng.next_normal();
      kernels::set_parallel(false);
      const Vector ys = compressed_forward(serial, x);
      kernels::set_parallel(true);
      const Vector yp = compressed_forward(threaded, x);
      CHECK(ys == yp);
    }
  }
}
