#include "resmoe/proptest.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

#include "resmoe/rng.hpp"
#include "resmoe/synth.hpp"

namespace resmoe {

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

bool is_bijection(const Permutation& t) {
  std::vector<bool> hit(t.n(), false);
  for (const auto v : t.map) {
    if (v >= t.n() || hit[v]) return false;
    hit[v] = true;
  }
  return true;
}

// Valid (kind, p) pairs whose design width stays at the toy cap.
struct ToyShape {
  ExpertKind kind;
  std::size_t p;
};
constexpr ToyShape kToyShapes[] = {
    {ExpertKind::TwoLayer, 0}, // 1 column
    {ExpertKind::Gated, 0},    // 2 columns
    {ExpertKind::TwoLayer, 1}, // 3 columns
};

} // namespace

double brute_force_barycenter_loss(const std::vector<DesignMatrix>& ws) {
  if (ws.empty())
    throw EmptyInputError("brute_force_barycenter_loss: no experts");
  const std::size_t n = ws.size();
  const std::size_t rows = ws[0].m.rows;
  const std::size_t cols = ws[0].m.cols;
  for (const auto& w : ws)
    require_same_shape(ws[0].m, w.m, "brute_force_barycenter_loss");

  std::vector<std::vector<std::size_t>> perm(
      n, std::vector<std::size_t>(rows));
  for (auto& p : perm) std::iota(p.begin(), p.end(), 0);

  DenseMatrix mean(rows, cols);
  double best = std::numeric_limits<double>::infinity();
  for (;;) {
    std::fill(mean.data.begin(), mean.data.end(), 0.0);
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t i = 0; i < rows; ++i) {
        const double* src = ws[k].m.data.data() + perm[k][i] * cols;
        double* dst = mean.data.data() + i * cols;
        for (std::size_t j = 0; j < cols; ++j) dst[j] += src[j];
      }
    const double inv = 1.0 / static_cast<double>(n);
    for (double& v : mean.data) v *= inv;

    double value = 0.0;
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t i = 0; i < rows; ++i) {
        const double* src = ws[k].m.data.data() + perm[k][i] * cols;
        const double* ctr = mean.data.data() + i * cols;
        for (std::size_t j = 0; j < cols; ++j) {
          const double d = src[j] - ctr[j];
          value += d * d;
        }
      }
    best = std::min(best, value * inv);

    // Odometer over the permutation tuple; next_permutation wraps back to
    // sorted order exactly when a position overflows.
    std::size_t pos = n;
    while (pos > 0 &&
           !std::next_permutation(perm[pos - 1].begin(), perm[pos - 1].end()))
      --pos;
    if (pos == 0) break;
  }
  return best;
}

SuiteResult run_barycenter_suite(std::size_t cases, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  SuiteResult sr;
  sr.suite = "barycenter";
  sr.cases = cases;

  SplitMix64 rng(seed);
  for (std::size_t c = 0; c < cases; ++c) {
    const std::size_t n = 2 + rng.next_below(2);
    const std::size_t rows = 2 + rng.next_below(3);
    const ToyShape shape = kToyShapes[rng.next_below(3)];
    const std::size_t cols = design_cols(shape.kind, shape.p);

    std::vector<DesignMatrix> ws;
    for (std::size_t k = 0; k < n; ++k) {
      DenseMatrix m(rows, cols);
      for (double& v : m.data) v = rng.next_normal();
      ws.emplace_back(shape.kind, shape.p, std::move(m));
    }
    if (c % 5 == 1) {
      // All experts equal: the optimum is exactly zero.
      for (std::size_t k = 1; k < n; ++k) ws[k].m = ws[0].m;
    } else if (c % 5 == 2) {
      // Duplicate a row inside every expert to stress tie-breaking.
      for (auto& w : ws) {
        const std::size_t a = rng.next_below(rows);
        const std::size_t b = rng.next_below(rows);
        for (std::size_t j = 0; j < cols; ++j)
          w.m.at(b, j) = w.m.at(a, j);
      }
    }

    const BarycenterConfig cfg;
    const BarycenterResult res = compute_barycenter_multirestart(ws, cfg);
    const double brute = brute_force_barycenter_loss(ws);
    const double opt_gap =
        std::abs(res.wb_loss - brute) / std::max(1.0, brute);

    const LossIdentityCheck check = verify_loss_identity(ws, res);
    const double prop_gap = check.gap / (1.0 + check.frob_value);

    bool bijective = true;
    for (const auto& t : res.perms) bijective = bijective && is_bijection(t);

    sr.max_gap = std::max({sr.max_gap, opt_gap, prop_gap});
    if (opt_gap > 1e-9 || !check.ok || !bijective || !res.converged)
      ++sr.failures;
  }
  sr.elapsed_s = seconds_since(t0);
  return sr;
}

SuiteResult run_equivariance_suite(std::size_t cases, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  SuiteResult sr;
  sr.suite = "equivariance";
  sr.cases = cases;

  SplitMix64 rng(seed);
  const Activation acts[] = {Activation::ReLU, Activation::GELU,
                             Activation::SiLU};
  for (std::size_t c = 0; c < cases; ++c) {
    ExpertWeights e;
    e.kind = rng.next_below(2) ? ExpertKind::Gated : ExpertKind::TwoLayer;
    e.activation = acts[rng.next_below(3)];
    const std::size_t p = 1 + rng.next_below(4);
    const std::size_t pi = 1 + rng.next_below(5);
    auto fill = [&](DenseMatrix& m, std::size_t r, std::size_t cc) {
      m = DenseMatrix(r, cc);
      for (double& v : m.data) v = rng.next_normal();
    };
    auto fillv = [&](Vector& v, std::size_t len) {
      v.assign(len, 0.0);
      for (double& x : v) x = rng.next_normal();
    };
    fill(e.w1, pi, p);
    fillv(e.b1, pi);
    fill(e.w2, p, pi);
    fillv(e.b2, p);
    if (e.kind == ExpertKind::Gated) {
      fill(e.w3, pi, p);
      fillv(e.b3, pi);
    }

    Permutation t;
    t.map.resize(pi);
    std::iota(t.map.begin(), t.map.end(), 0u);
    for (std::size_t i = pi; i > 1; --i)
      std::swap(t.map[i - 1], t.map[rng.next_below(i)]);

    const DesignMatrix permuted =
        apply_permutation(t, pack_design(e));
    const ExpertWeights shuffled =
        unpack_design(permuted, e.activation, e.b2);

    Vector x(p);
    for (double& v : x) v = rng.next_normal();
    const Vector y0 = expert_forward(e, x);
    const Vector y1 = expert_forward(shuffled, x);

    double dev = 0.0;
    for (std::size_t j = 0; j < y0.size(); ++j)
      dev = std::max(dev, std::abs(y0[j] - y1[j]));
    sr.max_gap = std::max(sr.max_gap, dev);
    if (dev > 1e-12) ++sr.failures;
  }
  sr.elapsed_s = seconds_since(t0);
  return sr;
}

SuiteResult run_codec_suite(std::size_t inputs, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  SuiteResult sr;
  sr.suite = "codec_lossless";

  const Method methods[] = {Method::ResMoE_UP, Method::ResMoE_SVD,
                            Method::UP_concat, Method::UP_sep,
                            Method::SP,        Method::SVD_plain,
                            Method::AvgCenter_UP, Method::GroupMerge};

  SynthSpec specs[2];
  specs[0].seed = seed;
  specs[0].n_experts = 4;
  specs[0].p = 6;
  specs[0].p_inner = 8;
  specs[0].top_k = 2;
  specs[0].kind = ExpertKind::TwoLayer;
  specs[0].activation = Activation::ReLU;
  specs[0].family = SynthFamily::IIDGaussian;
  specs[1] = specs[0];
  specs[1].seed = seed + 1;
  specs[1].kind = ExpertKind::Gated;
  specs[1].activation = Activation::SiLU;

  SplitMix64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  for (const auto& spec : specs) {
    const MoELayer layer = generate(spec);
    for (const Method m : methods) {
      ++sr.cases;
      CompressionConfig cfg;
      if (m == Method::ResMoE_SVD || m == Method::SVD_plain)
        cfg.svd_rank =
            std::min(layer.p_inner(), design_cols(spec.kind, spec.p));
      if (m == Method::GroupMerge) cfg.expert_keep = 1.0;

      const CompressedLayer art = compress_layer(layer, m, 1.0, cfg);
      const double eps = approx_error(layer, art).per_layer[0].epsilon_raw;

      double out_dev = 0.0;
      for (std::size_t i = 0; i < inputs; ++i) {
        Vector x(spec.p);
        for (double& v : x) v = rng.next_normal();
        const Vector y0 = layer_forward(layer, x);
        const Vector y1 = compressed_forward(art, x);
        for (std::size_t j = 0; j < y0.size(); ++j)
          out_dev = std::max(out_dev, std::abs(y0[j] - y1[j]));
      }
      sr.max_gap = std::max({sr.max_gap, eps, out_dev});
      if (eps > 1e-12 || out_dev > 1e-10) ++sr.failures;
    }
  }
  sr.elapsed_s = seconds_since(t0);
  return sr;
}

SuiteResult run_monotonicity_suite(std::size_t seeds, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  SuiteResult sr;
  sr.suite = "sweep_monotone";

  const double grid[] = {0.1, 0.25, 0.5, 1.0};
  const Method methods[] = {Method::ResMoE_UP, Method::ResMoE_SVD};

  for (std::size_t sidx = 0; sidx < seeds; ++sidx) {
    SynthSpec spec;
    spec.seed = seed + sidx;
    spec.n_experts = 8;
    spec.p = 16;
    spec.p_inner = 32;
    spec.top_k = 2;
    spec.kind = ExpertKind::Gated;
    spec.activation = Activation::SiLU;
    spec.family = SynthFamily::Planted;
    spec.noise_sigma = 1e-2;
    spec.permute = true;
    const MoELayer layer = generate(spec);

    std::vector<Vector> xs(20, Vector(spec.p));
    SplitMix64 rng(seed + 1000 + sidx);
    for (auto& x : xs)
      for (double& v : x) v = rng.next_normal();

    for (const Method m : methods) {
      ++sr.cases;
      double prev_eps = std::numeric_limits<double>::infinity();
      double prev_l2 = std::numeric_limits<double>::infinity();
      bool ok = true;
      for (const double s : grid) {
        const CompressionConfig cfg;
        const CompressedLayer art = compress_layer(layer, m, s, cfg);
        const double eps = approx_error(layer, art).per_layer[0].epsilon_raw;

        double l2 = 0.0;
        for (const auto& x : xs) {
          const Vector y0 = layer_forward(layer, x);
          const Vector y1 = compressed_forward(art, x);
          double acc = 0.0;
          for (std::size_t j = 0; j < y0.size(); ++j) {
            const double d = y0[j] - y1[j];
            acc += d * d;
          }
          l2 += std::sqrt(acc);
        }
        l2 /= static_cast<double>(xs.size());

        const double eps_rise = eps - prev_eps;
        const double l2_rise = l2 - prev_l2;
        sr.max_gap = std::max({sr.max_gap, eps_rise, l2_rise});
        if (eps_rise > 1e-12 * std::max(1.0, prev_eps) ||
            l2_rise > 1e-12 * std::max(1.0, prev_l2))
          ok = false;
        prev_eps = eps;
        prev_l2 = l2;
      }
      if (!ok) ++sr.failures;
    }
  }
  sr.max_gap = std::max(sr.max_gap, 0.0);
  sr.elapsed_s = seconds_since(t0);
  return sr;
}

std::string render_suite_results(const std::vector<SuiteResult>& results,
                                 ReportFormat format) {
  if (format == ReportFormat::CSV) {
    std::string out = "suite,cases,failures,max_gap,elapsed_s\n";
    char buf[128];
    for (const auto& r : results) {
      std::snprintf(buf, sizeof buf, "%s,%zu,%zu,%.17g,%.3f\n",
                    r.suite.c_str(), r.cases, r.failures, r.max_gap,
                    r.elapsed_s);
      out += buf;
    }
    return out;
  }
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& r : results) {
    nlohmann::ordered_json row;
    row["suite"] = r.suite;
    row["cases"] = r.cases;
    row["failures"] = r.failures;
    row["max_gap"] = r.max_gap;
    row["elapsed_s"] = r.elapsed_s;
    arr.push_back(std::move(row));
  }
  return arr.dump(2) + "\n";
}

} // namespace resmoe
