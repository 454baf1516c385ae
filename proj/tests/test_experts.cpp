#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "resmoe/experts.hpp"
#include "resmoe/rng.hpp"

using namespace resmoe;

namespace {

DenseMatrix mat(std::size_t rows, std::size_t cols,
                std::initializer_list<double> vals) {
  DenseMatrix m(rows, cols);
  m.data.assign(vals);
  return m;
}

ExpertWeights random_expert(ExpertKind kind, Activation act, std::size_t p,
                            std::size_t pi, SplitMix64& rng) {
  ExpertWeights e;
  e.kind = kind;
  e.activation = act;
  auto fill = [&](DenseMatrix& m, std::size_t r, std::size_t c) {
    m = DenseMatrix(r, c);
    for (double& v : m.data) v = rng.next_normal();
  };
  fill(e.w1, pi, p);
  fill(e.w2, p, pi);
  e.b1.resize(pi);
  e.b2.resize(p);
  for (double& v : e.b1) v = rng.next_normal();
  for (double& v : e.b2) v = rng.next_normal();
  if (kind == ExpertKind::Gated) {
    fill(e.w3, pi, p);
    e.b3.resize(pi);
    for (double& v : e.b3) v = rng.next_normal();
  }
  return e;
}

Vector random_vec(std::size_t n, SplitMix64& rng) {
  Vector x(n);
  for (double& v : x) v = rng.next_normal();
  return x;
}

// Renumbers hidden unit i to perm[i]: rows of w1/b1 (and w3/b3) move,
// and the matching columns of w2 move with them.
ExpertWeights renumber_hidden(const ExpertWeights& e,
                              const std::vector<std::uint32_t>& perm) {
  ExpertWeights out = e;
  const std::size_t pi = e.p_inner(), p = e.p();
  for (std::size_t i = 0; i < pi; ++i) {
    const std::size_t t = perm[i];
    for (std::size_t j = 0; j < p; ++j) {
      out.w1.at(t, j) = e.w1.at(i, j);
      out.w2.at(j, t) = e.w2.at(j, i);
      if (e.kind == ExpertKind::Gated) out.w3.at(t, j) = e.w3.at(i, j);
    }
    out.b1[t] = e.b1[i];
    if (e.kind == ExpertKind::Gated) out.b3[t] = e.b3[i];
  }
  return out;
}

} // namespace

TEST_CASE("relu kills a negative preactivation") {
  ExpertWeights e;
  e.kind = ExpertKind::TwoLayer;
  e.activation = Activation::ReLU;
  e.w1 = mat(1, 1, {1.0});
  e.b1 = {0.0};
  e.w2 = mat(1, 1, {1.0});
  e.b2 = {0.0};
  const Vector y = expert_forward(e, Vector{-1.0});
  CHECK(y.size() == 1);
  CHECK(y[0] == 0.0);
}

TEST_CASE("gated silu with identity-like 1x1 weights") {
  ExpertWeights e;
  e.kind = ExpertKind::Gated;
  e.activation = Activation::SiLU;
  e.w1 = mat(1, 1, {1.0});
  e.b1 = {0.0};
  e.w3 = mat(1, 1, {1.0});
  e.b3 = {0.0};
  e.w2 = mat(1, 1, {1.0});
  e.b2 = {0.0};
  const Vector y = expert_forward(e, Vector{1.0});
  // silu(1) * 1 = 1 / (1 + e^-1)
  CHECK(y[0] == doctest::Approx(0.7310585786300049).epsilon(1e-12));
}

TEST_CASE("activation values at a few known points") {
  CHECK(activate(Activation::ReLU, -3.0) == 0.0);
  CHECK(activate(Activation::ReLU, 2.5) == 2.5);
  CHECK(activate(Activation::SiLU, 0.0) == 0.0);
  CHECK(activate(Activation::GELU, 0.0) == 0.0);
  // tanh-form gelu satisfies gelu(x) - gelu(-x) == x
  const double g = activate(Activation::GELU, 1.0);
  CHECK(g - activate(Activation::GELU, -1.0) == doctest::Approx(1.0));
  CHECK(g == doctest::Approx(0.8411919906082768).epsilon(1e-10));
}

TEST_CASE("hidden-unit renumbering leaves the output unchanged") {
  SplitMix64 rng(11);
  for (const ExpertKind kind : {ExpertKind::TwoLayer, ExpertKind::Gated}) {
    ExpertWeights e = random_expert(kind, Activation::GELU, 5, 9, rng);
    std::vector<std::uint32_t> perm(9);
    for (std::size_t i = 0; i < 9; ++i) perm[i] = static_cast<std::uint32_t>(i);
    for (std::size_t i = 9; i > 1; --i)
      std::swap(perm[i - 1], perm[rng.next_below(i)]);
    const ExpertWeights shuffled = renumber_hidden(e, perm);
    for (int t = 0; t < 100; ++t) {
      const Vector x = random_vec(5, rng);
      const Vector a = expert_forward(e, x);
      const Vector b = expert_forward(shuffled, x);
      for (std::size_t j = 0; j < a.size(); ++j)
        CHECK(std::abs(a[j] - b[j]) <= 1e-12);
    }
  }
}

TEST_CASE("expert_forward rejects a wrong-length input") {
  SplitMix64 rng(3);
  const ExpertWeights e =
      random_expert(ExpertKind::TwoLayer, Activation::ReLU, 4, 6, rng);
  CHECK_THROWS_AS(expert_forward(e, Vector{1.0, 2.0}), ShapeError);
}

TEST_CASE("gate scores: equal logits split evenly") {
  MoELayer layer;
  SplitMix64 rng(5);
  layer.experts = {random_expert(ExpertKind::TwoLayer, Activation::ReLU, 1, 2, rng),
                   random_expert(ExpertKind::TwoLayer, Activation::ReLU, 1, 2, rng)};
  layer.gate = mat(2, 1, {1.0, 1.0});
  layer.top_k = 2;
  const Vector g = gate_scores(layer, Vector{3.0});
  CHECK(g[0] == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(g[1] == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("gate scores: top-1 is one-hot at the largest logit") {
  MoELayer layer;
  SplitMix64 rng(6);
  for (int k = 0; k < 3; ++k)
    layer.experts.push_back(
        random_expert(ExpertKind::TwoLayer, Activation::ReLU, 1, 2, rng));
  layer.gate = mat(3, 1, {1.0, 5.0, 2.0});
  layer.top_k = 1;
  const Vector g = gate_scores(layer, Vector{1.0});
  CHECK(g[0] == 0.0);
  CHECK(g[1] == 1.0);
  CHECK(g[2] == 0.0);
}

TEST_CASE("gate scores: softmax over the selected pair only") {
  MoELayer layer;
  SplitMix64 rng(7);
  for (int k = 0; k < 4; ++k)
    layer.experts.push_back(
        random_expert(ExpertKind::TwoLayer, Activation::ReLU, 1, 2, rng));
  layer.gate = mat(4, 1, {0.0, std::log(2.0), std::log(4.0), -1.0});
  layer.top_k = 2;
  const Vector g = gate_scores(layer, Vector{1.0});
  CHECK(g[0] == 0.0);
  CHECK(g[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(g[2] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(g[3] == 0.0);
  double sum = 0.0;
  for (const double v : g) sum += v;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("gate ties resolve toward the lower expert index") {
  MoELayer layer;
  SplitMix64 rng(8);
  for (int k = 0; k < 3; ++k)
    layer.experts.push_back(
        random_expert(ExpertKind::TwoLayer, Activation::ReLU, 1, 2, rng));
  layer.gate = mat(3, 1, {2.0, 2.0, 2.0});
  layer.top_k = 1;
  const Vector g = gate_scores(layer, Vector{1.0});
  CHECK(g[0] == 1.0);
  CHECK(g[1] == 0.0);
  CHECK(g[2] == 0.0);
  CHECK(activated_experts(layer, Vector{1.0}) ==
        std::vector<std::size_t>{0});
}

TEST_CASE("layer_forward: identical experts give the expert's own output") {
  SplitMix64 rng(9);
  const ExpertWeights e =
      random_expert(ExpertKind::Gated, Activation::SiLU, 4, 7, rng);
  MoELayer layer;
  layer.experts = {e, e, e};
  layer.gate = DenseMatrix(3, 4);
  for (double& v : layer.gate.data) v = rng.next_normal();
  layer.top_k = 3;
  for (int t = 0; t < 20; ++t) {
    const Vector x = random_vec(4, rng);
    const Vector y = layer_forward(layer, x);
    const Vector ref = expert_forward(e, x);
    for (std::size_t j = 0; j < y.size(); ++j)
      CHECK(y[j] == doctest::Approx(ref[j]).epsilon(1e-12));
  }
}

TEST_CASE("layer_forward: top-1 routes to the argmax expert") {
  SplitMix64 rng(10);
  MoELayer layer;
  for (int k = 0; k < 4; ++k)
    layer.experts.push_back(
        random_expert(ExpertKind::TwoLayer, Activation::GELU, 3, 5, rng));
  layer.gate = DenseMatrix(4, 3);
  for (double& v : layer.gate.data) v = rng.next_normal();
  layer.top_k = 1;
  for (int t = 0; t < 20; ++t) {
    const Vector x = random_vec(3, rng);
    const auto ids = activated_experts(layer, x);
    REQUIRE(ids.size() == 1);
    const Vector y = layer_forward(layer, x);
    const Vector ref = expert_forward(layer.experts[ids[0]], x);
    for (std::size_t j = 0; j < y.size(); ++j)
      CHECK(y[j] == doctest::Approx(ref[j]).epsilon(1e-12));
  }
}

TEST_CASE("layer_forward matches the stacked matrix form") {
  SplitMix64 rng(2);
  for (const ExpertKind kind : {ExpertKind::TwoLayer, ExpertKind::Gated}) {
    MoELayer layer;
    for (int k = 0; k < 4; ++k)
      layer.experts.push_back(
          random_expert(kind, Activation::SiLU, 6, 10, rng));
    layer.gate = DenseMatrix(4, 6);
    for (double& v : layer.gate.data) v = rng.next_normal();
    layer.top_k = 2;
    for (int t = 0; t < 50; ++t) {
      const Vector x = random_vec(6, rng);
      const Vector a = layer_forward(layer, x);
      const Vector b = layer_forward_matrix(layer, x);
      for (std::size_t j = 0; j < a.size(); ++j)
        CHECK(std::abs(a[j] - b[j]) <= 1e-10);
    }
  }
}

TEST_CASE("single-expert layer equals expert_forward") {
  SplitMix64 rng(12);
  MoELayer layer;
  layer.experts = {random_expert(ExpertKind::TwoLayer, Activation::ReLU, 3, 4, rng)};
  layer.gate = mat(1, 3, {0.2, -0.3, 0.4});
  layer.top_k = 1;
  const Vector x = random_vec(3, rng);
  const Vector a = layer_forward_matrix(layer, x);
  const Vector ref = expert_forward(layer.experts[0], x);
  for (std::size_t j = 0; j < a.size(); ++j)
    CHECK(a[j] == doctest::Approx(ref[j]).epsilon(1e-12));
}

TEST_CASE("design matrix widths") {
  CHECK(design_cols(ExpertKind::TwoLayer, 3) == 7);
  CHECK(design_cols(ExpertKind::Gated, 1) == 5);
  CHECK(design_cols(ExpertKind::Gated, 4096) == 3 * 4096 + 2);
  CHECK_THROWS_AS(DesignMatrix(ExpertKind::TwoLayer, 3, DenseMatrix(2, 5)),
                  ShapeError);
}

TEST_CASE("pack/unpack round-trip is bit-exact") {
  SplitMix64 rng(13);
  for (const ExpertKind kind : {ExpertKind::TwoLayer, ExpertKind::Gated}) {
    const ExpertWeights e = random_expert(kind, Activation::GELU, 5, 8, rng);
    const DesignMatrix d = pack_design(e);
    CHECK(d.rows() == 8);
    CHECK(d.cols() == design_cols(kind, 5));
    const ExpertWeights back = unpack_design(d, e.activation, e.b2);
    CHECK(back.w1.data == e.w1.data);
    CHECK(back.b1 == e.b1);
    CHECK(back.w2.data == e.w2.data);
    CHECK(back.b2 == e.b2);
    if (kind == ExpertKind::Gated) {
      CHECK(back.w3.data == e.w3.data);
      CHECK(back.b3 == e.b3);
    }
  }
}

TEST_CASE("kind and activation names round-trip") {
  CHECK(expert_kind_from_string(to_string(ExpertKind::Gated)) ==
        ExpertKind::Gated);
  CHECK(activation_from_string("gelu") == Activation::GELU);
  CHECK_THROWS_AS(activation_from_string("tanh"), ValidationError);
  CHECK_THROWS_AS(expert_kind_from_string("dense"), ValidationError);
}
