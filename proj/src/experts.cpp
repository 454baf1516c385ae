#include "resmoe/experts.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "resmoe/kernels.hpp"

namespace resmoe {

std::string to_string(ExpertKind k) {
  return k == ExpertKind::TwoLayer ? "two_layer" : "gated";
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::ReLU: return "relu";
    case Activation::GELU: return "gelu";
    case Activation::SiLU: return "silu";
  }
  return "relu";
}

ExpertKind expert_kind_from_string(const std::string& s) {
  if (s == "two_layer") return ExpertKind::TwoLayer;
  if (s == "gated") return ExpertKind::Gated;
  throw ValidationError("unknown expert kind '" + s + "'");
}

Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::ReLU;
  if (s == "gelu") return Activation::GELU;
  if (s == "silu") return Activation::SiLU;
  throw ValidationError("unknown activation '" + s + "'");
}

double activate(Activation a, double x) {
  switch (a) {
    case Activation::ReLU:
      return x > 0.0 ? x : 0.0;
    case Activation::GELU: {
      // tanh approximation
      const double c = 0.7978845608028654; // sqrt(2/pi)
      const double t = std::tanh(c * (x + 0.044715 * x * x * x));
      return 0.5 * x * (1.0 + t);
    }
    case Activation::SiLU:
      return x / (1.0 + std::exp(-x));
  }
  return 0.0;
}

void ExpertWeights::validate() const {
  const std::size_t pi = w1.rows, pd = w1.cols;
  if (pi == 0 || pd == 0) throw ShapeError("expert: empty w1");
  if (b1.size() != pi) throw ShapeError("expert: b1 length != p_inner");
  if (w2.rows != pd || w2.cols != pi)
    throw ShapeError("expert: w2 must be p x p_inner");
  if (b2.size() != pd) throw ShapeError("expert: b2 length != p");
  if (kind == ExpertKind::Gated) {
    if (w3.rows != pi || w3.cols != pd)
      throw ShapeError("expert: w3 must be p_inner x p");
    if (b3.size() != pi) throw ShapeError("expert: b3 length != p_inner");
  } else {
    if (!w3.empty() || !b3.empty())
      throw ShapeError("expert: two_layer carries no w3/b3");
  }
}

Vector expert_forward(const ExpertWeights& e, std::span<const double> x) {
  if (x.size() != e.p()) throw ShapeError("expert_forward: input length != p");
  const std::size_t pi = e.p_inner();
  Vector h(pi);
  kernels::matvec(e.w1, x, h);
  for (std::size_t i = 0; i < pi; ++i)
    h[i] = activate(e.activation, h[i] + e.b1[i]);
  if (e.kind == ExpertKind::Gated) {
    Vector g(pi);
    kernels::matvec(e.w3, x, g);
    for (std::size_t i = 0; i < pi; ++i) h[i] *= g[i] + e.b3[i];
  }
  Vector y(e.p());
  kernels::matvec(e.w2, h, y);
  for (std::size_t j = 0; j < y.size(); ++j) y[j] += e.b2[j];
  return y;
}

void MoELayer::validate() const {
  if (experts.empty()) throw ShapeError("layer: no experts");
  const auto& e0 = experts[0];
  e0.validate();
  for (std::size_t k = 1; k < experts.size(); ++k) {
    const auto& e = experts[k];
    e.validate();
    if (e.kind != e0.kind || e.p() != e0.p() || e.p_inner() != e0.p_inner())
      throw ShapeError("layer: expert " + std::to_string(k) +
                       " disagrees with expert 0 on kind or shape");
  }
  if (gate.rows != experts.size() || gate.cols != e0.p())
    throw ShapeError("layer: gate must be n_experts x p");
  if (top_k == 0 || top_k > experts.size())
    throw ShapeError("layer: top_k must be in [1, n_experts]");
}

Vector topk_softmax(const DenseMatrix& gate, std::size_t top_k,
                    std::span<const double> x) {
  const std::size_t n = gate.rows;
  if (top_k == 0 || top_k > n)
    throw ShapeError("topk_softmax: top_k must be in [1, n_experts]");
  Vector logits(n);
  kernels::matvec(gate, x, logits);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (logits[a] != logits[b]) return logits[a] > logits[b];
    return a < b;
  });

  Vector scores(n, 0.0);
  const double hi = logits[order[0]];
  double denom = 0.0;
  for (std::size_t r = 0; r < top_k; ++r)
    denom += std::exp(logits[order[r]] - hi);
  for (std::size_t r = 0; r < top_k; ++r) {
    const std::size_t k = order[r];
    scores[k] = std::exp(logits[k] - hi) / denom;
  }
  return scores;
}

Vector gate_scores(const MoELayer& layer, std::span<const double> x) {
  return topk_softmax(layer.gate, layer.top_k, x);
}

std::vector<std::size_t> activated_experts(const MoELayer& layer,
                                           std::span<const double> x) {
  const Vector s = gate_scores(layer, x);
  std::vector<std::size_t> ids;
  for (std::size_t k = 0; k < s.size(); ++k)
    if (s[k] != 0.0) ids.push_back(k);
  return ids;
}

Vector layer_forward(const MoELayer& layer, std::span<const double> x) {
  const Vector s = gate_scores(layer, x);
  Vector y(layer.p(), 0.0);
  for (std::size_t k = 0; k < s.size(); ++k) {
    if (s[k] == 0.0) continue;
    const Vector yk = expert_forward(layer.experts[k], x);
    for (std::size_t j = 0; j < y.size(); ++j) y[j] += s[k] * yk[j];
  }
  return y;
}

Vector layer_forward_matrix(const MoELayer& layer, std::span<const double> x) {
  layer.validate();
  const std::size_t n = layer.n_experts();
  const std::size_t p = layer.p(), pi = layer.p_inner();
  const Vector g = gate_scores(layer, x);

  // Stacked hidden vector h = sigma(W1_cat x + b1_cat), gated elementwise
  // for the gated kind, then r = (diag(g) (x) I) h.
  Vector r(n * pi);
  for (std::size_t k = 0; k < n; ++k) {
    const ExpertWeights& e = layer.experts[k];
    Vector h(pi);
    kernels::matvec(e.w1, x, h);
    for (std::size_t i = 0; i < pi; ++i)
      h[i] = activate(e.activation, h[i] + e.b1[i]);
    if (e.kind == ExpertKind::Gated) {
      Vector gatevec(pi);
      kernels::matvec(e.w3, x, gatevec);
      for (std::size_t i = 0; i < pi; ++i) h[i] *= gatevec[i] + e.b3[i];
    }
    for (std::size_t i = 0; i < pi; ++i) r[k * pi + i] = g[k] * h[i];
  }

  // y = W2_cat r + sum_k g_k b2_k. The bias term rides outside the stacked
  // product because it is not tied to hidden units.
  Vector y(p, 0.0);
  for (std::size_t j = 0; j < p; ++j) {
    double acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const DenseMatrix& w2 = layer.experts[k].w2;
      for (std::size_t i = 0; i < pi; ++i) acc += w2.at(j, i) * r[k * pi + i];
    }
    y[j] = acc;
  }
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t j = 0; j < p; ++j) y[j] += g[k] * layer.experts[k].b2[j];
  return y;
}

std::size_t design_cols(ExpertKind kind, std::size_t p) {
  return kind == ExpertKind::Gated ? 3 * p + 2 : 2 * p + 1;
}

DesignMatrix::DesignMatrix(ExpertKind k, std::size_t p_dim, DenseMatrix values)
    : kind(k), p(p_dim), m(std::move(values)) {
  if (m.cols != design_cols(kind, p))
    throw ShapeError("design matrix: expected " +
                     std::to_string(design_cols(kind, p)) + " columns for " +
                     to_string(kind) + " with p=" + std::to_string(p) +
                     ", got " + std::to_string(m.cols));
}

DesignMatrix pack_design(const ExpertWeights& e) {
  e.validate();
  const std::size_t p = e.p(), pi = e.p_inner();
  DenseMatrix m(pi, design_cols(e.kind, p));
  for (std::size_t i = 0; i < pi; ++i) {
    double* row = m.data.data() + i * m.cols;
    for (std::size_t j = 0; j < p; ++j) row[j] = e.w1.at(i, j);
    row[p] = e.b1[i];
    std::size_t off = p + 1;
    if (e.kind == ExpertKind::Gated) {
      for (std::size_t j = 0; j < p; ++j) row[off + j] = e.w3.at(i, j);
      row[off + p] = e.b3[i];
      off += p + 1;
    }
    for (std::size_t j = 0; j < p; ++j) row[off + j] = e.w2.at(j, i);
  }
  return DesignMatrix(e.kind, p, std::move(m));
}

ExpertWeights unpack_design(const DesignMatrix& d, Activation activation,
                            Vector b2) {
  const std::size_t p = d.p, pi = d.rows();
  if (b2.size() != p) throw ShapeError("unpack_design: b2 length != p");
  ExpertWeights e;
  e.kind = d.kind;
  e.activation = activation;
  e.w1 = DenseMatrix(pi, p);
  e.b1.resize(pi);
  e.w2 = DenseMatrix(p, pi);
  e.b2 = std::move(b2);
  if (d.kind == ExpertKind::Gated) {
    e.w3 = DenseMatrix(pi, p);
    e.b3.resize(pi);
  }
  for (std::size_t i = 0; i < pi; ++i) {
    const double* row = d.m.data.data() + i * d.m.cols;
    for (std::size_t j = 0; j < p; ++j) e.w1.at(i, j) = row[j];
    e.b1[i] = row[p];
    std::size_t off = p + 1;
    if (d.kind == ExpertKind::Gated) {
      for (std::size_t j = 0; j < p; ++j) e.w3.at(i, j) = row[off + j];
      e.b3[i] = row[off + p];
      off += p + 1;
    }
    for (std::size_t j = 0; j < p; ++j) e.w2.at(j, i) = row[off + j];
  }
  return e;
}

} // namespace resmoe
