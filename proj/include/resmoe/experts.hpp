#pragma once

#include <cstdint>
#include <string>

#include "resmoe/matrix.hpp"

namespace resmoe {

enum class ExpertKind { TwoLayer, Gated };
enum class Activation { ReLU, GELU, SiLU };

std::string to_string(ExpertKind k);
std::string to_string(Activation a);
ExpertKind expert_kind_from_string(const std::string& s);
Activation activation_from_string(const std::string& s);

double activate(Activation a, double x);

// One feed-forward expert.
//   TwoLayer: y = w2 * act(w1 x + b1) + b2
//   Gated:    y = w2 * (act(w1 x + b1) .* (w3 x + b3)) + b2
// Shapes: w1, w3 are p_inner x p; w2 is p x p_inner; b1, b3 length p_inner;
// b2 length p.
struct ExpertWeights {
  ExpertKind kind = ExpertKind::TwoLayer;
  Activation activation = Activation::ReLU;
  DenseMatrix w1;
  Vector b1;
  DenseMatrix w2;
  Vector b2;
  DenseMatrix w3; // Gated only, empty otherwise
  Vector b3;      // Gated only

  std::size_t p() const { return w1.cols; }
  std::size_t p_inner() const { return w1.rows; }

  void validate() const; // throws ShapeError
};

Vector expert_forward(const ExpertWeights& e, std::span<const double> x);

// Routed mixture: gate is n_experts x p; the layer output is the
// softmax-weighted sum of the top_k experts by gate logit.
struct MoELayer {
  std::vector<ExpertWeights> experts;
  DenseMatrix gate;
  std::size_t top_k = 1;

  std::size_t n_experts() const { return experts.size(); }
  std::size_t p() const { return experts.empty() ? 0 : experts[0].p(); }
  std::size_t p_inner() const {
    return experts.empty() ? 0 : experts[0].p_inner();
  }

  void validate() const;
};

// Softmax over the top_k largest entries of gate * x, exact zeros
// elsewhere. Ties between logits resolve toward the lower expert index.
Vector topk_softmax(const DenseMatrix& gate, std::size_t top_k,
                    std::span<const double> x);

// Full gating vector for a layer.
Vector gate_scores(const MoELayer& layer, std::span<const double> x);

// Indices with nonzero gate score, ascending.
std::vector<std::size_t> activated_experts(const MoELayer& layer,
                                           std::span<const double> x);

Vector layer_forward(const MoELayer& layer, std::span<const double> x);

// Same value via the stacked form: block-concatenated first/second layer
// matrices and the block-diagonal router matrix diag(G(x)) (x) I_{p_inner}
// scaling the hidden vector. Evaluates every expert; exists as a
// cross-check for layer_forward.
Vector layer_forward_matrix(const MoELayer& layer, std::span<const double> x);

// Per-expert weights flattened to one matrix with p_inner exchangeable rows.
// Row i concatenates everything touching hidden unit i:
//   TwoLayer: [ w1 row i | b1[i] | w2 column i ]           (2p + 1 columns)
//   Gated:    [ w1 row i | b1[i] | w3 row i | b3[i] | w2 column i ]
//                                                          (3p + 2 columns)
// b2 is not tied to any hidden unit and stays outside.
struct DesignMatrix {
  ExpertKind kind = ExpertKind::TwoLayer;
  std::size_t p = 0;
  DenseMatrix m;

  DesignMatrix() = default;
  DesignMatrix(ExpertKind k, std::size_t p_dim, DenseMatrix values);

  std::size_t rows() const { return m.rows; }
  std::size_t cols() const { return m.cols; }

  // Column layout
  std::size_t w1_begin() const { return 0; }
  std::size_t b1_col() const { return p; }
  std::size_t w3_begin() const { return p + 1; }        // Gated only
  std::size_t b3_col() const { return 2 * p + 1; }      // Gated only
  std::size_t w2t_begin() const {
    return kind == ExpertKind::Gated ? 2 * p + 2 : p + 1;
  }
};

std::size_t design_cols(ExpertKind kind, std::size_t p);

DesignMatrix pack_design(const ExpertWeights& e);

// Inverse of pack_design. The design matrix does not carry the activation or
// b2, so both are supplied.
ExpertWeights unpack_design(const DesignMatrix& d, Activation activation,
                            Vector b2);

} // namespace resmoe
