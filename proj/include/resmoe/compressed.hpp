#pragma once

#include <optional>
#include <variant>
#include <vector>

#include "resmoe/barycenter.hpp"
#include "resmoe/codec.hpp"
#include "resmoe/experts.hpp"

namespace resmoe {

// Dense is the passthrough used for layers excluded from compression.
enum class Method {
  ResMoE_UP,
  ResMoE_SVD,
  UP_concat,
  UP_sep,
  SP,
  SVD_plain,
  AvgCenter_UP,
  GroupMerge,
  Dense,
};

std::string to_string(Method m);
Method method_from_string(const std::string& s);
bool method_has_center(Method m);

// Expert whose residual lives in its group's shared center.
struct GroupRef {
  std::uint32_t group = 0;
};

using ResidualEncoding = std::variant<SparseResidual, LowRankResidual,
                                      RowPrunedMatrix, GroupRef, DenseMatrix>;

struct CompressionConfig {
  SparseFormat sparse_format = SparseFormat::CSR;
  IndexWidth index_width = IndexWidth::I32;
  BarycenterConfig bary;
  std::optional<std::size_t> svd_rank; // overrides the budget formula
  double expert_keep = 0.25;           // GroupMerge: G = ceil(N * expert_keep)
};

struct CompressedLayer {
  Method method = Method::Dense;
  ExpertKind kind = ExpertKind::TwoLayer;
  Activation activation = Activation::ReLU;
  std::size_t p = 0;
  std::size_t p_inner = 0;
  std::size_t n_experts = 0;
  std::size_t top_k = 1;
  double keep_ratio = 1.0;
  std::size_t svd_rank = 0; // SVD methods only
  SparseFormat sparse_format = SparseFormat::CSR;
  IndexWidth index_width = IndexWidth::I32;

  std::optional<DesignMatrix> center;
  std::vector<ResidualEncoding> residuals; // one per expert
  std::vector<DesignMatrix> group_centers; // GroupMerge only
  std::vector<std::uint32_t> group_of;     // GroupMerge only, expert -> group
  std::vector<Permutation> perms;          // identity for unaligned methods
  std::vector<Vector> b2s;
  DenseMatrix gate;

  double wb_loss = 0.0;
  std::size_t bary_iterations = 0;
  bool bary_converged = false;
  BarycenterConfig bary_cfg;
  std::vector<double> residual_norms; // ||input to the codec||_F per expert

  std::size_t design_columns() const { return design_cols(kind, p); }
  void validate() const;
};

struct CompressedModel {
  std::vector<CompressedLayer> layers;
  std::string origin_spec_json; // generator echo, empty when unknown
};

// Aligned residuals against the barycenter: Delta_k = T_k W_k - W_omega.
std::vector<DenseMatrix> compute_residuals(const std::vector<DesignMatrix>& ws,
                                           const BarycenterResult& bary);

CompressedLayer compress_layer(const MoELayer& layer, Method method, double s,
                               const CompressionConfig& cfg);

// The design matrix the artifact reproduces for expert k (center plus
// decoded residual, group center, or direct decode).
DesignMatrix restored_design(const CompressedLayer& c, std::size_t k);

// Restored expert k. Approximates T_k W_k; no inverse permutation is
// applied because row order does not affect the expert's output.
ExpertWeights restore_expert(const CompressedLayer& c, std::size_t k);

// Routes with the stored gate, restores only the activated experts, and
// returns the gated sum.
Vector compressed_forward(const CompressedLayer& c, std::span<const double> x);

Vector compressed_gate_scores(const CompressedLayer& c,
                              std::span<const double> x);

} // namespace resmoe
