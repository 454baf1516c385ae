#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "resmoe/compressed.hpp"

namespace resmoe {

// Published MoE layer shapes used for arithmetic-only memory and FLOPs
// accounting (no weights are materialized).
struct ModelGeometry {
  std::string name;
  ExpertKind kind = ExpertKind::TwoLayer;
  std::size_t n_experts = 0;
  std::size_t p = 0;
  std::size_t p_inner = 0;
  std::size_t top_k = 1;

  // Weight-matrix entries per expert (2*p*p_inner or 3*p*p_inner).
  std::uint64_t expert_entries() const {
    return static_cast<std::uint64_t>(kind == ExpertKind::Gated ? 3 : 2) * p *
           p_inner;
  }
};

// switch | mixtral | deepseek; throws ValidationError otherwise.
ModelGeometry geometry_by_name(const std::string& name);
std::vector<ModelGeometry> known_geometries();

struct GeometryTableRow {
  std::string method;
  std::uint64_t bytes = 0;
  double mb = 0.0;
  std::string model_desc; // the declared accounting model for this row
};

// Memory table for one layer at the given keep ratio, weight matrices only
// (biases and router excluded). Sparse rows follow the geometry's declared
// index encoding: CSR with 16-bit column indices (values + column indices
// counted) for switch/mixtral, COO with paired 16-bit indices for deepseek.
// SVD rows report the rank budget (s x dense); merge rows count
// ceil(N * s) dense group centers.
std::vector<GeometryTableRow> memory_table(const ModelGeometry& g, double s);

// Per-token expert FLOPs at the given keep ratio under the same counting
// model as flops_report, with weight-matrix columns only.
std::uint64_t geometry_flops(const ModelGeometry& g, Method method, double s);

std::string render_memory_table(const ModelGeometry& g, double s);

} // namespace resmoe
