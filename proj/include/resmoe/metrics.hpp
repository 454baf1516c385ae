#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "resmoe/compressed.hpp"

namespace resmoe {

struct ApproxErrorEntry {
  std::size_t layer_id = 0;
  double epsilon_raw = 0.0;
  double epsilon_normalized = 0.0; // raw / p_inner
  Method method = Method::Dense;
};

struct ApproxErrorReport {
  std::vector<ApproxErrorEntry> per_layer;
};

// Mean squared Frobenius gap between the aligned original experts and the
// restored ones: (1/N) sum_k ||T_k W_k - What_k||_F^2 over all design
// columns. perms supplies the T_k (identity entries for methods that never
// permute).
ApproxErrorReport approx_error(const MoELayer& original,
                               const CompressedLayer& compressed,
                               const std::vector<Permutation>& perms,
                               std::size_t layer_id = 0);

// Convenience: uses the permutations stored in the artifact.
ApproxErrorReport approx_error(const MoELayer& original,
                               const CompressedLayer& compressed,
                               std::size_t layer_id = 0);

// Byte accounting. Scope is the compression-bearing arrays: expert weight
// matrices for dense layers, encoded residuals plus center / group centers
// for artifacts. Biases, gate, and permutations are excluded so dense
// figures land on the usual N * (matrix entries) * 4 convention.
struct MemoryModel {
  unsigned value_bytes = 4;
  bool include_center = true;
  bool dense_restored = false; // account residuals at restored dense size
};

struct MemoryReport {
  std::uint64_t bytes = 0;
  double mb = 0.0; // bytes / 2^20
  std::string model_desc;
};

MemoryReport memory_report(const MoELayer& layer, const MemoryModel& model);
MemoryReport memory_report(const CompressedLayer& c, const MemoryModel& model);

// Per-token, per-layer FLOPs of the expert computation under a declared
// counting model: every evaluated matrix contributes flops_per_mac MACs per
// entry (dense), per stored entry (sparse), or k*(rows+cols) (factored
// low rank). Methods that restore dense experts (merge, sparse-residual
// restoration) cost the dense figure; factored SVD residuals are evaluated
// without materializing. Router cost is excluded.
struct FlopsModel {
  unsigned flops_per_mac = 2;
};

std::uint64_t flops_report(const MoELayer& layer, const FlopsModel& model);
std::uint64_t flops_report(const CompressedLayer& c, const FlopsModel& model);

struct ReportRow {
  std::size_t layer_id = 0;
  std::string method;
  double keep_ratio = 1.0;
  double epsilon_raw = 0.0;
  double epsilon_norm = 0.0;
  std::uint64_t bytes = 0;
  double mb = 0.0;
  std::uint64_t flops = 0;
  double output_l2_error = 0.0;
};

enum class ReportFormat { CSV, JSON };

// Deterministic column order: layer_id, method, keep_ratio, epsilon_raw,
// epsilon_norm, bytes, mb, flops, output_l2_error.
void emit_report(const std::vector<ReportRow>& rows, ReportFormat format,
                 const std::filesystem::path& path);

std::string render_report(const std::vector<ReportRow>& rows,
                          ReportFormat format);

} // namespace resmoe
