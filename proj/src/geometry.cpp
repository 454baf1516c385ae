#include "resmoe/geometry.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>

namespace resmoe {

std::vector<ModelGeometry> known_geometries() {
  return {
      {"switch", ExpertKind::TwoLayer, 8, 768, 3072, 1},
      {"mixtral", ExpertKind::Gated, 8, 4096, 14336, 2},
      {"deepseek", ExpertKind::Gated, 64, 2048, 1408, 6},
  };
}

ModelGeometry geometry_by_name(const std::string& name) {
  for (auto& g : known_geometries())
    if (g.name == name) return g;
  throw ValidationError("unknown geometry '" + name +
                        "' (expected switch, mixtral, or deepseek)");
}

namespace {

std::uint64_t kept_entries(std::uint64_t total, double s) {
  return static_cast<std::uint64_t>(std::llround(s * static_cast<double>(total)));
}

} // namespace

std::vector<GeometryTableRow> memory_table(const ModelGeometry& g, double s) {
  if (!(s > 0.0) || s > 1.0)
    throw ValidationError("keep_ratio must be in (0, 1], got " +
                          std::to_string(s));
  const std::uint64_t expert = g.expert_entries();
  const std::uint64_t layer = expert * g.n_experts;
  const std::uint64_t dense_bytes = layer * 4;
  const std::uint64_t center_bytes = expert * 4;
  const std::uint64_t kept = kept_entries(layer, s);

  // The published accounting differs per model: CSR column indexes for the
  // two 8-expert layouts, coordinate pairs for the 64-expert one. CSR row
  // pointers are not charged in this table.
  const bool coo = g.name == "deepseek";
  const std::uint64_t sparse_bytes = kept * (coo ? 8 : 6);
  const std::string sparse_desc =
      coo ? "COO, f32 values + 2x16-bit indices"
          : "CSR, f32 values + 16-bit column indices (row pointers excluded)";

  const std::size_t groups = static_cast<std::size_t>(
      std::ceil(s * static_cast<double>(g.n_experts)));
  const std::size_t rank = svd_rank_for_budget(g.kind, g.p, g.p_inner, s);

  auto mb = [](std::uint64_t bytes) {
    return static_cast<double>(bytes) / (1024.0 * 1024.0);
  };

  std::vector<GeometryTableRow> rows;
  rows.push_back({"full", dense_bytes, mb(dense_bytes), "dense f32 weight matrices"});
  rows.push_back({"up", sparse_bytes, mb(sparse_bytes), sparse_desc});
  rows.push_back({"sp", kept * 4, mb(kept * 4), "kept rows, dense f32"});
  rows.push_back({"svd", kept * 4, mb(kept * 4),
                  "rank budget s x dense (k=" + std::to_string(rank) + ")"});
  rows.push_back({"group-merge", static_cast<std::uint64_t>(groups) * center_bytes,
                  mb(groups * center_bytes),
                  std::to_string(groups) + " dense f32 group centers"});
  rows.push_back({"resmoe-up", sparse_bytes + center_bytes,
                  mb(sparse_bytes + center_bytes),
                  sparse_desc + " + dense f32 center"});
  rows.push_back({"resmoe-svd", kept * 4 + center_bytes,
                  mb(kept * 4 + center_bytes),
                  "rank budget s x dense (k=" + std::to_string(rank) +
                      ") + dense f32 center"});
  return rows;
}

std::uint64_t geometry_flops(const ModelGeometry& g, Method method, double s) {
  if (!(s > 0.0) || s > 1.0)
    throw ValidationError("keep_ratio must be in (0, 1], got " +
                          std::to_string(s));
  const std::uint64_t expert = g.expert_entries(); // p_inner x (m*p) MACs
  const std::uint64_t dense = static_cast<std::uint64_t>(g.top_k) * expert;
  const std::uint64_t cols = expert / g.p_inner;
  std::uint64_t macs = 0;
  switch (method) {
    case Method::Dense:
    case Method::GroupMerge:
    case Method::ResMoE_UP:
    case Method::AvgCenter_UP:
      macs = dense;
      break;
    case Method::UP_concat:
    case Method::UP_sep:
      macs = g.top_k * kept_entries(expert, s);
      break;
    case Method::SP: {
      const auto rows = static_cast<std::uint64_t>(
          std::ceil(s * static_cast<double>(g.p_inner)));
      macs = g.top_k * rows * cols;
      break;
    }
    case Method::SVD_plain: {
      const std::uint64_t k = svd_rank_for_budget(g.kind, g.p, g.p_inner, s);
      macs = g.top_k * k * (g.p_inner + cols);
      break;
    }
    case Method::ResMoE_SVD: {
      const std::uint64_t k = svd_rank_for_budget(g.kind, g.p, g.p_inner, s);
      macs = expert + g.top_k * k * (g.p_inner + cols);
      break;
    }
  }
  return 2 * macs;
}

std::string render_memory_table(const ModelGeometry& g, double s) {
  char buf[256];
  std::string out;
  std::snprintf(buf, sizeof(buf),
                "# %s: %zu experts, p=%zu, p_inner=%zu, top_k=%zu, %s\n",
                g.name.c_str(), g.n_experts, g.p, g.p_inner, g.top_k,
                to_string(g.kind).c_str());
  out += buf;
  std::snprintf(buf, sizeof(buf), "# keep_ratio %g, MB = 2^20 bytes\n", s);
  out += buf;
  for (const auto& row : memory_table(g, s)) {
    const bool whole = row.bytes % (1024 * 1024) == 0;
    if (whole)
      std::snprintf(buf, sizeof(buf), "%-12s %8" PRIu64 " MB   [%s]\n",
                    row.method.c_str(),
                    static_cast<std::uint64_t>(row.bytes >> 20),
                    row.model_desc.c_str());
    else
      std::snprintf(buf, sizeof(buf), "%-12s %11.2f MB   [%s]\n",
                    row.method.c_str(), row.mb, row.model_desc.c_str());
    out += buf;
  }
  return out;
}

} // namespace resmoe
