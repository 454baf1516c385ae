#include "resmoe/metrics.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>

#include <nlohmann/json.hpp>

#include "resmoe/kernels.hpp"

namespace resmoe {

ApproxErrorReport approx_error(const MoELayer& original,
                               const CompressedLayer& compressed,
                               const std::vector<Permutation>& perms,
                               std::size_t layer_id) {
  original.validate();
  compressed.validate();
  if (original.n_experts() != compressed.n_experts ||
      original.p() != compressed.p ||
      original.p_inner() != compressed.p_inner)
    throw ShapeError("approx_error: layer and artifact shapes differ");
  if (perms.size() != original.n_experts())
    throw ShapeError("approx_error: one permutation per expert required");

  double total = 0.0;
  for (std::size_t k = 0; k < original.n_experts(); ++k) {
    const DesignMatrix w = pack_design(original.experts[k]);
    const DenseMatrix aligned = apply_permutation(perms[k], w.m);
    const DesignMatrix restored = restored_design(compressed, k);
    total += kernels::frobenius_sq_diff(aligned, restored.m);
  }
  ApproxErrorEntry entry;
  entry.layer_id = layer_id;
  entry.epsilon_raw = total / static_cast<double>(original.n_experts());
  entry.epsilon_normalized =
      entry.epsilon_raw / static_cast<double>(original.p_inner());
  entry.method = compressed.method;
  ApproxErrorReport report;
  report.per_layer.push_back(entry);
  return report;
}

ApproxErrorReport approx_error(const MoELayer& original,
                               const CompressedLayer& compressed,
                               std::size_t layer_id) {
  return approx_error(original, compressed, compressed.perms, layer_id);
}

namespace {

std::uint64_t dense_bytes(std::size_t rows, std::size_t cols,
                          unsigned value_bytes) {
  return static_cast<std::uint64_t>(rows) * cols * value_bytes;
}

std::uint64_t residual_bytes(const ResidualEncoding& r,
                             const CompressedLayer& c,
                             const MemoryModel& model) {
  if (model.dense_restored && !std::holds_alternative<GroupRef>(r))
    return dense_bytes(c.p_inner, c.design_columns(), model.value_bytes);
  if (const auto* sp = std::get_if<SparseResidual>(&r)) {
    const std::uint64_t iw = static_cast<std::uint64_t>(sp->index_width) / 8;
    std::uint64_t b = static_cast<std::uint64_t>(sp->nnz()) *
                      (model.value_bytes + (sp->format == SparseFormat::COO ? 2 * iw : iw));
    if (sp->format == SparseFormat::CSR)
      b += static_cast<std::uint64_t>(sp->rows + 1) * 4; // row pointers
    return b;
  }
  if (const auto* lr = std::get_if<LowRankResidual>(&r))
    return static_cast<std::uint64_t>(lr->rank) *
           (lr->rows + lr->cols + 1) * model.value_bytes;
  if (const auto* rp = std::get_if<RowPrunedMatrix>(&r))
    return dense_bytes(rp->kept.size(), rp->cols, model.value_bytes) +
           static_cast<std::uint64_t>(rp->kept.size()) * 4; // row ids
  if (std::holds_alternative<GroupRef>(r)) return 0; // counted via centers
  const auto& d = std::get<DenseMatrix>(r);
  return dense_bytes(d.rows, d.cols, model.value_bytes);
}

} // namespace

MemoryReport memory_report(const MoELayer& layer, const MemoryModel& model) {
  layer.validate();
  MemoryReport rep;
  for (const auto& e : layer.experts) {
    rep.bytes += dense_bytes(e.w1.rows, e.w1.cols, model.value_bytes);
    rep.bytes += dense_bytes(e.w2.rows, e.w2.cols, model.value_bytes);
    if (e.kind == ExpertKind::Gated)
      rep.bytes += dense_bytes(e.w3.rows, e.w3.cols, model.value_bytes);
  }
  rep.mb = static_cast<double>(rep.bytes) / (1024.0 * 1024.0);
  rep.model_desc = "dense f32 weight matrices";
  return rep;
}

MemoryReport memory_report(const CompressedLayer& c, const MemoryModel& model) {
  c.validate();
  MemoryReport rep;
  if (model.include_center && c.center)
    rep.bytes += dense_bytes(c.center->rows(), c.center->cols(), model.value_bytes);
  for (const auto& g : c.group_centers)
    rep.bytes += dense_bytes(g.rows(), g.cols(), model.value_bytes);
  for (const auto& r : c.residuals) rep.bytes += residual_bytes(r, c, model);
  rep.mb = static_cast<double>(rep.bytes) / (1024.0 * 1024.0);

  std::string enc;
  switch (c.method) {
    case Method::ResMoE_UP:
    case Method::AvgCenter_UP:
    case Method::UP_concat:
    case Method::UP_sep:
      enc = to_string(c.sparse_format) + to_string(c.index_width) +
            (c.sparse_format == SparseFormat::CSR ? " + 32-bit row pointers"
                                                  : " paired indices");
      break;
    case Method::ResMoE_SVD:
    case Method::SVD_plain:
      enc = "rank-" + std::to_string(c.svd_rank) + " f32 factors";
      break;
    case Method::SP:
      enc = "kept rows f32 + 32-bit row ids";
      break;
    case Method::GroupMerge:
      enc = std::to_string(c.group_centers.size()) + " dense f32 group centers";
      break;
    case Method::Dense:
      enc = "dense f32";
      break;
  }
  if (model.include_center && c.center) enc += " + dense f32 center";
  rep.model_desc = enc;
  return rep;
}

namespace {

std::uint64_t restored_dense_macs(const CompressedLayer& c) {
  return static_cast<std::uint64_t>(c.p_inner) * c.design_columns();
}

std::uint64_t residual_eval_macs(const ResidualEncoding& r,
                                 const CompressedLayer& c) {
  if (const auto* sp = std::get_if<SparseResidual>(&r)) return sp->nnz();
  if (const auto* lr = std::get_if<LowRankResidual>(&r))
    return static_cast<std::uint64_t>(lr->rank) * (lr->rows + lr->cols);
  if (const auto* rp = std::get_if<RowPrunedMatrix>(&r))
    return static_cast<std::uint64_t>(rp->kept.size()) * rp->cols;
  return restored_dense_macs(c);
}

} // namespace

std::uint64_t flops_report(const MoELayer& layer, const FlopsModel& model) {
  layer.validate();
  std::uint64_t per_expert = 0;
  const auto& e = layer.experts[0];
  per_expert = static_cast<std::uint64_t>(e.p_inner()) *
               design_cols(e.kind, e.p());
  return model.flops_per_mac * layer.top_k * per_expert;
}

std::uint64_t flops_report(const CompressedLayer& c, const FlopsModel& model) {
  c.validate();
  const std::uint64_t dense = restored_dense_macs(c);
  std::uint64_t macs = 0;
  switch (c.method) {
    case Method::ResMoE_UP:
    case Method::AvgCenter_UP:
    case Method::GroupMerge:
    case Method::Dense:
      // Restoration materializes a dense expert; evaluation costs the
      // dense figure per activated expert.
      macs = static_cast<std::uint64_t>(c.top_k) * dense;
      break;
    case Method::ResMoE_SVD: {
      // Shared center evaluated once per token, factored residual per
      // activated expert.
      std::uint64_t sum = 0;
      for (const auto& r : c.residuals) sum += residual_eval_macs(r, c);
      macs = dense + c.top_k * (sum / c.n_experts);
      break;
    }
    case Method::UP_concat:
    case Method::UP_sep:
    case Method::SP:
    case Method::SVD_plain: {
      std::uint64_t sum = 0;
      for (const auto& r : c.residuals) sum += residual_eval_macs(r, c);
      macs = c.top_k * (sum / c.n_experts);
      break;
    }
  }
  return model.flops_per_mac * macs;
}

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

} // namespace

std::string render_report(const std::vector<ReportRow>& rows,
                          ReportFormat format) {
  if (format == ReportFormat::CSV) {
    std::string out =
        "layer_id,method,keep_ratio,epsilon_raw,epsilon_norm,bytes,mb,flops,"
        "output_l2_error\n";
    for (const auto& r : rows) {
      char head[64];
      std::snprintf(head, sizeof(head), "%zu", r.layer_id);
      out += head;
      out += "," + r.method;
      out += "," + fmt_double(r.keep_ratio);
      out += "," + fmt_double(r.epsilon_raw);
      out += "," + fmt_double(r.epsilon_norm);
      std::snprintf(head, sizeof(head), ",%" PRIu64, r.bytes);
      out += head;
      out += "," + fmt_double(r.mb);
      std::snprintf(head, sizeof(head), ",%" PRIu64, r.flops);
      out += head;
      out += "," + fmt_double(r.output_l2_error);
      out += "\n";
    }
    return out;
  }
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json o;
    o["layer_id"] = r.layer_id;
    o["method"] = r.method;
    o["keep_ratio"] = r.keep_ratio;
    o["epsilon_raw"] = r.epsilon_raw;
    o["epsilon_norm"] = r.epsilon_norm;
    o["bytes"] = r.bytes;
    o["mb"] = r.mb;
    o["flops"] = r.flops;
    o["output_l2_error"] = r.output_l2_error;
    arr.push_back(std::move(o));
  }
  return arr.dump(2) + "\n";
}

void emit_report(const std::vector<ReportRow>& rows, ReportFormat format,
                 const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open report path " + path.string());
  const std::string body = render_report(rows, format);
  out.write(body.data(), static_cast<std::streamsize>(body.size()));
  if (!out) throw IoError("failed writing report to " + path.string());
}

} // namespace resmoe
