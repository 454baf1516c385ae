#include "resmoe/compressed.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>

#include "resmoe/kernels.hpp"

namespace resmoe {

std::string to_string(Method m) {
  switch (m) {
    case Method::ResMoE_UP: return "resmoe-up";
    case Method::ResMoE_SVD: return "resmoe-svd";
    case Method::UP_concat: return "up-concat";
    case Method::UP_sep: return "up-sep";
    case Method::SP: return "sp";
    case Method::SVD_plain: return "svd";
    case Method::AvgCenter_UP: return "avg-up";
    case Method::GroupMerge: return "group-merge";
    case Method::Dense: return "dense";
  }
  return "dense";
}

Method method_from_string(const std::string& s) {
  if (s == "resmoe-up") return Method::ResMoE_UP;
  if (s == "resmoe-svd") return Method::ResMoE_SVD;
  if (s == "up-concat") return Method::UP_concat;
  if (s == "up-sep") return Method::UP_sep;
  if (s == "sp") return Method::SP;
  if (s == "svd") return Method::SVD_plain;
  if (s == "avg-up") return Method::AvgCenter_UP;
  if (s == "group-merge") return Method::GroupMerge;
  if (s == "dense") return Method::Dense;
  throw ValidationError("unknown method '" + s + "'");
}

bool method_has_center(Method m) {
  return m == Method::ResMoE_UP || m == Method::ResMoE_SVD ||
         m == Method::AvgCenter_UP;
}

void CompressedLayer::validate() const {
  if (residuals.size() != n_experts || perms.size() != n_experts ||
      b2s.size() != n_experts)
    throw ShapeError("compressed layer: per-expert arrays disagree with N");
  if (gate.rows != n_experts || gate.cols != p)
    throw ShapeError("compressed layer: gate must be n_experts x p");
  if (method_has_center(method) == !center.has_value())
    throw ShapeError("compressed layer: center presence disagrees with method");
  if (method == Method::GroupMerge &&
      (group_of.size() != n_experts || group_centers.empty()))
    throw ShapeError("compressed layer: missing group data");
}

std::vector<DenseMatrix> compute_residuals(const std::vector<DesignMatrix>& ws,
                                           const BarycenterResult& bary) {
  if (bary.perms.size() != ws.size())
    throw ShapeError("compute_residuals: permutation count mismatch");
  std::vector<DenseMatrix> out;
  out.reserve(ws.size());
  for (std::size_t k = 0; k < ws.size(); ++k) {
    require_same_shape(ws[k].m, bary.w_omega.m, "compute_residuals");
    DenseMatrix aligned = apply_permutation(bary.perms[k], ws[k].m);
    for (std::size_t i = 0; i < aligned.data.size(); ++i)
      aligned.data[i] -= bary.w_omega.m.data[i];
    out.push_back(std::move(aligned));
  }
  return out;
}

namespace {

DenseMatrix unaligned_mean(const std::vector<DesignMatrix>& ws) {
  DenseMatrix mean(ws[0].m.rows, ws[0].m.cols);
  for (const auto& w : ws)
    for (std::size_t i = 0; i < mean.data.size(); ++i)
      mean.data[i] += w.m.data[i];
  const double inv = 1.0 / static_cast<double>(ws.size());
  for (double& v : mean.data) v *= inv;
  return mean;
}

std::size_t pick_rank(const MoELayer& layer, double s,
                      const CompressionConfig& cfg) {
  if (cfg.svd_rank) {
    const std::size_t maxrank =
        std::min(layer.p_inner(), design_cols(layer.experts[0].kind, layer.p()));
    if (*cfg.svd_rank < 1 || *cfg.svd_rank > maxrank)
      throw RankError("svd rank override " + std::to_string(*cfg.svd_rank) +
                      " outside [1, " + std::to_string(maxrank) + "]");
    return *cfg.svd_rank;
  }
  return svd_rank_for_budget(layer.experts[0].kind, layer.p(), layer.p_inner(),
                             s);
}

// Greedy single-linkage agglomeration on plain Frobenius distances down to
// n_groups clusters. Ties break toward the smallest pair indices. Returns
// expert -> group id, groups numbered by smallest member index.
std::vector<std::uint32_t> agglomerate(const std::vector<DesignMatrix>& ws,
                                       std::size_t n_groups) {
  const std::size_t n = ws.size();
  DenseMatrix dist(n, n);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a + 1; b < n; ++b) {
      const double d = kernels::frobenius_sq_diff(ws[a].m, ws[b].m);
      dist.at(a, b) = d;
      dist.at(b, a) = d;
    }

  std::vector<std::size_t> cluster(n);
  for (std::size_t i = 0; i < n; ++i) cluster[i] = i;
  std::size_t active = n;
  while (active > n_groups) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t ba = 0, bb = 0;
    for (std::size_t a = 0; a < n; ++a) {
      if (cluster[a] != a) continue;
      for (std::size_t b = a + 1; b < n; ++b) {
        if (cluster[b] != b) continue;
        double d = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < n; ++i) {
          if (cluster[i] != a) continue;
          for (std::size_t j = 0; j < n; ++j)
            if (cluster[j] == b) d = std::min(d, dist.at(i, j));
        }
        if (d < best) {
          best = d;
          ba = a;
          bb = b;
        }
      }
    }
    for (std::size_t i = 0; i < n; ++i)
      if (cluster[i] == bb) cluster[i] = ba;
    --active;
  }

  std::vector<std::uint32_t> group(n, 0);
  std::vector<std::size_t> roots;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t root = cluster[i];
    auto it = std::find(roots.begin(), roots.end(), root);
    if (it == roots.end()) {
      roots.push_back(root);
      it = roots.end() - 1;
    }
    group[i] = static_cast<std::uint32_t>(it - roots.begin());
  }
  return group;
}

} // namespace

CompressedLayer compress_layer(const MoELayer& layer, Method method, double s,
                               const CompressionConfig& cfg) {
  layer.validate();
  if (!(s > 0.0) || s > 1.0)
    throw ValidationError("keep_ratio must be in (0, 1], got " +
                          std::to_string(s));

  const std::size_t n = layer.n_experts();
  std::vector<DesignMatrix> ws;
  ws.reserve(n);
  for (const auto& e : layer.experts) ws.push_back(pack_design(e));

  CompressedLayer c;
  c.method = method;
  c.kind = layer.experts[0].kind;
  c.activation = layer.experts[0].activation;
  c.p = layer.p();
  c.p_inner = layer.p_inner();
  c.n_experts = n;
  c.top_k = layer.top_k;
  c.keep_ratio = method == Method::Dense ? 1.0 : s;
  c.sparse_format = cfg.sparse_format;
  c.index_width = cfg.index_width;
  c.bary_cfg = cfg.bary;
  c.gate = layer.gate;
  c.perms.assign(n, identity_permutation(layer.p_inner()));
  for (const auto& e : layer.experts) c.b2s.push_back(e.b2);
  c.residuals.resize(n);
  c.residual_norms.resize(n, 0.0);

  auto encode_sparse_each = [&](const std::vector<DenseMatrix>& deltas) {
    std::exception_ptr fail = nullptr;
    const std::int64_t nn = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(dynamic) if (kernels::parallel_enabled())
    for (std::int64_t k = 0; k < nn; ++k) {
      try {
        const auto idx = static_cast<std::size_t>(k);
        c.residuals[idx] =
            prune_magnitude(deltas[idx], s, cfg.sparse_format, cfg.index_width);
      } catch (...) {
#pragma omp critical
        if (!fail) fail = std::current_exception();
      }
    }
    if (fail) std::rethrow_exception(fail);
  };

  auto encode_lowrank_each = [&](const std::vector<DenseMatrix>& deltas,
                                 std::size_t rank) {
    std::exception_ptr fail = nullptr;
    const std::int64_t nn = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(dynamic) if (kernels::parallel_enabled())
    for (std::int64_t k = 0; k < nn; ++k) {
      try {
        const auto idx = static_cast<std::size_t>(k);
        c.residuals[idx] = svd_truncate(deltas[idx], rank);
      } catch (...) {
#pragma omp critical
        if (!fail) fail = std::current_exception();
      }
    }
    if (fail) std::rethrow_exception(fail);
  };

  auto norms_of = [&](const std::vector<DenseMatrix>& deltas) {
    for (std::size_t k = 0; k < n; ++k)
      c.residual_norms[k] = std::sqrt(kernels::frobenius_sq(deltas[k]));
  };

  switch (method) {
    case Method::ResMoE_UP:
    case Method::ResMoE_SVD: {
      const BarycenterResult bary = compute_barycenter(ws, cfg.bary);
      const std::vector<DenseMatrix> deltas = compute_residuals(ws, bary);
      c.center = bary.w_omega;
      c.perms = bary.perms;
      c.wb_loss = bary.wb_loss;
      c.bary_iterations = bary.iterations;
      c.bary_converged = bary.converged;
      norms_of(deltas);
      if (method == Method::ResMoE_UP) {
        encode_sparse_each(deltas);
      } else {
        c.svd_rank = pick_rank(layer, s, cfg);
        encode_lowrank_each(deltas, c.svd_rank);
      }
      break;
    }
    case Method::AvgCenter_UP: {
      DenseMatrix mean = unaligned_mean(ws);
      std::vector<DenseMatrix> deltas;
      deltas.reserve(n);
      for (const auto& w : ws) {
        DenseMatrix d = w.m;
        for (std::size_t i = 0; i < d.data.size(); ++i)
          d.data[i] -= mean.data[i];
        deltas.push_back(std::move(d));
      }
      c.center = DesignMatrix(ws[0].kind, ws[0].p, std::move(mean));
      norms_of(deltas);
      encode_sparse_each(deltas);
      break;
    }
    case Method::UP_concat: {
      std::vector<DenseMatrix> raw;
      raw.reserve(n);
      for (const auto& w : ws) raw.push_back(w.m);
      norms_of(raw);
      auto encoded = prune_concat(raw, s, cfg.sparse_format, cfg.index_width);
      for (std::size_t k = 0; k < n; ++k) c.residuals[k] = std::move(encoded[k]);
      break;
    }
    case Method::UP_sep: {
      std::vector<DenseMatrix> raw;
      raw.reserve(n);
      for (const auto& w : ws) raw.push_back(w.m);
      norms_of(raw);
      encode_sparse_each(raw);
      break;
    }
    case Method::SP: {
      for (std::size_t k = 0; k < n; ++k) {
        c.residual_norms[k] = std::sqrt(kernels::frobenius_sq(ws[k].m));
        c.residuals[k] = prune_structured(ws[k].m, s);
      }
      break;
    }
    case Method::SVD_plain: {
      std::vector<DenseMatrix> raw;
      raw.reserve(n);
      for (const auto& w : ws) raw.push_back(w.m);
      norms_of(raw);
      c.svd_rank = pick_rank(layer, s, cfg);
      encode_lowrank_each(raw, c.svd_rank);
      break;
    }
    case Method::GroupMerge: {
      if (!(cfg.expert_keep > 0.0) || cfg.expert_keep > 1.0)
        throw ValidationError("expert_keep must be in (0, 1], got " +
                              std::to_string(cfg.expert_keep));
      const auto n_groups = static_cast<std::size_t>(
          std::ceil(cfg.expert_keep * static_cast<double>(n)));
      c.group_of = agglomerate(ws, n_groups);
      const std::uint32_t groups =
          *std::max_element(c.group_of.begin(), c.group_of.end()) + 1;
      for (std::uint32_t g = 0; g < groups; ++g) {
        std::vector<DesignMatrix> members;
        std::vector<std::size_t> ids;
        for (std::size_t k = 0; k < n; ++k)
          if (c.group_of[k] == g) {
            members.push_back(ws[k]);
            ids.push_back(k);
          }
        const BarycenterResult gb = compute_barycenter(members, cfg.bary);
        c.group_centers.push_back(gb.w_omega);
        for (std::size_t i = 0; i < ids.size(); ++i) {
          c.perms[ids[i]] = gb.perms[i];
          c.residuals[ids[i]] = GroupRef{g};
          c.residual_norms[ids[i]] = std::sqrt(kernels::frobenius_sq_diff(
              apply_permutation(gb.perms[i], members[i].m), gb.w_omega.m));
        }
      }
      break;
    }
    case Method::Dense: {
      for (std::size_t k = 0; k < n; ++k) {
        c.residual_norms[k] = std::sqrt(kernels::frobenius_sq(ws[k].m));
        c.residuals[k] = ws[k].m;
      }
      break;
    }
  }

  c.validate();
  return c;
}

DesignMatrix restored_design(const CompressedLayer& c, std::size_t k) {
  if (k >= c.n_experts)
    throw IndexError("expert index " + std::to_string(k) + " out of range [0, " +
                     std::to_string(c.n_experts) + ")");
  const ResidualEncoding& r = c.residuals[k];
  if (std::holds_alternative<GroupRef>(r))
    return c.group_centers[std::get<GroupRef>(r).group];

  DenseMatrix m;
  if (std::holds_alternative<SparseResidual>(r))
    m = std::get<SparseResidual>(r).decode();
  else if (std::holds_alternative<LowRankResidual>(r))
    m = std::get<LowRankResidual>(r).decode();
  else if (std::holds_alternative<RowPrunedMatrix>(r))
    m = std::get<RowPrunedMatrix>(r).decode();
  else
    m = std::get<DenseMatrix>(r);

  if (c.center) {
    require_same_shape(m, c.center->m, "restored_design");
    for (std::size_t i = 0; i < m.data.size(); ++i)
      m.data[i] += c.center->m.data[i];
  }
  return DesignMatrix(c.kind, c.p, std::move(m));
}

ExpertWeights restore_expert(const CompressedLayer& c, std::size_t k) {
  if (k >= c.n_experts)
    throw IndexError("expert index " + std::to_string(k) + " out of range [0, " +
                     std::to_string(c.n_experts) + ")");
  return unpack_design(restored_design(c, k), c.activation, c.b2s[k]);
}

Vector compressed_gate_scores(const CompressedLayer& c,
                              std::span<const double> x) {
  return topk_softmax(c.gate, c.top_k, x);
}

Vector compressed_forward(const CompressedLayer& c, std::span<const double> x) {
  if (x.size() != c.p)
    throw ShapeError("compressed_forward: input length != p");
  const Vector s = compressed_gate_scores(c, x);
  Vector y(c.p, 0.0);
  for (std::size_t k = 0; k < c.n_experts; ++k) {
    if (s[k] == 0.0) continue;
    const ExpertWeights e = restore_expert(c, k);
    const Vector yk = expert_forward(e, x);
    for (std::size_t j = 0; j < y.size(); ++j) y[j] += s[k] * yk[j];
  }
  return y;
}

} // namespace resmoe
