#include "resmoe/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "resmoe/rng.hpp"

namespace resmoe {

using nlohmann::ordered_json;

namespace {

constexpr int kFormatVersion = 1;

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, double v) {
  put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

std::uint16_t take_u16(const char* p) {
  const auto* b = reinterpret_cast<const unsigned char*>(p);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t take_u32(const char* p) {
  const auto* b = reinterpret_cast<const unsigned char*>(p);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t take_u64(const char* p) {
  std::uint64_t v = 0;
  const auto* b = reinterpret_cast<const unsigned char*>(p);
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

double take_f32(const char* p) {
  return static_cast<double>(std::bit_cast<float>(take_u32(p)));
}

std::size_t dtype_size(const std::string& dtype) {
  if (dtype == "f32" || dtype == "u32") return 4;
  if (dtype == "u16") return 2;
  if (dtype == "u64") return 8;
  throw JsonError("unknown tensor dtype '" + dtype + "'");
}

class TensorWriter {
public:
  void add_f32(const std::string& name, std::vector<std::size_t> shape,
               const double* vals, std::size_t count) {
    begin(name, "f32", shape, count * 4);
    for (std::size_t i = 0; i < count; ++i) put_f32(payload_, vals[i]);
  }

  void add_matrix(const std::string& name, const DenseMatrix& m) {
    add_f32(name, {m.rows, m.cols}, m.data.data(), m.data.size());
  }

  void add_indices(const std::string& name, std::vector<std::size_t> shape,
                   const std::uint32_t* vals, std::size_t count,
                   IndexWidth width) {
    switch (width) {
      case IndexWidth::I16:
        begin(name, "u16", shape, count * 2);
        for (std::size_t i = 0; i < count; ++i)
          put_u16(payload_, static_cast<std::uint16_t>(vals[i]));
        break;
      case IndexWidth::I32:
        begin(name, "u32", shape, count * 4);
        for (std::size_t i = 0; i < count; ++i) put_u32(payload_, vals[i]);
        break;
      case IndexWidth::I64:
        begin(name, "u64", shape, count * 8);
        for (std::size_t i = 0; i < count; ++i) put_u64(payload_, vals[i]);
        break;
    }
  }

  void add_u32(const std::string& name, std::vector<std::size_t> shape,
               const std::uint32_t* vals, std::size_t count) {
    add_indices(name, std::move(shape), vals, count, IndexWidth::I32);
  }

  const ordered_json& table() const { return table_; }
  const std::string& payload() const { return payload_; }

private:
  void begin(const std::string& name, const char* dtype,
             const std::vector<std::size_t>& shape, std::size_t byte_len) {
    ordered_json meta;
    meta["dtype"] = dtype;
    meta["shape"] = shape;
    meta["offset"] = payload_.size();
    meta["byte_len"] = byte_len;
    table_[name] = std::move(meta);
  }

  ordered_json table_ = ordered_json::object();
  std::string payload_;
};

void write_container(const std::filesystem::path& path, const char magic[4],
                     ordered_json header, const std::string& payload) {
  const std::string head = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(magic, 4);
  std::string len;
  put_u32(len, static_cast<std::uint32_t>(head.size()));
  out.write(len.data(), 4);
  out.write(head.data(), static_cast<std::streamsize>(head.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

struct Container {
  ordered_json header;
  std::string payload;
};

Container read_container(const std::filesystem::path& path,
                         const char magic[4]) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  if (bytes.size() < 8)
    throw TruncatedFileError(path.string() + ": shorter than the fixed header");
  if (std::memcmp(bytes.data(), magic, 4) != 0)
    throw BadMagicError(path.string() + ": magic '" +
                        bytes.substr(0, 4) + "' does not match '" +
                        std::string(magic, 4) + "'");
  const std::uint32_t header_len = take_u32(bytes.data() + 4);
  if (8ull + header_len > bytes.size())
    throw TruncatedFileError(path.string() + ": declared header exceeds file");
  Container c;
  try {
    c.header = ordered_json::parse(bytes.substr(8, header_len));
  } catch (const ordered_json::parse_error& e) {
    throw JsonError(path.string() + ": header is not valid JSON: " + e.what());
  }
  const auto vit = c.header.find("format_version");
  if (vit == c.header.end() || !vit->is_number_integer())
    throw VersionError(path.string() + ": missing format_version");
  if (vit->get<int>() != kFormatVersion)
    throw VersionError(path.string() + ": format_version " +
                       vit->dump() + " unsupported (expected " +
                       std::to_string(kFormatVersion) + ")");
  c.payload = bytes.substr(8ull + header_len);
  return c;
}

class TensorReader {
public:
  TensorReader(const Container& c) : payload_(c.payload) {
    const auto it = c.header.find("tensors");
    if (it == c.header.end() || !it->is_object())
      throw JsonError("tensor table missing from header");
    table_ = *it;
    // Offsets must ascend without overlap and stay inside the payload.
    std::uint64_t cursor = 0;
    for (const auto& [name, meta] : table_.items()) {
      if (!meta.is_object() || !meta.contains("dtype") ||
          !meta.contains("shape") || !meta.contains("offset") ||
          !meta.contains("byte_len"))
        throw JsonError("tensor '" + name + "' entry is malformed");
      const auto offset = meta["offset"].get<std::uint64_t>();
      const auto byte_len = meta["byte_len"].get<std::uint64_t>();
      if (offset < cursor)
        throw IoError("tensor '" + name + "' overlaps the previous tensor");
      if (offset + byte_len > payload_.size())
        throw TruncatedFileError("payload truncated at tensor '" + name + "'");
      std::uint64_t numel = 1;
      for (const auto& d : meta["shape"]) numel *= d.get<std::uint64_t>();
      if (numel * dtype_size(meta["dtype"].get<std::string>()) != byte_len)
        throw TruncatedFileError("tensor '" + name +
                                 "' byte length disagrees with dtype and shape");
      cursor = offset + byte_len;
    }
  }

  bool has(const std::string& name) const { return table_.contains(name); }

  std::vector<std::size_t> shape(const std::string& name) const {
    std::vector<std::size_t> s;
    for (const auto& d : meta(name)["shape"]) s.push_back(d.get<std::size_t>());
    return s;
  }

  std::string dtype(const std::string& name) const {
    return meta(name)["dtype"].get<std::string>();
  }

  std::vector<double> f32(const std::string& name) const {
    const auto& m = meta(name);
    expect_dtype(name, m, "f32");
    const char* p = payload_.data() + m["offset"].get<std::uint64_t>();
    const std::size_t n = m["byte_len"].get<std::uint64_t>() / 4;
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = take_f32(p + 4 * i);
    return out;
  }

  DenseMatrix matrix(const std::string& name) const {
    const auto s = shape(name);
    if (s.size() != 2) throw JsonError("tensor '" + name + "' is not 2-D");
    DenseMatrix m(s[0], s[1]);
    m.data = f32(name);
    return m;
  }

  std::vector<std::uint32_t> indices(const std::string& name,
                                     IndexWidth expected) const {
    const auto& m = meta(name);
    const char* want = expected == IndexWidth::I16   ? "u16"
                       : expected == IndexWidth::I32 ? "u32"
                                                     : "u64";
    expect_dtype(name, m, want);
    const char* p = payload_.data() + m["offset"].get<std::uint64_t>();
    const std::size_t bytes = m["byte_len"].get<std::uint64_t>();
    std::vector<std::uint32_t> out;
    switch (expected) {
      case IndexWidth::I16:
        out.resize(bytes / 2);
        for (std::size_t i = 0; i < out.size(); ++i)
          out[i] = take_u16(p + 2 * i);
        break;
      case IndexWidth::I32:
        out.resize(bytes / 4);
        for (std::size_t i = 0; i < out.size(); ++i)
          out[i] = take_u32(p + 4 * i);
        break;
      case IndexWidth::I64:
        out.resize(bytes / 8);
        for (std::size_t i = 0; i < out.size(); ++i)
          out[i] = static_cast<std::uint32_t>(take_u64(p + 8 * i));
        break;
    }
    return out;
  }

private:
  const ordered_json& meta(const std::string& name) const {
    const auto it = table_.find(name);
    if (it == table_.end())
      throw JsonError("tensor '" + name + "' missing from table");
    return *it;
  }

  void expect_dtype(const std::string& name, const ordered_json& m,
                    const char* want) const {
    if (m["dtype"].get<std::string>() != want)
      throw TruncatedFileError("tensor '" + name + "' has dtype " +
                               m["dtype"].get<std::string>() +
                               " where the manifest implies " + want);
  }

  ordered_json table_;
  const std::string& payload_;
};

std::string layer_prefix(std::size_t l) { return "L" + std::to_string(l); }

ordered_json generator_json(const std::string& origin) {
  if (origin.empty()) return nullptr;
  try {
    return ordered_json::parse(origin);
  } catch (const ordered_json::parse_error&) {
    return nullptr;
  }
}

} // namespace

void save_model(const MoEModel& model, const std::filesystem::path& path) {
  if (model.layers.empty()) throw EmptyInputError("save_model: no layers");
  const MoELayer& first = model.layers[0];
  first.validate();
  for (const auto& layer : model.layers) {
    layer.validate();
    if (layer.n_experts() != first.n_experts() || layer.p() != first.p() ||
        layer.p_inner() != first.p_inner() || layer.top_k != first.top_k ||
        layer.experts[0].kind != first.experts[0].kind)
      throw ShapeError("save_model: layers disagree on shape");
  }

  TensorWriter w;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const MoELayer& layer = model.layers[l];
    const std::string lp = layer_prefix(l);
    w.add_matrix(lp + ".gate", layer.gate);
    for (std::size_t k = 0; k < layer.n_experts(); ++k) {
      const ExpertWeights& e = layer.experts[k];
      const std::string ep = lp + ".E" + std::to_string(k);
      w.add_matrix(ep + ".w1", e.w1);
      w.add_f32(ep + ".b1", {e.b1.size()}, e.b1.data(), e.b1.size());
      if (e.kind == ExpertKind::Gated) {
        w.add_matrix(ep + ".w3", e.w3);
        w.add_f32(ep + ".b3", {e.b3.size()}, e.b3.data(), e.b3.size());
      }
      w.add_matrix(ep + ".w2", e.w2);
      w.add_f32(ep + ".b2", {e.b2.size()}, e.b2.data(), e.b2.size());
    }
  }

  ordered_json header;
  header["format_version"] = kFormatVersion;
  header["rng"] = kRngId;
  header["kind"] = to_string(first.experts[0].kind);
  header["activation"] = to_string(first.experts[0].activation);
  header["n_experts"] = first.n_experts();
  header["p"] = first.p();
  header["p_inner"] = first.p_inner();
  header["top_k"] = first.top_k;
  header["layers"] = model.layers.size();
  if (auto gen = generator_json(model.origin_spec_json); !gen.is_null())
    header["generator"] = std::move(gen);
  header["tensors"] = w.table();
  write_container(path, "RMT1", std::move(header), w.payload());
}

MoEModel load_model(const std::filesystem::path& path) {
  const Container c = read_container(path, "RMT1");
  const TensorReader r(c);

  const auto kind = expert_kind_from_string(c.header.at("kind").get<std::string>());
  const auto act =
      activation_from_string(c.header.at("activation").get<std::string>());
  const auto n = c.header.at("n_experts").get<std::size_t>();
  const auto top_k = c.header.at("top_k").get<std::size_t>();
  const auto n_layers = c.header.value("layers", std::size_t{1});

  MoEModel model;
  if (c.header.contains("generator"))
    model.origin_spec_json = c.header["generator"].dump();
  for (std::size_t l = 0; l < n_layers; ++l) {
    const std::string lp = layer_prefix(l);
    MoELayer layer;
    layer.top_k = top_k;
    layer.gate = r.matrix(lp + ".gate");
    for (std::size_t k = 0; k < n; ++k) {
      const std::string ep = lp + ".E" + std::to_string(k);
      ExpertWeights e;
      e.kind = kind;
      e.activation = act;
      e.w1 = r.matrix(ep + ".w1");
      e.b1 = r.f32(ep + ".b1");
      if (kind == ExpertKind::Gated) {
        e.w3 = r.matrix(ep + ".w3");
        e.b3 = r.f32(ep + ".b3");
      }
      e.w2 = r.matrix(ep + ".w2");
      e.b2 = r.f32(ep + ".b2");
      layer.experts.push_back(std::move(e));
    }
    layer.validate();
    model.layers.push_back(std::move(layer));
  }
  return model;
}

namespace {

const char* residual_kind_name(const ResidualEncoding& r) {
  if (std::holds_alternative<SparseResidual>(r)) return "sparse";
  if (std::holds_alternative<LowRankResidual>(r)) return "lowrank";
  if (std::holds_alternative<RowPrunedMatrix>(r)) return "rowpruned";
  if (std::holds_alternative<GroupRef>(r)) return "group";
  return "dense";
}

ordered_json bary_json(const BarycenterConfig& b) {
  ordered_json j;
  j["max_iters"] = b.max_iters;
  j["rel_tol"] = b.rel_tol;
  switch (b.init) {
    case BarycenterConfig::Init::Mean: j["init"] = "mean"; break;
    case BarycenterConfig::Init::FirstExpert: j["init"] = "first"; break;
    case BarycenterConfig::Init::IndexedExpert: j["init"] = "expert"; break;
    case BarycenterConfig::Init::RandomExpert: j["init"] = "random"; break;
  }
  j["init_index"] = b.init_index;
  j["init_seed"] = b.init_seed;
  return j;
}

BarycenterConfig bary_from_json(const ordered_json& j) {
  BarycenterConfig b;
  b.max_iters = j.value("max_iters", b.max_iters);
  b.rel_tol = j.value("rel_tol", b.rel_tol);
  const std::string init = j.value("init", "mean");
  if (init == "mean") b.init = BarycenterConfig::Init::Mean;
  else if (init == "first") b.init = BarycenterConfig::Init::FirstExpert;
  else if (init == "expert") b.init = BarycenterConfig::Init::IndexedExpert;
  else if (init == "random") b.init = BarycenterConfig::Init::RandomExpert;
  else throw JsonError("unknown barycenter init '" + init + "'");
  b.init_index = j.value("init_index", b.init_index);
  b.init_seed = j.value("init_seed", b.init_seed);
  return b;
}

IndexWidth width_from_int(int w) {
  switch (w) {
    case 16: return IndexWidth::I16;
    case 32: return IndexWidth::I32;
    case 64: return IndexWidth::I64;
  }
  throw JsonError("index_width must be 16, 32, or 64");
}

} // namespace

void save_compressed(const CompressedModel& model,
                     const std::filesystem::path& path) {
  if (model.layers.empty()) throw EmptyInputError("save_compressed: no layers");
  for (const auto& layer : model.layers) layer.validate();

  TensorWriter w;
  ordered_json layer_info = ordered_json::array();
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const CompressedLayer& c = model.layers[l];
    const std::string lp = layer_prefix(l);

    ordered_json info;
    info["method"] = to_string(c.method);
    info["keep_ratio"] = c.keep_ratio;
    if (c.svd_rank > 0) info["svd_rank"] = c.svd_rank;
    info["sparse_format"] = to_string(c.sparse_format);
    info["index_width"] = static_cast<int>(c.index_width);
    info["bary"] = bary_json(c.bary_cfg);
    info["wb_loss"] = c.wb_loss;
    info["bary_iterations"] = c.bary_iterations;
    info["bary_converged"] = c.bary_converged;
    info["residual"] = residual_kind_name(c.residuals.empty()
                                              ? ResidualEncoding(DenseMatrix())
                                              : c.residuals[0]);
    if (!c.group_of.empty()) info["groups"] = c.group_of;
    layer_info.push_back(std::move(info));

    if (c.center) w.add_matrix(lp + ".center", c.center->m);
    for (std::size_t g = 0; g < c.group_centers.size(); ++g)
      w.add_matrix(lp + ".G" + std::to_string(g) + ".center",
                   c.group_centers[g].m);

    for (std::size_t k = 0; k < c.n_experts; ++k) {
      const std::string ep = lp + ".E" + std::to_string(k);
      const ResidualEncoding& r = c.residuals[k];
      if (const auto* sp = std::get_if<SparseResidual>(&r)) {
        if (sp->format == SparseFormat::COO) {
          w.add_indices(ep + ".rowidx", {sp->nnz()}, sp->row_idx.data(),
                        sp->row_idx.size(), sp->index_width);
        } else {
          w.add_u32(ep + ".rowptr", {sp->row_ptr.size()}, sp->row_ptr.data(),
                    sp->row_ptr.size());
        }
        w.add_indices(ep + ".colidx", {sp->nnz()}, sp->col_idx.data(),
                      sp->col_idx.size(), sp->index_width);
        w.add_f32(ep + ".vals", {sp->nnz()}, sp->values.data(),
                  sp->values.size());
      } else if (const auto* lr = std::get_if<LowRankResidual>(&r)) {
        w.add_matrix(ep + ".u", lr->u);
        w.add_f32(ep + ".s", {lr->s.size()}, lr->s.data(), lr->s.size());
        w.add_matrix(ep + ".v", lr->v);
      } else if (const auto* rp = std::get_if<RowPrunedMatrix>(&r)) {
        w.add_u32(ep + ".rows", {rp->kept.size()}, rp->kept.data(),
                  rp->kept.size());
        w.add_matrix(ep + ".block", rp->block);
      } else if (std::holds_alternative<DenseMatrix>(r)) {
        w.add_matrix(ep + ".dense", std::get<DenseMatrix>(r));
      }
      // GroupRef carries no tensors; the manifest "groups" array covers it.
    }

    std::vector<std::uint32_t> perm_data;
    perm_data.reserve(c.n_experts * c.p_inner);
    for (const auto& t : c.perms)
      perm_data.insert(perm_data.end(), t.map.begin(), t.map.end());
    w.add_u32(lp + ".perms", {c.n_experts, c.p_inner}, perm_data.data(),
              perm_data.size());

    std::vector<double> b2_data;
    b2_data.reserve(c.n_experts * c.p);
    for (const auto& b : c.b2s) b2_data.insert(b2_data.end(), b.begin(), b.end());
    w.add_f32(lp + ".b2", {c.n_experts, c.p}, b2_data.data(), b2_data.size());

    w.add_matrix(lp + ".gate", c.gate);
  }

  const CompressedLayer& first = model.layers[0];
  ordered_json header;
  header["format_version"] = kFormatVersion;
  header["rng"] = kRngId;
  header["kind"] = to_string(first.kind);
  header["activation"] = to_string(first.activation);
  header["n_experts"] = first.n_experts;
  header["p"] = first.p;
  header["p_inner"] = first.p_inner;
  header["top_k"] = first.top_k;
  header["layers"] = model.layers.size();
  std::string summary = "dense";
  double summary_ratio = 1.0;
  for (const auto& layer : model.layers)
    if (layer.method != Method::Dense) {
      summary = to_string(layer.method);
      summary_ratio = layer.keep_ratio;
      break;
    }
  header["method"] = summary;
  header["keep_ratio"] = summary_ratio;
  if (auto gen = generator_json(model.origin_spec_json); !gen.is_null())
    header["generator"] = std::move(gen);
  header["layer_info"] = std::move(layer_info);
  header["tensors"] = w.table();
  write_container(path, "RMZ1", std::move(header), w.payload());
}

CompressedModel load_compressed(const std::filesystem::path& path) {
  const Container c = read_container(path, "RMZ1");
  const TensorReader r(c);

  const auto kind = expert_kind_from_string(c.header.at("kind").get<std::string>());
  const auto act =
      activation_from_string(c.header.at("activation").get<std::string>());
  const auto n = c.header.at("n_experts").get<std::size_t>();
  const auto p = c.header.at("p").get<std::size_t>();
  const auto p_inner = c.header.at("p_inner").get<std::size_t>();
  const auto top_k = c.header.at("top_k").get<std::size_t>();
  const auto n_layers = c.header.value("layers", std::size_t{1});
  const auto info_it = c.header.find("layer_info");
  if (info_it == c.header.end() || !info_it->is_array() ||
      info_it->size() != n_layers)
    throw JsonError(path.string() + ": layer_info missing or wrong length");

  CompressedModel model;
  if (c.header.contains("generator"))
    model.origin_spec_json = c.header["generator"].dump();

  for (std::size_t l = 0; l < n_layers; ++l) {
    const ordered_json& info = (*info_it)[l];
    const std::string lp = layer_prefix(l);

    CompressedLayer cl;
    cl.method = method_from_string(info.at("method").get<std::string>());
    cl.kind = kind;
    cl.activation = act;
    cl.p = p;
    cl.p_inner = p_inner;
    cl.n_experts = n;
    cl.top_k = top_k;
    cl.keep_ratio = info.value("keep_ratio", 1.0);
    cl.svd_rank = info.value("svd_rank", std::size_t{0});
    cl.sparse_format = info.value("sparse_format", std::string("csr")) == "coo"
                           ? SparseFormat::COO
                           : SparseFormat::CSR;
    cl.index_width = width_from_int(info.value("index_width", 32));
    if (info.contains("bary")) cl.bary_cfg = bary_from_json(info["bary"]);
    cl.wb_loss = info.value("wb_loss", 0.0);
    cl.bary_iterations = info.value("bary_iterations", std::size_t{0});
    cl.bary_converged = info.value("bary_converged", false);

    const std::string rkind = info.value("residual", "dense");
    const std::size_t cols = design_cols(kind, p);

    if (r.has(lp + ".center"))
      cl.center = DesignMatrix(kind, p, r.matrix(lp + ".center"));

    if (info.contains("groups")) {
      cl.group_of = info["groups"].get<std::vector<std::uint32_t>>();
      if (cl.group_of.size() != n)
        throw JsonError("groups array must list every expert");
      const std::uint32_t groups =
          *std::max_element(cl.group_of.begin(), cl.group_of.end()) + 1;
      for (std::uint32_t g = 0; g < groups; ++g)
        cl.group_centers.push_back(DesignMatrix(
            kind, p, r.matrix(lp + ".G" + std::to_string(g) + ".center")));
    }

    cl.residuals.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      const std::string ep = lp + ".E" + std::to_string(k);
      if (rkind == "sparse") {
        SparseResidual sp;
        sp.rows = p_inner;
        sp.cols = cols;
        sp.format = cl.sparse_format;
        sp.index_width = cl.index_width;
        sp.keep_ratio = cl.keep_ratio;
        sp.values = r.f32(ep + ".vals");
        sp.col_idx = r.indices(ep + ".colidx", cl.index_width);
        if (sp.col_idx.size() != sp.values.size())
          throw TruncatedFileError("tensor '" + ep +
                                   ".colidx' length disagrees with values");
        if (sp.format == SparseFormat::COO) {
          sp.row_idx = r.indices(ep + ".rowidx", cl.index_width);
          if (sp.row_idx.size() != sp.values.size())
            throw TruncatedFileError("tensor '" + ep +
                                     ".rowidx' length disagrees with values");
        } else {
          sp.row_ptr = r.indices(ep + ".rowptr", IndexWidth::I32);
          if (sp.row_ptr.size() != p_inner + 1)
            throw TruncatedFileError("tensor '" + ep +
                                     ".rowptr' must hold rows+1 entries");
        }
        cl.residuals[k] = std::move(sp);
      } else if (rkind == "lowrank") {
        LowRankResidual lr;
        lr.u = r.matrix(ep + ".u");
        lr.s = r.f32(ep + ".s");
        lr.v = r.matrix(ep + ".v");
        lr.rows = lr.u.rows;
        lr.cols = lr.v.rows;
        lr.rank = lr.s.size();
        if (lr.u.cols != lr.rank || lr.v.cols != lr.rank)
          throw TruncatedFileError("tensor '" + ep +
                                   "' factor shapes disagree with rank");
        cl.residuals[k] = std::move(lr);
      } else if (rkind == "rowpruned") {
        RowPrunedMatrix rp;
        rp.rows = p_inner;
        rp.cols = cols;
        rp.kept = r.indices(ep + ".rows", IndexWidth::I32);
        rp.block = r.matrix(ep + ".block");
        if (rp.block.rows != rp.kept.size() || rp.block.cols != cols)
          throw TruncatedFileError("tensor '" + ep +
                                   ".block' shape disagrees with kept rows");
        cl.residuals[k] = std::move(rp);
      } else if (rkind == "group") {
        if (cl.group_of.size() != n)
          throw JsonError("group residuals need a groups array");
        cl.residuals[k] = GroupRef{cl.group_of[k]};
      } else if (rkind == "dense") {
        cl.residuals[k] = r.matrix(ep + ".dense");
      } else {
        throw JsonError("unknown residual kind '" + rkind + "'");
      }
    }

    const auto perm_data = r.indices(lp + ".perms", IndexWidth::I32);
    if (perm_data.size() != n * p_inner)
      throw TruncatedFileError("tensor '" + lp +
                               ".perms' shape disagrees with n_experts");
    for (std::size_t k = 0; k < n; ++k) {
      Permutation t;
      t.map.assign(perm_data.begin() + static_cast<std::ptrdiff_t>(k * p_inner),
                   perm_data.begin() +
                       static_cast<std::ptrdiff_t>((k + 1) * p_inner));
      cl.perms.push_back(std::move(t));
    }

    const auto b2_data = r.f32(lp + ".b2");
    if (b2_data.size() != n * p)
      throw TruncatedFileError("tensor '" + lp + ".b2' shape disagrees");
    for (std::size_t k = 0; k < n; ++k)
      cl.b2s.emplace_back(b2_data.begin() + static_cast<std::ptrdiff_t>(k * p),
                          b2_data.begin() +
                              static_cast<std::ptrdiff_t>((k + 1) * p));

    cl.gate = r.matrix(lp + ".gate");
    cl.validate();
    model.layers.push_back(std::move(cl));
  }
  return model;
}

} // namespace resmoe
