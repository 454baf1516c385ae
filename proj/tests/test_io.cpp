#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "resmoe/container.hpp"
#include "resmoe/metrics.hpp"
#include "resmoe/rng.hpp"

using namespace resmoe;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("resmoe_io_" + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  fs::path file(const std::string& name) const { return path / name; }
};

std::vector<unsigned char> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  REQUIRE(out.good());
}

std::uint32_t header_len(const std::vector<unsigned char>& bytes) {
  return static_cast<std::uint32_t>(bytes[4]) |
         static_cast<std::uint32_t>(bytes[5]) << 8 |
         static_cast<std::uint32_t>(bytes[6]) << 16 |
         static_cast<std::uint32_t>(bytes[7]) << 24;
}

// Re-serializes the container with a mutated header, keeping the payload.
template <typename Fn>
void patch_header(const fs::path& p, Fn&& mutate) {
  auto bytes = read_bytes(p);
  const std::uint32_t hlen = header_len(bytes);
  auto header = nlohmann::ordered_json::parse(
      std::string(bytes.begin() + 8, bytes.begin() + 8 + hlen));
  mutate(header);
  const std::string text = header.dump();
  std::vector<unsigned char> out(bytes.begin(), bytes.begin() + 4);
  const auto n = static_cast<std::uint32_t>(text.size());
  out.push_back(static_cast<unsigned char>(n & 0xff));
  out.push_back(static_cast<unsigned char>((n >> 8) & 0xff));
  out.push_back(static_cast<unsigned char>((n >> 16) & 0xff));
  out.push_back(static_cast<unsigned char>((n >> 24) & 0xff));
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), bytes.begin() + 8 + hlen, bytes.end());
  write_bytes(p, out);
}

void write_raw_container(const fs::path& p, const std::string& magic,
                         const std::string& header) {
  std::vector<unsigned char> out(magic.begin(), magic.end());
  const auto n = static_cast<std::uint32_t>(header.size());
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<unsigned char>((n >> (8 * i)) & 0xff));
  out.insert(out.end(), header.begin(), header.end());
  write_bytes(p, out);
}

SynthSpec planted_spec(std::uint64_t seed) {
  SynthSpec s;
  s.family = SynthFamily::Planted;
  s.kind = ExpertKind::Gated;
  s.activation = Activation::SiLU;
  s.n_experts = 6;
  s.p = 8;
  s.p_inner = 16;
  s.top_k = 2;
  s.noise_sigma = 1e-2;
  s.seed = seed;
  return s;
}

bool same_expert(const ExpertWeights& a, const ExpertWeights& b) {
  bool ok = a.kind == b.kind && a.activation == b.activation &&
            a.w1.data == b.w1.data && a.b1 == b.b1 && a.w2.data == b.w2.data &&
            a.b2 == b.b2;
  if (a.kind == ExpertKind::Gated)
    ok = ok && a.w3.data == b.w3.data && a.b3 == b.b3;
  return ok;
}

double forward_gap(const CompressedLayer& a, const CompressedLayer& b,
                   std::size_t inputs, std::uint64_t seed) {
  SplitMix64 rng(seed);
  double worst = 0.0;
  for (std::size_t t = 0; t < inputs; ++t) {
    Vector x(a.p);
    for (double& v : x) v = rng.next_normal();
    const Vector ya = compressed_forward(a, x);
    const Vector yb = compressed_forward(b, x);
    double num = 0.0, den = 1.0;
    for (std::size_t j = 0; j < ya.size(); ++j) {
      num += (ya[j] - yb[j]) * (ya[j] - yb[j]);
      den += ya[j] * ya[j];
    }
    worst = std::max(worst, std::sqrt(num / den));
  }
  return worst;
}

} // namespace

TEST_CASE("model containers round trip bitwise") {
  TempDir dir("model_roundtrip");
  SynthSpec spec = planted_spec(21);
  spec.layers = 2;
  const MoEModel model = generate_model(spec);
  const fs::path path = dir.file("m.rmt");
  save_model(model, path);

  const MoEModel back = load_model(path);
  REQUIRE(back.layers.size() == 2);
  CHECK(nlohmann::json::parse(back.origin_spec_json) ==
        nlohmann::json::parse(model.origin_spec_json));
  for (std::size_t l = 0; l < 2; ++l) {
    CHECK(back.layers[l].top_k == model.layers[l].top_k);
    CHECK(back.layers[l].gate.data == model.layers[l].gate.data);
    REQUIRE(back.layers[l].experts.size() == 6);
    for (std::size_t k = 0; k < 6; ++k)
      CHECK(same_expert(back.layers[l].experts[k], model.layers[l].experts[k]));
  }

  const fs::path again = dir.file("m2.rmt");
  save_model(back, again);
  CHECK(read_bytes(path) == read_bytes(again));
}

TEST_CASE("two-layer models and absent generator echoes survive") {
  TempDir dir("model_twolayer");
  SynthSpec spec;
  spec.family = SynthFamily::IIDGaussian;
  spec.kind = ExpertKind::TwoLayer;
  spec.activation = Activation::GELU;
  spec.n_experts = 3;
  spec.p = 5;
  spec.p_inner = 7;
  spec.seed = 8;
  MoEModel model = generate_model(spec);
  model.origin_spec_json.clear();
  const fs::path path = dir.file("plain.rmt");
  save_model(model, path);
  const MoEModel back = load_model(path);
  CHECK(back.origin_spec_json.empty());
  CHECK(same_expert(back.layers[0].experts[2], model.layers[0].experts[2]));
  CHECK(back.layers[0].experts[0].activation == Activation::GELU);
}

TEST_CASE("save_model rejects empty and ragged models") {
  TempDir dir("model_invalid");
  CHECK_THROWS_AS(save_model(MoEModel{}, dir.file("x.rmt")), EmptyInputError);
  SynthSpec a = planted_spec(1);
  SynthSpec b = planted_spec(1);
  b.p = 9;
  MoEModel ragged;
  ragged.layers.push_back(generate(a));
  ragged.layers.push_back(generate(b));
  CHECK_THROWS_AS(save_model(ragged, dir.file("x.rmt")), ShapeError);
  CHECK_THROWS_AS(save_model(generate_model(a), dir.file("no") / "dir.rmt"),
                  IoError);
  CHECK_THROWS_AS(load_model(dir.file("absent.rmt")), IoError);
}

TEST_CASE("artifact containers reproduce the forward map through disk") {
  TempDir dir("artifact_roundtrip");
  const SynthSpec spec = planted_spec(33);
  const MoELayer layer = generate(spec);

  struct Recipe {
    const char* name;
    Method method;
    double s;
    CompressionConfig cfg;
  };
  std::vector<Recipe> recipes;
  recipes.push_back({"resmoe-up-csr32", Method::ResMoE_UP, 0.25, {}});
  {
    CompressionConfig coo;
    coo.sparse_format = SparseFormat::COO;
    coo.index_width = IndexWidth::I16;
    recipes.push_back({"resmoe-up-coo16", Method::ResMoE_UP, 0.25, coo});
  }
  recipes.push_back({"resmoe-svd", Method::ResMoE_SVD, 0.25, {}});
  recipes.push_back({"up-concat", Method::UP_concat, 0.5, {}});
  recipes.push_back({"sp", Method::SP, 0.5, {}});
  recipes.push_back({"group-merge", Method::GroupMerge, 0.25, {}});
  recipes.push_back({"dense", Method::Dense, 1.0, {}});

  for (const auto& r : recipes) {
    CAPTURE(r.name);
    CompressedModel model;
    model.layers.push_back(compress_layer(layer, r.method, r.s, r.cfg));
    model.origin_spec_json = spec.to_json();
    const CompressedLayer& c = model.layers[0];

    const fs::path path = dir.file(std::string(r.name) + ".rmz");
    save_compressed(model, path);
    const CompressedModel loaded = load_compressed(path);
    REQUIRE(loaded.layers.size() == 1);
    const CompressedLayer& lc = loaded.layers[0];

    CHECK(lc.method == c.method);
    CHECK(lc.kind == c.kind);
    CHECK(lc.activation == c.activation);
    CHECK(lc.p == c.p);
    CHECK(lc.p_inner == c.p_inner);
    CHECK(lc.n_experts == c.n_experts);
    CHECK(lc.top_k == c.top_k);
    CHECK(lc.keep_ratio == c.keep_ratio);
    CHECK(lc.svd_rank == c.svd_rank);
    CHECK(lc.sparse_format == c.sparse_format);
    CHECK(lc.index_width == c.index_width);
    CHECK(lc.wb_loss == c.wb_loss);
    CHECK(lc.bary_iterations == c.bary_iterations);
    CHECK(lc.bary_converged == c.bary_converged);
    CHECK(lc.group_of == c.group_of);
    CHECK(lc.group_centers.size() == c.group_centers.size());
    REQUIRE(lc.residuals.size() == c.residuals.size());
    for (std::size_t k = 0; k < c.residuals.size(); ++k)
      CHECK(lc.residuals[k].index() == c.residuals[k].index());
    REQUIRE(lc.perms.size() == c.perms.size());
    for (std::size_t k = 0; k < c.perms.size(); ++k)
      CHECK(lc.perms[k].map == c.perms[k].map);
    CHECK(lc.b2s == c.b2s);
    CHECK(lc.gate.data == c.gate.data);

    CHECK(forward_gap(c, lc, 20, 7) <= 1e-6);

    const fs::path again = dir.file(std::string(r.name) + "_2.rmz");
    save_compressed(loaded, again);
    CHECK(read_bytes(path) == read_bytes(again));
  }
}

TEST_CASE("a lossless artifact still matches the source model after disk") {
  TempDir dir("artifact_lossless");
  const SynthSpec spec = planted_spec(44);
  const MoELayer layer = generate(spec);
  CompressedModel model;
  model.layers.push_back(
      compress_layer(layer, Method::ResMoE_UP, 1.0, CompressionConfig{}));
  const fs::path path = dir.file("full.rmz");
  save_compressed(model, path);
  const CompressedLayer lc = load_compressed(path).layers[0];

  SplitMix64 rng(13);
  for (std::size_t t = 0; t < 20; ++t) {
    Vector x(layer.p());
    for (double& v : x) v = rng.next_normal();
    const Vector want = layer_forward(layer, x);
    const Vector got = compressed_forward(lc, x);
    double num = 0.0, den = 1.0;
    for (std::size_t j = 0; j < want.size(); ++j) {
      num += (want[j] - got[j]) * (want[j] - got[j]);
      den += want[j] * want[j];
    }
    CHECK(std::sqrt(num / den) <= 1e-6);
  }
}

TEST_CASE("multi-layer artifacts keep layers independent") {
  TempDir dir("artifact_layers");
  SynthSpec spec = planted_spec(55);
  spec.layers = 3;
  const MoEModel model = generate_model(spec);
  CompressedModel cm;
  cm.layers.push_back(compress_layer(model.layers[0], Method::Dense, 1.0, {}));
  cm.layers.push_back(
      compress_layer(model.layers[1], Method::ResMoE_UP, 0.25, {}));
  cm.layers.push_back(compress_layer(model.layers[2], Method::SP, 0.5, {}));
  const fs::path path = dir.file("mixed.rmz");
  save_compressed(cm, path);

  const CompressedModel back = load_compressed(path);
  REQUIRE(back.layers.size() == 3);
  CHECK(back.layers[0].method == Method::Dense);
  CHECK(back.layers[1].method == Method::ResMoE_UP);
  CHECK(back.layers[2].method == Method::SP);
  for (std::size_t l = 0; l < 3; ++l)
    CHECK(forward_gap(cm.layers[l], back.layers[l], 5, 3) <= 1e-6);

  // The manifest summary reports the first non-passthrough method.
  const auto bytes = read_bytes(path);
  const auto header = nlohmann::json::parse(
      std::string(bytes.begin() + 8, bytes.begin() + 8 + header_len(bytes)));
  CHECK(header["method"] == "resmoe-up");
  CHECK(header["keep_ratio"] == 0.25);
}

TEST_CASE("corrupt containers fail loudly") {
  TempDir dir("corrupt");
  const SynthSpec spec = planted_spec(66);
  const fs::path model_path = dir.file("m.rmt");
  save_model(generate_model(spec), model_path);

  SUBCASE("wrong magic") {
    auto bytes = read_bytes(model_path);
    bytes[0] = 'X';
    write_bytes(dir.file("bad.rmt"), bytes);
    CHECK_THROWS_AS(load_model(dir.file("bad.rmt")), BadMagicError);
  }
  SUBCASE("artifact magic on the model loader") {
    CompressedModel cm;
    cm.layers.push_back(
        compress_layer(generate(spec), Method::Dense, 1.0, {}));
    save_compressed(cm, dir.file("a.rmz"));
    CHECK_THROWS_AS(load_model(dir.file("a.rmz")), BadMagicError);
  }
  SUBCASE("shorter than the fixed header") {
    write_bytes(dir.file("tiny.rmt"), {'R', 'M', 'T', '1'});
    CHECK_THROWS_AS(load_model(dir.file("tiny.rmt")), TruncatedFileError);
  }
  SUBCASE("declared header length exceeds the file") {
    auto bytes = read_bytes(model_path);
    bytes[4] = bytes[5] = bytes[6] = bytes[7] = 0xff;
    write_bytes(dir.file("hdr.rmt"), bytes);
    CHECK_THROWS_AS(load_model(dir.file("hdr.rmt")), TruncatedFileError);
  }
  SUBCASE("header is not json") {
    auto bytes = read_bytes(model_path);
    bytes[8] = 'X';
    write_bytes(dir.file("json.rmt"), bytes);
    CHECK_THROWS_AS(load_model(dir.file("json.rmt")), JsonError);
  }
  SUBCASE("future format version") {
    write_raw_container(dir.file("v2.rmt"), "RMT1", R"({"format_version": 2})");
    CHECK_THROWS_AS(load_model(dir.file("v2.rmt")), VersionError);
    write_raw_container(dir.file("v0.rmt"), "RMT1", R"({"note": "no version"})");
    CHECK_THROWS_AS(load_model(dir.file("v0.rmt")), VersionError);
  }
  SUBCASE("truncated payload names the tensor") {
    auto bytes = read_bytes(model_path);
    bytes.resize(bytes.size() - 10);
    write_bytes(dir.file("cut.rmt"), bytes);
    try {
      load_model(dir.file("cut.rmt"));
      FAIL("expected TruncatedFileError");
    } catch (const TruncatedFileError& e) {
      CHECK(std::string(e.what()).find("payload truncated at tensor") !=
            std::string::npos);
      CHECK(std::string(e.what()).find(".b2") != std::string::npos);
    }
  }
}

TEST_CASE("unknown header keys are ignored") {
  TempDir dir("forward_compat");
  const SynthSpec spec = planted_spec(77);
  const MoEModel model = generate_model(spec);
  const fs::path path = dir.file("m.rmt");
  save_model(model, path);
  patch_header(path, [](nlohmann::ordered_json& h) {
    h["future_section"] = {{"a", 1}, {"b", "two"}};
    h["comment"] = "added by a newer writer";
  });
  const MoEModel back = load_model(path);
  CHECK(same_expert(back.layers[0].experts[0], model.layers[0].experts[0]));
}

TEST_CASE("tampered manifests cannot smuggle mismatched blobs") {
  TempDir dir("tamper");
  const SynthSpec spec = planted_spec(88);
  CompressionConfig coo;
  coo.sparse_format = SparseFormat::COO;
  coo.index_width = IndexWidth::I16;
  CompressedModel cm;
  cm.layers.push_back(
      compress_layer(generate(spec), Method::ResMoE_UP, 0.25, coo));
  const fs::path path = dir.file("a.rmz");
  save_compressed(cm, path);

  SUBCASE("index width widened without re-encoding the blobs") {
    patch_header(path, [](nlohmann::ordered_json& h) {
      h["layer_info"][0]["index_width"] = 32;
    });
    CHECK_THROWS_AS(load_compressed(path), TruncatedFileError);
  }
  SUBCASE("tensor table dtype contradicts the byte length") {
    patch_header(path, [](nlohmann::ordered_json& h) {
      h["tensors"]["L0.E0.vals"]["dtype"] = "u16";
    });
    CHECK_THROWS_AS(load_compressed(path), TruncatedFileError);
  }
  SUBCASE("overlapping tensor offsets are rejected") {
    patch_header(path, [](nlohmann::ordered_json& h) {
      auto& table = h["tensors"];
      auto second = table.begin();
      ++second;
      (*second)["offset"] = 0;
    });
    CHECK_THROWS_AS(load_compressed(path), IoError);
  }
}
