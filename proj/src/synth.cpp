#include "resmoe/synth.hpp"

#include <nlohmann/json.hpp>

#include "resmoe/rng.hpp"

namespace resmoe {

using nlohmann::ordered_json;

std::string to_string(SynthFamily f) {
  switch (f) {
    case SynthFamily::IIDGaussian: return "iid_gaussian";
    case SynthFamily::Planted: return "planted";
    case SynthFamily::CopyPaste: return "copy_paste";
  }
  return "iid_gaussian";
}

SynthFamily synth_family_from_string(const std::string& s) {
  if (s == "iid_gaussian") return SynthFamily::IIDGaussian;
  if (s == "planted") return SynthFamily::Planted;
  if (s == "copy_paste") return SynthFamily::CopyPaste;
  throw ValidationError("unknown family '" + s + "'");
}

void SynthSpec::validate() const {
  if (n_experts < 1) throw ValidationError("synth spec: n_experts must be >= 1");
  if (p < 1) throw ValidationError("synth spec: p must be >= 1");
  if (p_inner < 1) throw ValidationError("synth spec: p_inner must be >= 1");
  if (top_k < 1 || top_k > n_experts)
    throw ValidationError("synth spec: top_k must be in [1, n_experts]");
  if (layers < 1) throw ValidationError("synth spec: layers must be >= 1");
  if (sigma < 0) throw ValidationError("synth spec: sigma must be >= 0");
  if (base_sigma < 0) throw ValidationError("synth spec: base_sigma must be >= 0");
  if (noise_sigma < 0) throw ValidationError("synth spec: noise_sigma must be >= 0");
  if (perturb_sigma < 0)
    throw ValidationError("synth spec: perturb_sigma must be >= 0");
}

std::string SynthSpec::to_json() const {
  ordered_json j;
  j["seed"] = seed;
  j["n_experts"] = n_experts;
  j["p"] = p;
  j["p_inner"] = p_inner;
  j["top_k"] = top_k;
  j["layers"] = layers;
  j["kind"] = to_string(kind);
  j["activation"] = to_string(activation);
  j["family"] = to_string(family);
  j["sigma"] = sigma;
  j["base_sigma"] = base_sigma;
  j["noise_sigma"] = noise_sigma;
  j["permute"] = permute;
  j["perturb_sigma"] = perturb_sigma;
  return j.dump();
}

SynthSpec SynthSpec::from_json(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const ordered_json::parse_error& e) {
    throw JsonError(std::string("synth spec: invalid JSON: ") + e.what());
  }
  SynthSpec s;
  auto require = [&](const char* field) -> const ordered_json& {
    auto it = j.find(field);
    if (it == j.end())
      throw ValidationError(std::string("synth spec: missing field '") +
                            field + "'");
    return *it;
  };
  auto get_count = [&](const char* field, std::size_t fallback,
                       bool required) -> std::size_t {
    auto it = j.find(field);
    if (it == j.end()) {
      if (required) require(field);
      return fallback;
    }
    if (!it->is_number_unsigned())
      throw ValidationError(std::string("synth spec: field '") + field +
                            "' must be a non-negative integer");
    return it->get<std::size_t>();
  };
  auto get_scalar = [&](const char* field, double fallback) {
    auto it = j.find(field);
    if (it == j.end()) return fallback;
    if (!it->is_number())
      throw ValidationError(std::string("synth spec: field '") + field +
                            "' must be a number");
    return it->get<double>();
  };

  s.seed = get_count("seed", 0, false);
  s.n_experts = get_count("n_experts", 0, true);
  s.p = get_count("p", 0, true);
  s.p_inner = get_count("p_inner", 0, true);
  s.top_k = get_count("top_k", 1, false);
  s.layers = get_count("layers", 1, false);
  if (auto it = j.find("kind"); it != j.end())
    s.kind = expert_kind_from_string(it->get<std::string>());
  if (auto it = j.find("activation"); it != j.end())
    s.activation = activation_from_string(it->get<std::string>());
  s.family = synth_family_from_string(require("family").get<std::string>());
  s.sigma = get_scalar("sigma", s.sigma);
  s.base_sigma = get_scalar("base_sigma", s.base_sigma);
  s.noise_sigma = get_scalar("noise_sigma", s.noise_sigma);
  if (auto it = j.find("permute"); it != j.end()) {
    if (!it->is_boolean())
      throw ValidationError("synth spec: field 'permute' must be a boolean");
    s.permute = it->get<bool>();
  }
  s.perturb_sigma = get_scalar("perturb_sigma", s.perturb_sigma);
  s.validate();
  return s;
}

namespace {

double f32(double v) { return static_cast<double>(static_cast<float>(v)); }

void fill_normal(DenseMatrix& m, SplitMix64& rng, double sigma) {
  for (double& v : m.data) v = f32(sigma * rng.next_normal());
}

void fill_normal(Vector& v, SplitMix64& rng, double sigma) {
  for (double& x : v) x = f32(sigma * rng.next_normal());
}

ExpertWeights empty_expert(const SynthSpec& spec) {
  ExpertWeights e;
  e.kind = spec.kind;
  e.activation = spec.activation;
  e.w1 = DenseMatrix(spec.p_inner, spec.p);
  e.b1.assign(spec.p_inner, 0.0);
  e.w2 = DenseMatrix(spec.p, spec.p_inner);
  e.b2.assign(spec.p, 0.0);
  if (spec.kind == ExpertKind::Gated) {
    e.w3 = DenseMatrix(spec.p_inner, spec.p);
    e.b3.assign(spec.p_inner, 0.0);
  }
  return e;
}

void fill_expert(ExpertWeights& e, SplitMix64& rng, double sigma) {
  fill_normal(e.w1, rng, sigma);
  fill_normal(e.b1, rng, sigma);
  fill_normal(e.w2, rng, sigma);
  fill_normal(e.b2, rng, sigma);
  if (e.kind == ExpertKind::Gated) {
    fill_normal(e.w3, rng, sigma);
    fill_normal(e.b3, rng, sigma);
  }
}

void add_noise(ExpertWeights& e, SplitMix64& rng, double sigma) {
  auto bump_m = [&](DenseMatrix& m) {
    for (double& v : m.data) v = f32(v + sigma * rng.next_normal());
  };
  auto bump_v = [&](Vector& v) {
    for (double& x : v) x = f32(x + sigma * rng.next_normal());
  };
  bump_m(e.w1);
  bump_v(e.b1);
  bump_m(e.w2);
  bump_v(e.b2);
  if (e.kind == ExpertKind::Gated) {
    bump_m(e.w3);
    bump_v(e.b3);
  }
}

// Permute hidden units: rows of w1/b1 (and w3/b3) together with columns of
// w2. Output-preserving by exchangeability.
ExpertWeights permute_units(const ExpertWeights& e,
                            const std::vector<std::uint32_t>& perm) {
  ExpertWeights out = e;
  for (std::size_t i = 0; i < perm.size(); ++i) {
    const std::size_t t = perm[i];
    for (std::size_t jj = 0; jj < e.w1.cols; ++jj)
      out.w1.at(t, jj) = e.w1.at(i, jj);
    out.b1[t] = e.b1[i];
    for (std::size_t jj = 0; jj < e.w2.rows; ++jj)
      out.w2.at(jj, t) = e.w2.at(jj, i);
    if (e.kind == ExpertKind::Gated) {
      for (std::size_t jj = 0; jj < e.w3.cols; ++jj)
        out.w3.at(t, jj) = e.w3.at(i, jj);
      out.b3[t] = e.b3[i];
    }
  }
  return out;
}

std::vector<std::uint32_t> random_permutation(std::size_t n, SplitMix64& rng) {
  std::vector<std::uint32_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = static_cast<std::uint32_t>(i);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = rng.next_below(i);
    std::swap(perm[i - 1], perm[j]);
  }
  return perm;
}

} // namespace

MoELayer generate_layer(const SynthSpec& spec, std::size_t layer_index) {
  spec.validate();
  SplitMix64 layer_rng = SplitMix64(spec.seed).derive(layer_index);

  MoELayer layer;
  layer.top_k = spec.top_k;
  layer.gate = DenseMatrix(spec.n_experts, spec.p);
  SplitMix64 gate_rng = layer_rng.derive(0);
  fill_normal(layer.gate, gate_rng, 1.0);

  ExpertWeights base = empty_expert(spec);
  if (spec.family != SynthFamily::IIDGaussian) {
    SplitMix64 base_rng = layer_rng.derive(1);
    fill_expert(base, base_rng, spec.base_sigma);
  }

  layer.experts.reserve(spec.n_experts);
  for (std::size_t k = 0; k < spec.n_experts; ++k) {
    SplitMix64 rng = layer_rng.derive(2 + k);
    switch (spec.family) {
      case SynthFamily::IIDGaussian: {
        ExpertWeights e = empty_expert(spec);
        fill_expert(e, rng, spec.sigma);
        layer.experts.push_back(std::move(e));
        break;
      }
      case SynthFamily::Planted: {
        ExpertWeights e = base;
        if (spec.permute)
          e = permute_units(base, random_permutation(spec.p_inner, rng));
        add_noise(e, rng, spec.noise_sigma);
        layer.experts.push_back(std::move(e));
        break;
      }
      case SynthFamily::CopyPaste: {
        ExpertWeights e = base;
        add_noise(e, rng, spec.perturb_sigma);
        layer.experts.push_back(std::move(e));
        break;
      }
    }
  }
  layer.validate();
  return layer;
}

MoELayer generate(const SynthSpec& spec) { return generate_layer(spec, 0); }

MoEModel generate_model(const SynthSpec& spec) {
  spec.validate();
  MoEModel model;
  model.origin_spec_json = spec.to_json();
  model.layers.reserve(spec.layers);
  for (std::size_t l = 0; l < spec.layers; ++l)
    model.layers.push_back(generate_layer(spec, l));
  return model;
}

} // namespace resmoe
