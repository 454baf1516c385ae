#pragma once

#include <cstdint>
#include <string>

#include "resmoe/experts.hpp"

namespace resmoe {

enum class SynthFamily { IIDGaussian, Planted, CopyPaste };

std::string to_string(SynthFamily f);
SynthFamily synth_family_from_string(const std::string& s);

// Deterministic generator recipe. Every generated value is rounded to
// 32-bit float precision so the in-memory model equals its on-disk form
// exactly.
//   IIDGaussian: independent N(0, sigma^2) experts.
//   Planted:     one base expert; each expert is a row permutation of it
//                (when permute) plus N(0, noise_sigma^2).
//   CopyPaste:   base expert plus N(0, perturb_sigma^2), never permuted.
struct SynthSpec {
  std::uint64_t seed = 0;
  std::size_t n_experts = 0;
  std::size_t p = 0;
  std::size_t p_inner = 0;
  std::size_t top_k = 1;
  std::size_t layers = 1;
  ExpertKind kind = ExpertKind::TwoLayer;
  Activation activation = Activation::ReLU;
  SynthFamily family = SynthFamily::IIDGaussian;
  double sigma = 1.0;         // IIDGaussian
  double base_sigma = 1.0;    // Planted / CopyPaste base scale
  double noise_sigma = 0.01;  // Planted
  bool permute = true;        // Planted
  double perturb_sigma = 0.01; // CopyPaste

  void validate() const;
  std::string to_json() const;
  static SynthSpec from_json(const std::string& text);
};

struct MoEModel {
  std::vector<MoELayer> layers;
  std::string origin_spec_json; // generator echo, empty when unknown
};

MoELayer generate(const SynthSpec& spec);           // first layer
MoELayer generate_layer(const SynthSpec& spec, std::size_t layer_index);
MoEModel generate_model(const SynthSpec& spec);

} // namespace resmoe
