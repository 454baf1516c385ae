#pragma once

#include <filesystem>

#include "resmoe/compressed.hpp"
#include "resmoe/synth.hpp"

namespace resmoe {

// Dense model container (.rmt):
//   bytes 0..3   magic "RMT1"
//   bytes 4..7   header length, unsigned 32-bit little-endian
//   header       UTF-8 JSON: format_version, rng, shapes, generator echo,
//                tensor table name -> {dtype, shape, offset, byte_len}
//   payload      raw little-endian blobs, offsets relative to payload start
// Values are stored as 32-bit floats. Serialization is deterministic:
// fixed key order, fixed tensor order, no timestamps.
void save_model(const MoEModel& model, const std::filesystem::path& path);
MoEModel load_model(const std::filesystem::path& path);

// Compressed artifact container (.rmz): same envelope with magic "RMZ1".
// The manifest carries per-layer method, keep ratio, sparse encoding,
// barycenter settings, and group maps; blobs hold the center, per-expert
// residual arrays (indices then values), permutations (32-bit), b2 vectors,
// and the gate.
void save_compressed(const CompressedModel& model,
                     const std::filesystem::path& path);
CompressedModel load_compressed(const std::filesystem::path& path);

} // namespace resmoe
