#pragma once

#include <cstdint>
#include <string>

namespace resmoe {

// Portable deterministic generator (splitmix64). The platform default
// engines are avoided on purpose: generated models must be bit-identical
// across standard libraries, and the algorithm name below is recorded in
// file metadata so golden files stay checkable.
inline constexpr const char* kRngId = "splitmix64-polar/1";

class SplitMix64 {
public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1): 53 high bits.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n) by rejection, bias-free.
  std::uint64_t next_below(std::uint64_t n);

  // Standard normal via Marsaglia's polar method.
  double next_normal();

  // Stable sub-stream (e.g. one per expert) so parallel generation does
  // not depend on draw order.
  SplitMix64 derive(std::uint64_t stream) const {
    SplitMix64 mix(state_ ^ (0x6a09e667f3bcc909ULL + stream * 0x9e3779b97f4a7c15ULL));
    mix.next_u64();
    return mix;
  }

private:
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

} // namespace resmoe
