#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

namespace biasknn {

// All randomness in this library flows through SplitMix64 (Steele, Lea &
// Flood 2014). The generator is fully defined here, in integer arithmetic,
// so sampled datastores and synthetic fixtures are identical across
// platforms and language bindings.
inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

constexpr std::uint64_t avalanche(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Derives a child stream seed from (seed, stream-id). Used to key
// per-label sampling streams, per-example synthetic streams, etc.
constexpr std::uint64_t combine(std::uint64_t seed, std::uint64_t stream) {
  return avalanche(seed + kGolden + stream);
}

// Stream tags keep unrelated substreams of one user seed decorrelated.
inline constexpr std::uint64_t kStreamSynthetic = 0x53594E;  // "SYN"
inline constexpr std::uint64_t kStreamIclOrder = 0x4F5244;   // "ORD"
inline constexpr std::uint64_t kStreamIclPool = 0x504F4F4C;  // "POOL"

class SplitMix64 {
 public:
  explicit constexpr SplitMix64(std::uint64_t seed) : state_(seed) {}

  constexpr std::uint64_t next() {
    state_ += kGolden;
    return avalanche(state_);
  }

  // Uniform double in [0, 1), 53 mantissa bits.
  double next_double() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n) via Lemire's multiply-shift. n must be > 0.
  std::uint64_t bounded(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next()) * n) >> 64);
  }

 private:
  std::uint64_t state_;
};

// N(0, sigma^2) truncated at +/- 3 sigma (Box-Muller, rejection on the
// tail). Truncation keeps the synthetic fixture's geometric bounds exact.
inline double truncated_gaussian(SplitMix64& gen, double sigma) {
  if (sigma <= 0.0) return 0.0;
  constexpr double kTwoPi = 6.283185307179586476925286766559;
  for (;;) {
    double u1 = gen.next_double();
    double u2 = gen.next_double();
    if (u1 <= 0.0) continue;
    double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
    if (std::abs(z) <= 3.0) return z * sigma;
  }
}

// In-place Fisher-Yates shuffle driven by the portable generator.
template <typename T>
void fisher_yates(std::vector<T>& values, SplitMix64& gen) {
  for (std::size_t i = values.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(gen.bounded(i));
    std::swap(values[i - 1], values[j]);
  }
}

}  // namespace biasknn
