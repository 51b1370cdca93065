#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace subseg {

/// Deterministic xoshiro256** stream, seeded through splitmix64.
///
/// The generator is fixed by definition so that independent implementations
/// reproduce identical streams:
///   state init: z = seed XOR (stream * 0x9E3779B97F4A7C15); four successive
///               splitmix64 outputs of z become s[0..3].
///   next_u64:   xoshiro256** step (Blackman/Vigna).
///   next_double: (next_u64() >> 11) * 2^-53            in [0,1)
///   next_float:  (next_u64() >> 40) * 2^-24            in [0,1)
///   below(n):    high 64 bits of next_u64() * n
///   normal():    Box-Muller, u1 = ((next_u64()>>11)+1)*2^-53 in (0,1],
///                u2 = next_double(), returns sqrt(-2 ln u1) * cos(2*pi*u2)
///
/// Test vectors live in tests/test_rng_tensor.cpp.
class Rng {
 public:
  explicit Rng(uint64_t seed, uint64_t stream = 0) {
    uint64_t z = seed ^ (stream * 0x9E3779B97F4A7C15ULL);
    for (auto& si : s_) {
      z += 0x9E3779B97F4A7C15ULL;
      uint64_t x = z;
      x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
      x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
      si = x ^ (x >> 31);
    }
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  float next_float() { return static_cast<float>(next_u64() >> 40) * 0x1.0p-24f; }

  /// Uniform integer in [0, n).
  uint64_t below(uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
    return static_cast<uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  bool coin() { return (next_u64() >> 63) != 0; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  double normal() {
    const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    const double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.141592653589793238462643 * u2);
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  uint64_t s_[4];
};

/// Named sub-stream ids so the independent RNG consumers of a run never
/// interleave. Streams are documented parts of the determinism contract.
namespace rng_stream {
constexpr uint64_t kSample = 1;     // per-sample synthetic generation
constexpr uint64_t kSplit = 2;      // fine/coarse index selection
constexpr uint64_t kInit = 3;       // parameter initialization
constexpr uint64_t kBatch = 4;      // batch composition + crops
constexpr uint64_t kHierMix = 5;    // transforms, pairing, alpha
}  // namespace rng_stream

}  // namespace subseg
