#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

namespace atriamap {

/// SplitMix64 finalizer. Used to derive independent stream seeds.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Seed-addressable random stream.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the C++
/// standard. Stream `s` of seed `k` is seeded with
/// splitmix64(splitmix64(k) ^ splitmix64(s + 1)). All conversions to
/// real-valued variates are done here rather than through <random>
/// distributions, whose algorithms are implementation-defined:
///   uniform()  = (u64 >> 11) * 2^-53, in [0, 1)
///   normal()   = Box-Muller cosine branch on two uniforms (one normal per call)
///   below(n)   = rejection sampling on the top bits, unbiased
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
      : engine_(splitmix64(splitmix64(seed) ^ splitmix64(stream + 1))) {}

  std::uint64_t next() { return engine_(); }
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  bool bernoulli(double p) { return uniform() < p; }
  std::size_t below(std::size_t n);

  /// Derives an independent child stream; does not advance this stream.
  static Rng stream(std::uint64_t seed, std::uint64_t stream_id) { return Rng(seed, stream_id); }

 private:
  std::mt19937_64 engine_;
};

/// Combines identifiers into a single derived seed.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                                    std::uint64_t c = 0) noexcept {
  return splitmix64(splitmix64(splitmix64(seed ^ 0x5851F42D4C957F2Dull) ^ a) ^ (b * 0x9E37ull)) ^
         splitmix64(c + 0x1234567ull);
}

}  // namespace atriamap
