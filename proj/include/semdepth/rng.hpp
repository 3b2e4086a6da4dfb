#pragma once

#include <cstdint>
#include <vector>

namespace semdepth {

// Splitmix64 counter-based generator. Chosen over std::mt19937 so that every
// stream (scene sampling, textures, initialization, shuffling) is reproducible
// bit-for-bit from its seed independent of the standard library.
//
// Reference vectors (state starts at the seed, successive next() calls):
//   seed 0    -> e220a8397b1dcdaf, 6e789e6aa1b965f4, 06c45d188009454f
//   seed 42   -> 5c400a4bbd693bc2, 2eb71dcebca836df, acf48eba44b4d71b
// These are pinned in the rng tests.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi] inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    return lo + static_cast<std::int64_t>(next() % static_cast<std::uint64_t>(
                                                       hi - lo + 1));
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Derives an independent stream for a labeled sub-task.
  SplitMix64 fork(std::uint64_t tag) {
    SplitMix64 mixer(state_ ^ (0xA0761D6478BD642Full * (tag + 1)));
    return SplitMix64(mixer.next());
  }

 private:
  std::uint64_t state_;
};

// Stateless hash of a lattice coordinate, used by procedural textures.
inline std::uint64_t hash_coords(std::uint64_t seed, std::int64_t x,
                                 std::int64_t y) {
  SplitMix64 g(seed ^ (0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(x)) ^
               (0xC2B2AE3D27D4EB4Full * static_cast<std::uint64_t>(y)));
  return g.next();
}

// Deterministic in-place Fisher-Yates shuffle.
template <class T>
void deterministic_shuffle(std::vector<T>& items, SplitMix64& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::size_t j =
        static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace semdepth
