#pragma once

#include <cstdint>
#include <random>

namespace pare {

// splitmix64 finalizer over (seed, stream); used to derive independent
// substreams from one configured seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

// Seeded generator with hand-rolled distributions so sequences do not depend
// on the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  double uniform();  // [0, 1)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  std::size_t index(std::size_t n);  // [0, n)

 private:
  std::mt19937_64 engine_;
};

}  // namespace pare
