#pragma once

#include <cstdint>
#include <random>

namespace clab {

// SplitMix64 finalizer; derives independent child seeds from a master seed.
// Child stream i of master m is seeded with split_seed(m, i).
std::uint64_t split_seed(std::uint64_t master, std::uint64_t index);

// Deterministic random source. Uniform and normal variates are produced by
// explicit transforms of the raw 64-bit engine output so that sequences do
// not depend on the standard library's distribution implementations.
class Rng {
   public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }
    // [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    // Integer in [0, n).
    std::uint64_t below(std::uint64_t n);
    // Standard normal via Box-Muller; caches the second variate.
    double normal();

    Rng child(std::uint64_t index) { return Rng(split_seed(next_u64(), index)); }

   private:
    std::mt19937_64 engine_;
    double cached_ = 0.0;
    bool has_cached_ = false;
};

}  // namespace clab
