#pragma once

#include <cstdint>
#include <random>

namespace enercast {

/// Seeded random source with all variate transforms implemented in-house so
/// streams are reproducible bit-for-bit regardless of the standard library.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    /// Uniform in (0, 1].
    double uniform_pos() { return 1.0 - uniform(); }

    /// Standard normal (Box-Muller, no spare caching).
    double normal();
    double normal(double mean, double sd) { return mean + sd * normal(); }

    /// Gamma(shape, 1) by Marsaglia-Tsang, boosted for shape < 1.
    double gamma(double shape);

    double beta(double a, double b);

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);

    /// Independent substream for parallel or per-fold work.
    Rng fork(std::uint64_t stream_id) const;

    static std::uint64_t mix(std::uint64_t seed, std::uint64_t stream_id);

  private:
    std::mt19937_64 gen_;
};

}  // namespace enercast
