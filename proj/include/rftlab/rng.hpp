#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace rftlab {

// Deterministic random source. The engine (mt19937_64) and every
// distribution here are fully specified, so a given seed produces the
// same stream on every platform. Standard-library distributions are
// implementation-defined and deliberately not used.
//
// Independent sub-streams are derived by name or index from the seed a
// generator was constructed with, so consuming one stream never shifts
// another.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();

    /// Uniform in [0,1), 53-bit resolution.
    double uniform();
    double uniform(double lo, double hi);

    /// Unbiased integer in [0,n). n must be positive.
    int uniform_int(int n);

    /// Standard normal via Box-Muller.
    double gaussian();

    /// Independent stream derived from this generator's seed and a name.
    Rng sub(std::string_view name) const;
    Rng sub(std::uint64_t index) const;

    /// Fisher-Yates shuffle (std::shuffle is not portable across stdlibs).
    void shuffle(std::vector<int>& v);

    std::uint64_t seed() const { return seed_; }

private:
    std::uint64_t seed_;
    std::mt19937_64 eng_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view s);

}  // namespace rftlab
