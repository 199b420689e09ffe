#include "rftlab/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace rftlab {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

Rng::Rng(std::uint64_t seed) : seed_(seed), eng_(seed) {}

std::uint64_t Rng::next_u64() {
    has_spare_ = false;  // sub-draws must not interleave with a cached pair
    return eng_();
}

double Rng::uniform() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform();
}

int Rng::uniform_int(int n) {
    if (n <= 0) throw std::invalid_argument("Rng::uniform_int: n must be positive");
    const std::uint64_t un = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    std::uint64_t x;
    do {
        x = eng_();
    } while (x >= limit);
    return static_cast<int>(x % un);
}

double Rng::gaussian() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    // u in (0,1] keeps the log finite.
    const double u = 1.0 - uniform();
    const double v = uniform();
    const double r = std::sqrt(-2.0 * std::log(u));
    const double two_pi_v = 2.0 * 3.14159265358979323846 * v;
    spare_ = r * std::sin(two_pi_v);
    has_spare_ = true;
    return r * std::cos(two_pi_v);
}

Rng Rng::sub(std::string_view name) const {
    return Rng(splitmix64(seed_ ^ fnv1a64(name)));
}

Rng Rng::sub(std::uint64_t index) const {
    return Rng(splitmix64(seed_ ^ splitmix64(index + 0x51ed2701)));
}

void Rng::shuffle(std::vector<int>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
        const int j = uniform_int(i + 1);
        std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(j)]);
    }
}

}  // namespace rftlab
