#include "duet/types.hpp"

#include "duet/error.hpp"

#include <cmath>

namespace duet {

std::uint64_t split_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

double Rng::normal() {
    // u1 in (0,1] so the log is finite.
    double u1 = 1.0 - uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

std::size_t Rng::index(std::size_t n) {
    if (n == 0) throw ConfigError("Rng::index: n must be positive");
    // Multiply-shift map of 64 random bits onto [0, n); bias is < 2^-53 and
    // the mapping is the same everywhere.
    return static_cast<std::size_t>(uniform() * static_cast<double>(n));
}

}  // namespace duet
