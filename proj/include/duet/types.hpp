#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <vector>

namespace duet {

// All training math runs in 64-bit reals. Matrices are dense and row-major;
// rows index items (audios or captions), columns index feature dimensions.
template <typename Scalar>
using MatX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Mat = MatX<double>;
using MatF = MatX<float>;
using Vec = Eigen::VectorXd;
using Index = Eigen::Index;

// splitmix64; used to derive independent seeds for sub-streams.
std::uint64_t split_seed(std::uint64_t seed, std::uint64_t stream);

// Deterministic random generator. mt19937_64 is pinned by the standard, and
// all value mappings below are hand-rolled, so the same seed produces the
// same stream on every platform and standard library.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next() { return gen_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller (fresh pair per call, no cached spare).
    double normal();

    // Uniform index in [0, n).
    std::size_t index(std::size_t n);

    // Fisher-Yates; std::shuffle is implementation-defined, this is not.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        if (v.size() < 2) return;
        for (std::size_t i = v.size() - 1; i > 0; --i) {
            std::swap(v[i], v[index(i + 1)]);
        }
    }

  private:
    std::mt19937_64 gen_;
};

}  // namespace duet
