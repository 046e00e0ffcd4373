#pragma once

// Deterministic random source. Same seed, same call sequence, same results on
// every platform. std::mt19937_64 output is fully specified by the standard;
// the distributions in <random> are not, so the draws below are hand rolled:
//   uniform index   rejection sampling on the top of the 64-bit range
//   double [0,1)    top 53 bits scaled by 2^-53
//   gaussian        Box-Muller on two uniform doubles
//   shuffle         Fisher-Yates using uniform_index
// This contract is part of the library interface; changing any of it changes
// every seeded artifact.

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace sattn {

class Rng {
  public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    /// Uniform integer in [0, bound). Unbiased via rejection.
    std::uint64_t uniform_index(std::uint64_t bound) {
        if (bound == 0) throw std::invalid_argument("uniform_index: bound must be positive");
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        std::uint64_t x;
        do {
            x = gen_();
        } while (x >= limit);
        return x % bound;
    }

    /// Uniform double in [0, 1) with 53 bits of precision.
    double next_double() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    /// Standard normal via Box-Muller. Consumes exactly two uniforms per pair;
    /// the spare value is cached for the next call.
    double gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1;
        do {
            u1 = next_double();
        } while (u1 == 0.0);
        const double u2 = next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.141592653589793238462643383279502884 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    /// Fisher-Yates. Every permutation equally likely.
    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(uniform_index(i));
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

/// splitmix64 finalizer, used to derive independent stream seeds from
/// (master seed, stream indices) without correlated low bits.
inline std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0) {
    return mix_seed(mix_seed(master ^ (a * 0x9e3779b97f4a7c15ull)) ^ b);
}

}  // namespace sattn
