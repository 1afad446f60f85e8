#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ssnn/tensor.hpp"

namespace ssnn {

// splitmix64; used to derive independent stream seeds from (seed, tags).
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t hash_str(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
    return mix64(mix64(base ^ mix64(a)) ^ mix64(b + 0x6a09e667f3bcc909ULL));
}

// Deterministic RNG: mt19937_64 bit source with hand-rolled transforms, so the
// produced streams do not depend on the standard library's distribution
// implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    // uniform in [0, 1)
    double uniform() {
        return (gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller; two uniforms per draw, no cached spare.
    double normal() {
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double gumbel() {
        double u = uniform();
        if (u <= 0.0) u = 0x1.0p-53;
        return -std::log(-std::log(u) + 1e-300);
    }

    std::vector<double> gumbel_vec(int n) {
        std::vector<double> g(static_cast<size_t>(n));
        for (double& x : g) x = gumbel();
        return g;
    }

    // index in [0, n) sampled from normalized log-probabilities
    int categorical_logp(const double* logp, int n) {
        double u = uniform();
        double acc = 0.0;
        for (int i = 0; i < n; ++i) {
            acc += std::exp(logp[i]);
            if (u < acc) return i;
        }
        return n - 1;  // guard against rounding in the tail
    }

    int uniform_int(int n) { return static_cast<int>(gen_() % static_cast<std::uint64_t>(n)); }

    std::uint64_t raw() { return gen_(); }

private:
    std::mt19937_64 gen_;
};

}  // namespace ssnn
