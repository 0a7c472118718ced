#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <vector>

namespace fbsim {

// splitmix64 step; used to fold (seed, client, round, purpose...) tuples
// into well-mixed stream seeds.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// splitmix64's output finalizer: a bijection on u64.
inline std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Derive one stream seed from a list of parts. Order-sensitive. Every
// absorb step composes bijections, so distinct (client, round, tag) tuples
// collide only by 64-bit birthday accident — not structurally (additive
// hash_combine-style folds alias nearby small integers).
inline std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts) {
    std::uint64_t state = 0x8f1bbcdcbfa53e0bull;
    for (std::uint64_t p : parts)
        state = mix64((state + 0x9e3779b97f4a7c15ull) ^ mix64(p + 0x632be59bd9b4e019ull));
    return state;
}

// Deterministic RNG stream. The engine (mt19937_64) has a sequence pinned
// by the C++ standard, and every distribution below is hand-rolled, so a
// given seed yields identical draws on every platform/stdlib.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // [0, 1) with 53 random bits.
    double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Uniform integer in [0, n). Rejection sampling, unbiased.
    std::uint64_t index(std::uint64_t n);

    // Standard normal via Box-Muller (cached spare).
    double normal();

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Gamma(alpha, 1) via Marsaglia-Tsang; boost trick for alpha < 1.
    double gamma(double alpha);

    // Symmetric Dirichlet(beta) over out.size() categories.
    void dirichlet_symmetric(double beta, std::span<double> out);

    // In-place Fisher-Yates.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(index(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

} // namespace fbsim
