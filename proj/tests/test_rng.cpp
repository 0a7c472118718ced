#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "fbsim/rng.hpp"

using namespace fbsim;

TEST_CASE("splitmix64 matches the reference sequence") {
    // Reference outputs for state 0 from the original splitmix64.c.
    std::uint64_t s = 0;
    CHECK(splitmix64(s) == 0xe220a8397b1dcdafull);
    CHECK(splitmix64(s) == 0x6e789e6aa1b965f4ull);
    CHECK(splitmix64(s) == 0x06c45d188009454full);
}

TEST_CASE("mt19937_64 engine is the standard one") {
    // [rand.predef]: the 10000th value of the default-seeded engine.
    std::mt19937_64 gen;
    std::mt19937_64::result_type last = 0;
    for (int i = 0; i < 10000; ++i) last = gen();
    CHECK(last == 9981545732273789042ull);
}

TEST_CASE("derive_seed is deterministic and order-sensitive") {
    CHECK(derive_seed({1, 2, 3}) == derive_seed({1, 2, 3}));
    CHECK(derive_seed({1, 2, 3}) != derive_seed({3, 2, 1}));
    CHECK(derive_seed({1, 2}) != derive_seed({1, 3}));
    CHECK(derive_seed({7}) != derive_seed({7, 0}));

    // Stream separation: nearby tuples give well-spread seeds.
    std::set<std::uint64_t> seen;
    for (std::uint64_t c = 0; c < 64; ++c)
        for (std::uint64_t r = 0; r < 64; ++r) seen.insert(derive_seed({42, 1, c, r}));
    CHECK(seen.size() == 64 * 64);
}

TEST_CASE("uniform01 lies in [0,1) and is reproducible") {
    Rng a(123), b(123);
    for (int i = 0; i < 1000; ++i) {
        double x = a.uniform01();
        CHECK(x >= 0.0);
        CHECK(x < 1.0);
        CHECK(x == b.uniform01());
    }
    Rng c(7);
    double sum = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) sum += c.uniform01();
    CHECK(std::abs(sum / n - 0.5) < 0.005); // ~5.5 sigma
}

TEST_CASE("index is unbiased across a small range") {
    Rng r(99);
    std::vector<int> counts(7, 0);
    const int n = 70000;
    for (int i = 0; i < n; ++i) {
        std::uint64_t k = r.index(7);
        REQUIRE(k < 7);
        ++counts[static_cast<std::size_t>(k)];
    }
    for (int c : counts) CHECK(std::abs(c - 10000) < 500); // ~5 sigma
    CHECK(r.index(1) == 0);
}

TEST_CASE("normal has the right first two moments") {
    Rng r(2024);
    const int n = 200000;
    double s1 = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
        double x = r.normal();
        s1 += x;
        s2 += x * x;
    }
    double mean = s1 / n;
    double var = s2 / n - mean * mean;
    CHECK(std::abs(mean) < 0.01);
    CHECK(std::abs(var - 1.0) < 0.02);
    CHECK(r.normal(10.0, 0.0) == 10.0);
}

TEST_CASE("gamma moments match alpha for shapes above and below 1") {
    for (double alpha : {0.3, 0.7, 1.0, 2.5, 8.0}) {
        Rng r(static_cast<std::uint64_t>(alpha * 1000));
        const int n = 200000;
        double s1 = 0.0, s2 = 0.0;
        for (int i = 0; i < n; ++i) {
            double x = r.gamma(alpha);
            REQUIRE(x > 0.0);
            s1 += x;
            s2 += x * x;
        }
        double mean = s1 / n;
        double var = s2 / n - mean * mean;
        // Gamma(alpha,1): mean = var = alpha.
        CHECK(std::abs(mean - alpha) < 0.05 * std::max(1.0, alpha));
        CHECK(std::abs(var - alpha) < 0.10 * std::max(1.0, alpha));
    }
}

TEST_CASE("dirichlet draws live on the simplex") {
    Rng r(31337);
    std::vector<double> x(8);
    std::vector<double> accum(8, 0.0);
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        r.dirichlet_symmetric(0.5, x);
        double sum = std::accumulate(x.begin(), x.end(), 0.0);
        REQUIRE(std::abs(sum - 1.0) < 1e-12);
        for (double v : x) REQUIRE(v >= 0.0);
        for (std::size_t j = 0; j < 8; ++j) accum[j] += x[j];
    }
    // Symmetric: every category has mean 1/8.
    for (double a : accum) CHECK(std::abs(a / n - 0.125) < 0.01);
}

TEST_CASE("dirichlet with small beta concentrates mass") {
    Rng r(5);
    std::vector<double> x(8);
    double top = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        r.dirichlet_symmetric(0.05, x);
        top += *std::max_element(x.begin(), x.end());
    }
    // E[max share] for Dir(0.05) over 8 categories is 0.820 (numpy,
    // 20k draws); allow a generous statistical margin.
    CHECK(std::abs(top / n - 0.820) < 0.015);
}

TEST_CASE("shuffle is a uniform-ish permutation and reproducible") {
    Rng a(77), b(77);
    std::vector<int> v(20);
    std::iota(v.begin(), v.end(), 0);
    std::vector<int> w = v;
    a.shuffle(v);
    b.shuffle(w);
    CHECK(v == w);
    std::vector<int> sorted = v;
    std::sort(sorted.begin(), sorted.end());
    std::vector<int> ident(20);
    std::iota(ident.begin(), ident.end(), 0);
    CHECK(sorted == ident);

    // Position histogram of element 0 over many shuffles.
    std::vector<int> hist(5, 0);
    Rng r(11);
    const int n = 50000;
    for (int i = 0; i < n; ++i) {
        std::vector<int> u = {0, 1, 2, 3, 4};
        r.shuffle(u);
        for (int p = 0; p < 5; ++p)
            if (u[static_cast<std::size_t>(p)] == 0) ++hist[static_cast<std::size_t>(p)];
    }
    for (int c : hist) CHECK(std::abs(c - 10000) < 500);
}
