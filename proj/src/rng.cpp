#include "fbsim/rng.hpp"

#include <cmath>

#include "fbsim/errors.hpp"

namespace fbsim {

std::uint64_t Rng::index(std::uint64_t n) {
    if (n == 0) throw InvalidArgument("Rng::index: n must be positive");
    // Reject the tail of the 64-bit range that would bias small residues.
    const std::uint64_t limit = std::uint64_t(-1) - std::uint64_t(-1) % n;
    std::uint64_t x;
    do {
        x = gen_();
    } while (x >= limit);
    return x % n;
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    // Box-Muller. u1 in (0,1] so the log is finite.
    double u1 = 1.0 - uniform01();
    double u2 = uniform01();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

double Rng::gamma(double alpha) {
    if (!(alpha > 0.0)) throw InvalidArgument("Rng::gamma: alpha must be positive");
    if (alpha < 1.0) {
        // Gamma(a) = Gamma(a+1) * U^(1/a)
        double u = 1.0 - uniform01(); // avoid pow(0, ...)
        return gamma(alpha + 1.0) * std::pow(u, 1.0 / alpha);
    }
    // Marsaglia-Tsang squeeze.
    const double d = alpha - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x, v;
        do {
            x = normal();
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        double u = uniform01();
        if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
        if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
}

void Rng::dirichlet_symmetric(double beta, std::span<double> out) {
    if (out.empty()) throw InvalidArgument("Rng::dirichlet_symmetric: empty output");
    double sum = 0.0;
    for (double& x : out) {
        x = gamma(beta);
        sum += x;
    }
    if (sum <= 0.0) {
        // All-zero draw is astronomically unlikely but not impossible with
        // tiny beta underflow; fall back to uniform.
        for (double& x : out) x = 1.0 / static_cast<double>(out.size());
        return;
    }
    for (double& x : out) x /= sum;
}

} // namespace fbsim
