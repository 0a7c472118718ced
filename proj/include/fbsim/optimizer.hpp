#pragma once

#include <cstdint>
#include <vector>

#include "fbsim/param_vector.hpp"

namespace fbsim {

enum class OptimizerMode { sgd, adam };

struct OptimizerConfig {
    OptimizerMode mode = OptimizerMode::adam;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0; // coupled L2 on trainable coordinates
};

// Per-client optimizer state. Strategy corrections (prox terms, control
// variates, drift penalties) are added to the gradient *before* step(), so
// Adam's moment transform applies to the corrected gradient.
class Optimizer {
public:
    Optimizer() = default;
    explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) {}

    void reset(std::size_t n) {
        m_.assign(n, 0.0);
        v_.assign(n, 0.0);
        t_ = 0;
    }

    // Applies one update over trainable coordinates. Throws NumericError if
    // the gradient contains a non-finite value.
    void step(ParamVector& params, const ParamVector& grad, double eta);

    const OptimizerConfig& config() const { return cfg_; }

private:
    OptimizerConfig cfg_;
    std::vector<double> m_, v_;
    std::uint64_t t_ = 0;
};

} // namespace fbsim
