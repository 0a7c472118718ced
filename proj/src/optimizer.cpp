#include "fbsim/optimizer.hpp"

#include <cmath>
#include <string>

namespace fbsim {

void Optimizer::step(ParamVector& params, const ParamVector& grad, double eta) {
    check_same_layout(params, grad, "Optimizer::step");
    if (m_.size() != params.size()) reset(params.size());

    const double* g = grad.values().data();
    for_each_trainable(grad.segments(), [&](const Segment& s) {
        for (std::size_t i = s.offset; i < s.offset + s.length; ++i) {
            if (!std::isfinite(g[i]))
                throw NumericError("non-finite gradient in segment '" + s.name + "' at index " +
                                   std::to_string(i - s.offset));
        }
    });

    double* p = params.values().data();
    if (cfg_.mode == OptimizerMode::sgd) {
        for_each_trainable(params.segments(), [&](const Segment& s) {
            for (std::size_t i = s.offset; i < s.offset + s.length; ++i) {
                double gi = g[i] + cfg_.weight_decay * p[i];
                p[i] -= eta * gi;
            }
        });
        return;
    }

    ++t_;
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for_each_trainable(params.segments(), [&](const Segment& s) {
        for (std::size_t i = s.offset; i < s.offset + s.length; ++i) {
            double gi = g[i] + cfg_.weight_decay * p[i];
            m_[i] = b1 * m_[i] + (1.0 - b1) * gi;
            v_[i] = b2 * v_[i] + (1.0 - b2) * gi * gi;
            double mhat = m_[i] / c1;
            double vhat = v_[i] / c2;
            p[i] -= eta * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    });
}

} // namespace fbsim
