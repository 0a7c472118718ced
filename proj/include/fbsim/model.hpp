#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "fbsim/param_vector.hpp"

namespace fbsim {

// MLP for multi-label classification: per hidden layer a linear map,
// optional batch norm, tanh; then a linear head producing one logit per
// class. Sigmoids live in the loss / evaluation, not in the network.
struct ModelSpec {
    std::size_t input_dim = 32;
    std::vector<std::size_t> hidden_dims = {64, 32};
    std::size_t num_classes = 8;
    std::vector<std::uint8_t> batch_norm = {1, 1}; // per hidden layer
    double bn_eps = 1e-5;
    double bn_momentum = 0.1;

    void validate() const;
    std::size_t param_count() const;
    std::size_t feature_dim() const {
        return hidden_dims.empty() ? input_dim : hidden_dims.back();
    }
    bool operator==(const ModelSpec&) const = default;
};

ModelSpec make_spec(std::size_t input_dim, std::vector<std::size_t> hidden,
                    std::size_t num_classes, bool bn);

// Builds the segment map for a spec: per hidden layer i
// "h{i}.weight" (out x in, row-major), "h{i}.bias", and when batch-normed
// "h{i}.bn_gamma", "h{i}.bn_beta", "h{i}.bn_running_mean",
// "h{i}.bn_running_var"; then "head.weight", "head.bias".
std::shared_ptr<const SegmentMap> build_segment_map(const ModelSpec& spec);

// Fresh parameters: Glorot-uniform weights, zero biases, gamma=1, beta=0,
// running mean 0, running var 1. Deterministic in seed.
ParamVector build_model(const ModelSpec& spec, std::uint64_t seed);

struct Batch {
    std::size_t n = 0;
    std::size_t input_dim = 0;
    std::size_t num_classes = 0;
    std::vector<double> features;      // n x input_dim, row-major
    std::vector<std::uint8_t> labels;  // n x num_classes, 0/1
};

struct ForwardTrace {
    struct Layer {
        bool bn = false;
        std::vector<double> pre;      // n x out, linear output
        std::vector<double> xhat;     // n x out, normalized (bn layers only)
        std::vector<double> inv_std;  // out, 1/sqrt(var+eps) used this pass
        std::vector<double> act;      // n x out, tanh output
    };
    bool train_mode = false;
    std::size_t n = 0;
    std::vector<double> input; // n x input_dim copy
    std::vector<Layer> layers;
    std::vector<double> logits; // n x num_classes

    // Penultimate activations (input when there are no hidden layers).
    std::span<const double> features() const {
        return layers.empty() ? std::span<const double>(input)
                              : std::span<const double>(layers.back().act);
    }
};

// Train-mode pass: normalizes with batch statistics (biased variance) and
// updates the running stats in params via EMA with spec.bn_momentum.
ForwardTrace forward_train(ParamVector& params, const ModelSpec& spec, const Batch& batch);

// Eval-mode pass: normalizes with the stored running statistics, mutates
// nothing. Chunking a batch does not change per-sample outputs.
ForwardTrace forward_eval(const ParamVector& params, const ModelSpec& spec, const Batch& batch);

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// log(1 + e^x) without overflow.
inline double softplus(double x) {
    return (x > 0 ? x : 0.0) + std::log1p(std::exp(-std::abs(x)));
}

struct BceResult {
    double loss = 0.0;
    std::vector<double> dlogits; // n x num_classes, d loss / d logit
};

// Binary cross-entropy from logits: summed over classes, averaged over the
// batch. Computed via softplus so saturated logits stay finite.
// dlogits[i][p] = (sigmoid(z[i][p]) - y[i][p]) / n.
BceResult bce_with_logits(std::span<const double> logits, const Batch& batch);

// Probability-space BCE (for externally produced probabilities); clamps
// probs to [1e-12, 1 - 1e-12].
double bce_from_probs(std::span<const double> probs, std::span<const std::uint8_t> labels,
                      std::size_t n, std::size_t num_classes);

// Gradient of a scalar loss with d loss / d logits given. Requires a
// train-mode trace (batch-norm backward needs batch statistics); throws
// InvalidArgument on an eval trace. Running-stat segments get zero grad.
ParamVector backward(const ParamVector& params, const ModelSpec& spec, const ForwardTrace& trace,
                     std::span<const double> dlogits);

// Gradient of a scalar loss whose dependence on the parameters flows only
// through the penultimate features. Accepts train or eval traces; the eval
// path treats running stats as constants.
ParamVector backward_from_features(const ParamVector& params, const ModelSpec& spec,
                                   const ForwardTrace& trace,
                                   std::span<const double> dfeatures);

// Central-difference gradient oracle over trainable coordinates; epsilon
// must be positive. Non-trainable coordinates get zero.
ParamVector finite_diff_grad(const ParamVector& params,
                             const std::function<double(const ParamVector&)>& loss_fn,
                             double epsilon);

// Throws InvalidArgument on size mismatch or a zero-norm input.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

} // namespace fbsim
