#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fbsim/serialize.hpp"

namespace fbsim {

// Per-client hypernetwork: maps a learnable embedding t to one softmax row
// per model segment ("layer") over the K clients. alpha[l][j] is how much of
// client j's segment l enters this client's personalized model.
//
// Architecture: one hidden tanh layer; the output layer is zero-initialized
// so mixing starts exactly uniform (1/K everywhere).
struct Hypernetwork {
    std::size_t num_layers = 0;  // L: segments in the model
    std::size_t num_clients = 0; // K
    std::size_t embed_dim = 0;
    std::size_t hidden_dim = 0;

    std::vector<double> t;  // embed_dim
    std::vector<double> w1; // hidden_dim x embed_dim
    std::vector<double> b1; // hidden_dim
    std::vector<double> w2; // (L*K) x hidden_dim, zero-init
    std::vector<double> b2; // L*K, zero-init

    static Hypernetwork create(std::size_t num_layers, std::size_t num_clients,
                               std::size_t embed_dim, std::size_t hidden_dim,
                               std::uint64_t seed);

    // alpha as L rows of K, each on the simplex (softmax with max-subtract).
    std::vector<double> forward() const;

    // One gradient step on (t, w1, b1, w2, b2) for the scalar objective
    // s = sum_{l,j} alpha[l][j] * dots[l][j], i.e. dots = d s / d alpha.
    void apply_update(std::span<const double> dots, double lr);

    // d s / d t for the same objective; the finite-difference oracle target.
    std::vector<double> grad_embedding(std::span<const double> dots) const;

    void serialize(ByteWriter& w) const;
    static Hypernetwork deserialize(ByteReader& r);

private:
    struct Trace {
        std::vector<double> hidden; // tanh activations
        std::vector<double> alpha;  // L*K
    };
    Trace trace() const;
    // Backprop from d s/d alpha to all parameter grads; returns via out-params.
    void grads(std::span<const double> dots, const Trace& tr, std::vector<double>& gt,
               std::vector<double>& gw1, std::vector<double>& gb1, std::vector<double>& gw2,
               std::vector<double>& gb2) const;
};

} // namespace fbsim
