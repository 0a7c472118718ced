#include "fbsim/hypernet.hpp"

#include <cmath>

#include "fbsim/errors.hpp"
#include "fbsim/rng.hpp"

namespace fbsim {

Hypernetwork Hypernetwork::create(std::size_t num_layers, std::size_t num_clients,
                                  std::size_t embed_dim, std::size_t hidden_dim,
                                  std::uint64_t seed) {
    if (num_layers == 0 || num_clients == 0 || embed_dim == 0 || hidden_dim == 0)
        throw InvalidArgument("Hypernetwork::create: all dimensions must be positive");
    Hypernetwork hn;
    hn.num_layers = num_layers;
    hn.num_clients = num_clients;
    hn.embed_dim = embed_dim;
    hn.hidden_dim = hidden_dim;
    Rng rng(seed);
    hn.t.resize(embed_dim);
    for (double& x : hn.t) x = 0.1 * rng.normal();
    hn.w1.resize(hidden_dim * embed_dim);
    double a = std::sqrt(6.0 / static_cast<double>(embed_dim + hidden_dim));
    for (double& x : hn.w1) x = rng.uniform(-a, a);
    hn.b1.assign(hidden_dim, 0.0);
    hn.w2.assign(num_layers * num_clients * hidden_dim, 0.0);
    hn.b2.assign(num_layers * num_clients, 0.0);
    return hn;
}

Hypernetwork::Trace Hypernetwork::trace() const {
    Trace tr;
    tr.hidden.assign(hidden_dim, 0.0);
    for (std::size_t h = 0; h < hidden_dim; ++h) {
        double acc = b1[h];
        for (std::size_t e = 0; e < embed_dim; ++e) acc += w1[h * embed_dim + e] * t[e];
        tr.hidden[h] = std::tanh(acc);
    }
    const std::size_t rows = num_layers;
    const std::size_t K = num_clients;
    std::vector<double> logits(rows * K);
    for (std::size_t r = 0; r < rows * K; ++r) {
        double acc = b2[r];
        for (std::size_t h = 0; h < hidden_dim; ++h) acc += w2[r * hidden_dim + h] * tr.hidden[h];
        logits[r] = acc;
    }
    tr.alpha.assign(rows * K, 0.0);
    for (std::size_t l = 0; l < rows; ++l) {
        const double* z = logits.data() + l * K;
        double* al = tr.alpha.data() + l * K;
        double mx = z[0];
        for (std::size_t j = 1; j < K; ++j) mx = std::max(mx, z[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < K; ++j) {
            al[j] = std::exp(z[j] - mx);
            sum += al[j];
        }
        for (std::size_t j = 0; j < K; ++j) al[j] /= sum;
    }
    return tr;
}

std::vector<double> Hypernetwork::forward() const { return trace().alpha; }

void Hypernetwork::grads(std::span<const double> dots, const Trace& tr, std::vector<double>& gt,
                         std::vector<double>& gw1, std::vector<double>& gb1,
                         std::vector<double>& gw2, std::vector<double>& gb2) const {
    const std::size_t K = num_clients;
    if (dots.size() != num_layers * K)
        throw InvalidArgument("Hypernetwork: dots must be L*K values");

    // softmax rows: dlogit_j = alpha_j * (dots_j - sum_k alpha_k dots_k)
    std::vector<double> dlogits(num_layers * K);
    for (std::size_t l = 0; l < num_layers; ++l) {
        const double* al = tr.alpha.data() + l * K;
        const double* dl = dots.data() + l * K;
        double inner = 0.0;
        for (std::size_t j = 0; j < K; ++j) inner += al[j] * dl[j];
        for (std::size_t j = 0; j < K; ++j) dlogits[l * K + j] = al[j] * (dl[j] - inner);
    }

    gb2.assign(num_layers * K, 0.0);
    gw2.assign(w2.size(), 0.0);
    std::vector<double> dh(hidden_dim, 0.0);
    for (std::size_t r = 0; r < num_layers * K; ++r) {
        double d = dlogits[r];
        gb2[r] = d;
        for (std::size_t h = 0; h < hidden_dim; ++h) {
            gw2[r * hidden_dim + h] = d * tr.hidden[h];
            dh[h] += d * w2[r * hidden_dim + h];
        }
    }

    gb1.assign(hidden_dim, 0.0);
    gw1.assign(w1.size(), 0.0);
    gt.assign(embed_dim, 0.0);
    for (std::size_t h = 0; h < hidden_dim; ++h) {
        double du = dh[h] * (1.0 - tr.hidden[h] * tr.hidden[h]);
        gb1[h] = du;
        for (std::size_t e = 0; e < embed_dim; ++e) {
            gw1[h * embed_dim + e] = du * t[e];
            gt[e] += du * w1[h * embed_dim + e];
        }
    }
}

void Hypernetwork::apply_update(std::span<const double> dots, double lr) {
    Trace tr = trace();
    std::vector<double> gt, gw1, gb1, gw2, gb2;
    grads(dots, tr, gt, gw1, gb1, gw2, gb2);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] -= lr * gt[i];
    for (std::size_t i = 0; i < w1.size(); ++i) w1[i] -= lr * gw1[i];
    for (std::size_t i = 0; i < b1.size(); ++i) b1[i] -= lr * gb1[i];
    for (std::size_t i = 0; i < w2.size(); ++i) w2[i] -= lr * gw2[i];
    for (std::size_t i = 0; i < b2.size(); ++i) b2[i] -= lr * gb2[i];
}

std::vector<double> Hypernetwork::grad_embedding(std::span<const double> dots) const {
    Trace tr = trace();
    std::vector<double> gt, gw1, gb1, gw2, gb2;
    grads(dots, tr, gt, gw1, gb1, gw2, gb2);
    return gt;
}

void Hypernetwork::serialize(ByteWriter& w) const {
    w.u64(num_layers);
    w.u64(num_clients);
    w.u64(embed_dim);
    w.u64(hidden_dim);
    w.f64_span(t);
    w.f64_span(w1);
    w.f64_span(b1);
    w.f64_span(w2);
    w.f64_span(b2);
}

Hypernetwork Hypernetwork::deserialize(ByteReader& r) {
    Hypernetwork hn;
    hn.num_layers = static_cast<std::size_t>(r.u64());
    hn.num_clients = static_cast<std::size_t>(r.u64());
    hn.embed_dim = static_cast<std::size_t>(r.u64());
    hn.hidden_dim = static_cast<std::size_t>(r.u64());
    hn.t.resize(hn.embed_dim);
    hn.w1.resize(hn.hidden_dim * hn.embed_dim);
    hn.b1.resize(hn.hidden_dim);
    hn.w2.resize(hn.num_layers * hn.num_clients * hn.hidden_dim);
    hn.b2.resize(hn.num_layers * hn.num_clients);
    r.f64_into(hn.t);
    r.f64_into(hn.w1);
    r.f64_into(hn.b1);
    r.f64_into(hn.w2);
    r.f64_into(hn.b2);
    return hn;
}

} // namespace fbsim
