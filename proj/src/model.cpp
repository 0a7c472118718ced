#include "fbsim/model.hpp"

#include <algorithm>
#include <string>

#include "fbsim/rng.hpp"

namespace fbsim {

void ModelSpec::validate() const {
    if (input_dim == 0) throw ConfigError("model: input_dim must be positive");
    if (num_classes == 0) throw ConfigError("model: num_classes must be positive");
    for (std::size_t h : hidden_dims)
        if (h == 0) throw ConfigError("model: hidden layer width must be positive");
    if (batch_norm.size() != hidden_dims.size())
        throw ConfigError("model: batch_norm flags must match hidden_dims (" +
                          std::to_string(batch_norm.size()) + " vs " +
                          std::to_string(hidden_dims.size()) + ")");
    if (!(bn_eps > 0)) throw ConfigError("model: bn_eps must be positive");
    if (!(bn_momentum >= 0 && bn_momentum <= 1))
        throw ConfigError("model: bn_momentum must be in [0,1]");
}

std::size_t ModelSpec::param_count() const {
    std::size_t total = 0;
    std::size_t in = input_dim;
    for (std::size_t l = 0; l < hidden_dims.size(); ++l) {
        std::size_t out = hidden_dims[l];
        total += out * in + out;
        if (batch_norm[l]) total += 4 * out;
        in = out;
    }
    total += num_classes * in + num_classes;
    return total;
}

ModelSpec make_spec(std::size_t input_dim, std::vector<std::size_t> hidden,
                    std::size_t num_classes, bool bn) {
    ModelSpec s;
    s.input_dim = input_dim;
    s.batch_norm.assign(hidden.size(), bn ? 1 : 0);
    s.hidden_dims = std::move(hidden);
    s.num_classes = num_classes;
    s.validate();
    return s;
}

std::shared_ptr<const SegmentMap> build_segment_map(const ModelSpec& spec) {
    spec.validate();
    auto map = std::make_shared<SegmentMap>();
    std::size_t off = 0;
    auto add = [&](std::string name, SegmentKind kind, std::size_t len) {
        map->push_back(Segment{std::move(name), kind, off, len});
        off += len;
    };
    std::size_t in = spec.input_dim;
    for (std::size_t l = 0; l < spec.hidden_dims.size(); ++l) {
        std::size_t out = spec.hidden_dims[l];
        std::string p = "h" + std::to_string(l) + ".";
        add(p + "weight", SegmentKind::weight, out * in);
        add(p + "bias", SegmentKind::bias, out);
        if (spec.batch_norm[l]) {
            add(p + "bn_gamma", SegmentKind::bn_gamma, out);
            add(p + "bn_beta", SegmentKind::bn_beta, out);
            add(p + "bn_running_mean", SegmentKind::bn_running_mean, out);
            add(p + "bn_running_var", SegmentKind::bn_running_var, out);
        }
        in = out;
    }
    add("head.weight", SegmentKind::weight, spec.num_classes * in);
    add("head.bias", SegmentKind::bias, spec.num_classes);
    return map;
}

ParamVector build_model(const ModelSpec& spec, std::uint64_t seed) {
    ParamVector params(build_segment_map(spec));
    Rng rng(derive_seed({seed, 0x6d6f64656cull})); // "model"
    std::size_t in = spec.input_dim;
    auto init_linear = [&](const std::string& prefix, std::size_t fan_in, std::size_t fan_out) {
        auto w = params.segment(prefix + ".weight");
        double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        for (double& x : w) x = rng.uniform(-a, a);
        // bias stays 0
    };
    for (std::size_t l = 0; l < spec.hidden_dims.size(); ++l) {
        std::size_t out = spec.hidden_dims[l];
        std::string p = "h" + std::to_string(l);
        init_linear(p, in, out);
        if (spec.batch_norm[l]) {
            for (double& x : params.segment(p + ".bn_gamma")) x = 1.0;
            for (double& x : params.segment(p + ".bn_running_var")) x = 1.0;
        }
        in = out;
    }
    init_linear("head", in, spec.num_classes);
    return params;
}

namespace {

void check_batch(const ModelSpec& spec, const Batch& batch) {
    if (batch.n == 0) throw InvalidArgument("forward: empty batch");
    if (batch.input_dim != spec.input_dim)
        throw InvalidArgument("forward: batch input_dim " + std::to_string(batch.input_dim) +
                              " != model input_dim " + std::to_string(spec.input_dim));
    if (batch.features.size() != batch.n * batch.input_dim)
        throw InvalidArgument("forward: feature buffer size mismatch");
}

// z = W x + b for a row-major W[out x in].
void linear_forward(std::span<const double> w, std::span<const double> b,
                    const std::vector<double>& in_act, std::size_t n, std::size_t in_dim,
                    std::size_t out_dim, std::vector<double>& out) {
    out.assign(n * out_dim, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double* x = in_act.data() + i * in_dim;
        double* z = out.data() + i * out_dim;
        for (std::size_t o = 0; o < out_dim; ++o) {
            double acc = b[o];
            const double* wr = w.data() + o * in_dim;
            for (std::size_t j = 0; j < in_dim; ++j) acc += wr[j] * x[j];
            z[o] = acc;
        }
    }
}

ForwardTrace forward_impl(const ParamVector& params_in, ParamVector* params_mut,
                          const ModelSpec& spec, const Batch& batch, bool train) {
    check_batch(spec, batch);
    const ParamVector& params = params_mut ? *params_mut : params_in;
    if (params.size() != spec.param_count())
        throw InvalidArgument("forward: parameter vector has " + std::to_string(params.size()) +
                              " values, model needs " + std::to_string(spec.param_count()));

    ForwardTrace trace;
    trace.train_mode = train;
    trace.n = batch.n;
    trace.input = batch.features;
    trace.layers.resize(spec.hidden_dims.size());

    const std::size_t n = batch.n;
    std::vector<double> cur = batch.features;
    std::size_t in_dim = spec.input_dim;

    for (std::size_t l = 0; l < spec.hidden_dims.size(); ++l) {
        const std::size_t out = spec.hidden_dims[l];
        const std::string p = "h" + std::to_string(l) + ".";
        ForwardTrace::Layer& L = trace.layers[l];
        L.bn = spec.batch_norm[l] != 0;

        linear_forward(params.segment(p + "weight"), params.segment(p + "bias"), cur, n, in_dim,
                       out, L.pre);

        std::vector<double> u; // input to tanh
        if (L.bn) {
            auto gamma = params.segment(p + "bn_gamma");
            auto beta = params.segment(p + "bn_beta");
            L.xhat.assign(n * out, 0.0);
            L.inv_std.assign(out, 0.0);
            u.assign(n * out, 0.0);
            if (train) {
                for (std::size_t o = 0; o < out; ++o) {
                    double mean = 0.0;
                    for (std::size_t i = 0; i < n; ++i) mean += L.pre[i * out + o];
                    mean /= static_cast<double>(n);
                    double var = 0.0;
                    for (std::size_t i = 0; i < n; ++i) {
                        double d = L.pre[i * out + o] - mean;
                        var += d * d;
                    }
                    var /= static_cast<double>(n); // biased: well-defined at n == 1
                    double is = 1.0 / std::sqrt(var + spec.bn_eps);
                    L.inv_std[o] = is;
                    for (std::size_t i = 0; i < n; ++i) {
                        double xh = (L.pre[i * out + o] - mean) * is;
                        L.xhat[i * out + o] = xh;
                        u[i * out + o] = gamma[o] * xh + beta[o];
                    }
                    auto rm = params_mut->segment(p + "bn_running_mean");
                    auto rv = params_mut->segment(p + "bn_running_var");
                    rm[o] = (1.0 - spec.bn_momentum) * rm[o] + spec.bn_momentum * mean;
                    rv[o] = (1.0 - spec.bn_momentum) * rv[o] + spec.bn_momentum * var;
                }
            } else {
                auto rm = params.segment(p + "bn_running_mean");
                auto rv = params.segment(p + "bn_running_var");
                for (std::size_t o = 0; o < out; ++o) {
                    double is = 1.0 / std::sqrt(rv[o] + spec.bn_eps);
                    L.inv_std[o] = is;
                    for (std::size_t i = 0; i < n; ++i) {
                        double xh = (L.pre[i * out + o] - rm[o]) * is;
                        L.xhat[i * out + o] = xh;
                        u[i * out + o] = gamma[o] * xh + beta[o];
                    }
                }
            }
        } else {
            u = L.pre;
        }

        L.act.assign(n * out, 0.0);
        for (std::size_t i = 0; i < n * out; ++i) L.act[i] = std::tanh(u[i]);
        cur = L.act;
        in_dim = out;
    }

    linear_forward(params.segment("head.weight"), params.segment("head.bias"), cur, n, in_dim,
                   spec.num_classes, trace.logits);
    return trace;
}

} // namespace

ForwardTrace forward_train(ParamVector& params, const ModelSpec& spec, const Batch& batch) {
    return forward_impl(params, &params, spec, batch, true);
}

ForwardTrace forward_eval(const ParamVector& params, const ModelSpec& spec, const Batch& batch) {
    return forward_impl(params, nullptr, spec, batch, false);
}

BceResult bce_with_logits(std::span<const double> logits, const Batch& batch) {
    const std::size_t n = batch.n;
    const std::size_t P = batch.num_classes;
    if (logits.size() != n * P) throw InvalidArgument("bce_with_logits: logits size mismatch");
    if (batch.labels.size() != n * P) throw InvalidArgument("bce_with_logits: labels size mismatch");
    if (n == 0) throw InvalidArgument("bce_with_logits: empty batch");
    BceResult r;
    r.dlogits.assign(n * P, 0.0);
    double total = 0.0;
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n * P; ++i) {
        double z = logits[i];
        double y = static_cast<double>(batch.labels[i]);
        total += softplus(z) - z * y;
        r.dlogits[i] = (sigmoid(z) - y) * inv_n;
    }
    r.loss = total * inv_n;
    return r;
}

double bce_from_probs(std::span<const double> probs, std::span<const std::uint8_t> labels,
                      std::size_t n, std::size_t num_classes) {
    if (n == 0) throw InvalidArgument("bce_from_probs: empty batch");
    if (probs.size() != n * num_classes || labels.size() != n * num_classes)
        throw InvalidArgument("bce_from_probs: size mismatch");
    const double lo = 1e-12, hi = 1.0 - 1e-12;
    double total = 0.0;
    for (std::size_t i = 0; i < n * num_classes; ++i) {
        double p = std::clamp(probs[i], lo, hi);
        total += labels[i] ? -std::log(p) : -std::log1p(-p);
    }
    return total / static_cast<double>(n);
}

namespace {

ParamVector backward_impl(const ParamVector& params, const ModelSpec& spec,
                          const ForwardTrace& trace, std::span<const double> dlogits,
                          std::span<const double> dfeatures) {
    const std::size_t n = trace.n;
    const std::size_t P = spec.num_classes;
    const std::size_t F = spec.feature_dim();
    ParamVector grad = ParamVector::zeros_like(params);

    std::vector<double> d_act(n * F, 0.0);

    if (!dlogits.empty()) {
        if (dlogits.size() != n * P) throw InvalidArgument("backward: dlogits size mismatch");
        auto w = params.segment("head.weight");
        auto gw = grad.segment("head.weight");
        auto gb = grad.segment("head.bias");
        std::span<const double> feat = trace.features();
        for (std::size_t i = 0; i < n; ++i) {
            const double* f = feat.data() + i * F;
            const double* g = dlogits.data() + i * P;
            double* da = d_act.data() + i * F;
            for (std::size_t p = 0; p < P; ++p) {
                const double gp = g[p];
                gb[p] += gp;
                double* gwr = gw.data() + p * F;
                const double* wr = w.data() + p * F;
                for (std::size_t j = 0; j < F; ++j) {
                    gwr[j] += gp * f[j];
                    da[j] += gp * wr[j];
                }
            }
        }
    }
    if (!dfeatures.empty()) {
        if (dfeatures.size() != n * F) throw InvalidArgument("backward: dfeatures size mismatch");
        for (std::size_t i = 0; i < n * F; ++i) d_act[i] += dfeatures[i];
    }

    for (std::size_t li = spec.hidden_dims.size(); li-- > 0;) {
        const std::size_t out = spec.hidden_dims[li];
        const std::size_t in_dim = (li == 0) ? spec.input_dim : spec.hidden_dims[li - 1];
        const std::vector<double>& in_act = (li == 0) ? trace.input : trace.layers[li - 1].act;
        const ForwardTrace::Layer& L = trace.layers[li];
        const std::string p = "h" + std::to_string(li) + ".";

        // through tanh
        std::vector<double> du(n * out);
        for (std::size_t i = 0; i < n * out; ++i) {
            double a = L.act[i];
            du[i] = d_act[i] * (1.0 - a * a);
        }

        std::vector<double> dpre;
        if (L.bn) {
            auto gamma = params.segment(p + "bn_gamma");
            auto ggamma = grad.segment(p + "bn_gamma");
            auto gbeta = grad.segment(p + "bn_beta");
            dpre.assign(n * out, 0.0);
            for (std::size_t o = 0; o < out; ++o) {
                double s1 = 0.0, s2 = 0.0, dg = 0.0, db = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    double d = du[i * out + o];
                    double xh = L.xhat[i * out + o];
                    dg += d * xh;
                    db += d;
                    double dxh = d * gamma[o];
                    s1 += dxh;
                    s2 += dxh * xh;
                }
                ggamma[o] += dg;
                gbeta[o] += db;
                const double is = L.inv_std[o];
                if (trace.train_mode) {
                    const double inv_n = 1.0 / static_cast<double>(n);
                    for (std::size_t i = 0; i < n; ++i) {
                        double dxh = du[i * out + o] * gamma[o];
                        dpre[i * out + o] =
                            is * (dxh - s1 * inv_n - L.xhat[i * out + o] * s2 * inv_n);
                    }
                } else {
                    for (std::size_t i = 0; i < n; ++i)
                        dpre[i * out + o] = du[i * out + o] * gamma[o] * is;
                }
            }
        } else {
            dpre = std::move(du);
        }

        auto w = params.segment(p + "weight");
        auto gw = grad.segment(p + "weight");
        auto gb = grad.segment(p + "bias");
        std::vector<double> d_prev(n * in_dim, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const double* x = in_act.data() + i * in_dim;
            const double* dz = dpre.data() + i * out;
            double* dp = d_prev.data() + i * in_dim;
            for (std::size_t o = 0; o < out; ++o) {
                const double dzo = dz[o];
                gb[o] += dzo;
                double* gwr = gw.data() + o * in_dim;
                const double* wr = w.data() + o * in_dim;
                for (std::size_t j = 0; j < in_dim; ++j) {
                    gwr[j] += dzo * x[j];
                    dp[j] += dzo * wr[j];
                }
            }
        }
        d_act = std::move(d_prev);
    }
    return grad;
}

} // namespace

ParamVector backward(const ParamVector& params, const ModelSpec& spec, const ForwardTrace& trace,
                     std::span<const double> dlogits) {
    if (!trace.train_mode)
        throw InvalidArgument("backward: trace was recorded in eval mode; batch statistics "
                              "needed for batch-norm backward are missing");
    return backward_impl(params, spec, trace, dlogits, {});
}

ParamVector backward_from_features(const ParamVector& params, const ModelSpec& spec,
                                   const ForwardTrace& trace,
                                   std::span<const double> dfeatures) {
    return backward_impl(params, spec, trace, {}, dfeatures);
}

ParamVector finite_diff_grad(const ParamVector& params,
                             const std::function<double(const ParamVector&)>& loss_fn,
                             double epsilon) {
    if (!(epsilon > 0)) throw InvalidArgument("finite_diff_grad: epsilon must be positive");
    ParamVector grad = ParamVector::zeros_like(params);
    ParamVector probe = params;
    for_each_trainable(params.segments(), [&](const Segment& s) {
        for (std::size_t i = s.offset; i < s.offset + s.length; ++i) {
            const double orig = probe[i];
            probe[i] = orig + epsilon;
            double hi = loss_fn(probe);
            probe[i] = orig - epsilon;
            double lo = loss_fn(probe);
            probe[i] = orig;
            grad[i] = (hi - lo) / (2.0 * epsilon);
        }
    });
    return grad;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw InvalidArgument("cosine_similarity: size mismatch");
    if (a.empty()) throw InvalidArgument("cosine_similarity: empty input");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0)
        throw InvalidArgument("cosine_similarity: zero-norm input");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

} // namespace fbsim
