#include "fbsim/strategies.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "fbsim/rng.hpp"

namespace fbsim {

namespace {
constexpr std::uint64_t kLocalTag = 0x6c6f636cull; // local-training streams
constexpr std::uint64_t kHyperTag = 0x68797072ull; // hypernet init streams

bool uses_control_variates(StrategyKind k) {
    return k == StrategyKind::scaffold || k == StrategyKind::feddc;
}
} // namespace

const char* strategy_name(StrategyKind k) {
    switch (k) {
        case StrategyKind::fedavg: return "fedavg";
        case StrategyKind::fedprox: return "fedprox";
        case StrategyKind::scaffold: return "scaffold";
        case StrategyKind::moon: return "moon";
        case StrategyKind::feddc: return "feddc";
        case StrategyKind::fednova: return "fednova";
        case StrategyKind::fedbn: return "fedbn";
        case StrategyKind::pfedla: return "pfedla";
    }
    return "?";
}

StrategyKind strategy_from_name(const std::string& s) {
    for (StrategyKind k : kAllStrategies)
        if (s == strategy_name(k)) return k;
    throw ConfigError("unknown strategy '" + s + "'");
}

void StrategyHyperparams::validate() const {
    if (gamma < 0) throw ConfigError("strategy: gamma must be >= 0");
    if (!(tau > 0)) throw ConfigError("strategy: tau must be > 0");
    if (mu < 0) throw ConfigError("strategy: mu must be >= 0");
    if (feddc_penalty_weight < 0) throw ConfigError("strategy: feddc_penalty_weight must be >= 0");
    if (pfedla_embed_dim == 0 || pfedla_hidden == 0)
        throw ConfigError("strategy: pfedla hypernetwork dimensions must be positive");
}

std::vector<double> extract_bn_values(const ParamVector& params) {
    std::vector<double> out;
    for (const Segment& s : params.segments())
        if (is_batch_norm(s.kind)) {
            auto v = params.segment(s);
            out.insert(out.end(), v.begin(), v.end());
        }
    return out;
}

void inject_bn_values(ParamVector& params, std::span<const double> bn_values) {
    std::size_t cursor = 0;
    for (const Segment& s : params.segments())
        if (is_batch_norm(s.kind)) {
            if (cursor + s.length > bn_values.size())
                throw InvalidArgument("inject_bn_values: value buffer too short");
            auto v = params.segment(s);
            std::copy_n(bn_values.data() + cursor, s.length, v.data());
            cursor += s.length;
        }
    if (cursor != bn_values.size())
        throw InvalidArgument("inject_bn_values: value buffer size mismatch");
}

ServerState init_server(StrategyKind strategy, const ModelSpec& spec,
                        const StrategyHyperparams& hp, double eta, std::uint64_t seed,
                        std::size_t num_clients) {
    spec.validate();
    hp.validate();
    if (num_clients == 0) throw ConfigError("init_server: need at least one client");
    ServerState server;
    server.strategy = strategy;
    server.hp = hp;
    server.num_clients = num_clients;
    server.eta = eta;
    server.round = 1;
    server.w = build_model(spec, seed);
    if (uses_control_variates(strategy)) server.v = ParamVector::zeros_like(server.w);
    if (strategy == StrategyKind::pfedla) {
        const std::size_t L = server.w.segments().size();
        server.hypernets.reserve(num_clients);
        for (std::size_t i = 0; i < num_clients; ++i)
            server.hypernets.push_back(Hypernetwork::create(
                L, num_clients, hp.pfedla_embed_dim, hp.pfedla_hidden,
                derive_seed({seed, kHyperTag, static_cast<std::uint64_t>(i)})));
        server.client_models.assign(num_clients, server.w);
    }
    return server;
}

std::vector<ClientState> init_clients(const ServerState& server) {
    std::vector<ClientState> clients(server.num_clients);
    for (std::size_t i = 0; i < server.num_clients; ++i) {
        ClientState& c = clients[i];
        c.client_id = i;
        c.model = server.w;
        if (uses_control_variates(server.strategy)) c.v = ParamVector::zeros_like(server.w);
        if (server.strategy == StrategyKind::feddc) c.h = ParamVector::zeros_like(server.w);
        if (server.strategy == StrategyKind::moon) c.prev_local = server.w;
        if (server.strategy == StrategyKind::fedbn) c.bn_values = extract_bn_values(server.w);
    }
    return clients;
}

namespace {

// out = sum_i coef[i] * vec_i, accumulated in client order starting from the
// first term (not from zero). The shared shape of this loop is what makes
// the FedNova == FedAvg and K=1 reductions bit-exact.
void weighted_sum(const std::vector<const ParamVector*>& vecs, const std::vector<double>& coef,
                  ParamVector& out) {
    const std::size_t n = out.size();
    double* o = out.values().data();
    {
        const double* v0 = vecs[0]->values().data();
        const double c0 = coef[0];
        for (std::size_t j = 0; j < n; ++j) o[j] = c0 * v0[j];
    }
    for (std::size_t i = 1; i < vecs.size(); ++i) {
        const double* vi = vecs[i]->values().data();
        const double ci = coef[i];
        for (std::size_t j = 0; j < n; ++j) o[j] += ci * vi[j];
    }
}

ParamVector mix_personalized(const ServerState& server, std::uint64_t client_id) {
    const Hypernetwork& hn = server.hypernets[client_id];
    std::vector<double> alpha = hn.forward();
    const std::size_t K = server.num_clients;
    const SegmentMap& segs = server.client_models[0].segments();
    ParamVector out = ParamVector::zeros_like(server.client_models[0]);
    double* o = out.values().data();
    for (std::size_t l = 0; l < segs.size(); ++l) {
        const Segment& s = segs[l];
        {
            const double a0 = alpha[l * K + 0];
            const double* m0 = server.client_models[0].values().data();
            for (std::size_t c = s.offset; c < s.offset + s.length; ++c) o[c] = a0 * m0[c];
        }
        for (std::size_t j = 1; j < K; ++j) {
            const double aj = alpha[l * K + j];
            const double* mj = server.client_models[j].values().data();
            for (std::size_t c = s.offset; c < s.offset + s.length; ++c) o[c] += aj * mj[c];
        }
    }
    return out;
}

} // namespace

ParamVector serve(const ServerState& server, std::uint64_t client_id) {
    if (client_id >= server.num_clients)
        throw InvalidArgument("serve: client_id out of range");
    if (server.strategy == StrategyKind::pfedla) return mix_personalized(server, client_id);
    return server.w;
}

MoonTerm moon_contrastive(std::span<const double> f_cur, std::span<const double> f_glob,
                          std::span<const double> f_prev, std::size_t n, std::size_t feature_dim,
                          double tau) {
    if (f_cur.size() != n * feature_dim || f_glob.size() != n * feature_dim ||
        f_prev.size() != n * feature_dim)
        throw InvalidArgument("moon_contrastive: feature buffer size mismatch");
    if (!(tau > 0)) throw InvalidArgument("moon_contrastive: tau must be > 0");

    MoonTerm term;
    term.dfeatures.assign(n * feature_dim, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double* fc = f_cur.data() + i * feature_dim;
        const double* fg = f_glob.data() + i * feature_dim;
        const double* fp = f_prev.data() + i * feature_dim;
        double ncc = 0, ngg = 0, npp = 0, dcg = 0, dcp = 0;
        for (std::size_t j = 0; j < feature_dim; ++j) {
            ncc += fc[j] * fc[j];
            ngg += fg[j] * fg[j];
            npp += fp[j] * fp[j];
            dcg += fc[j] * fg[j];
            dcp += fc[j] * fp[j];
        }
        if (ncc == 0.0 || ngg == 0.0 || npp == 0.0)
            throw NumericError("moon_contrastive: zero-norm feature vector at sample " +
                               std::to_string(i) + " (dead feature extractor)");
        const double nc = std::sqrt(ncc), ng = std::sqrt(ngg), np = std::sqrt(npp);
        const double s_glob = dcg / (nc * ng);
        const double s_prev = dcp / (nc * np);
        const double gap = (s_prev - s_glob) / tau;
        term.loss += softplus(gap);
        const double sig = sigmoid(gap);
        // d loss / d s_glob = -sig/tau, d loss / d s_prev = +sig/tau
        const double cg = -sig / tau;
        const double cp = sig / tau;
        double* df = term.dfeatures.data() + i * feature_dim;
        for (std::size_t j = 0; j < feature_dim; ++j) {
            df[j] += cg * (fg[j] / (nc * ng) - s_glob * fc[j] / ncc);
            df[j] += cp * (fp[j] / (nc * np) - s_prev * fc[j] / ncc);
        }
    }
    return term;
}

ClientUpdate local_train(StrategyKind strategy, ClientState& client, const ClientDataset& data,
                         const ParamVector& served, const ParamVector* server_v,
                         const ModelSpec& spec, const StrategyHyperparams& hp,
                         const TrainSettings& settings) {
    if (settings.epochs == 0) throw ConfigError("local_train: epochs must be >= 1");
    if (settings.batch_size == 0) throw ConfigError("local_train: batch_size must be >= 1");
    const std::size_t M = data.n();
    if (M == 0) throw InvalidArgument("local_train: empty client dataset");
    if (served.size() != spec.param_count())
        throw InvalidArgument("local_train: served model does not match spec");

    const auto t0 = std::chrono::steady_clock::now();

    ParamVector w = served;
    if (strategy == StrategyKind::fedbn && !client.bn_values.empty())
        inject_bn_values(w, client.bn_values);

    const bool cv_active = uses_control_variates(strategy) && !hp.freeze_control_variates;
    if (cv_active && server_v == nullptr)
        throw InvalidArgument("local_train: strategy needs the server control variate");

    client.opt = Optimizer(settings.optimizer);
    client.opt.reset(w.size());

    Rng rng(derive_seed({settings.run_seed, kLocalTag, client.client_id, settings.round}));

    const std::size_t P = spec.num_classes;
    const std::size_t F = spec.feature_dim();
    std::vector<std::size_t> order(M);
    std::iota(order.begin(), order.end(), 0);

    std::uint64_t steps = 0;
    double loss_sum = 0.0;
    std::size_t batches = 0;

    Batch b;
    b.input_dim = spec.input_dim;
    b.num_classes = P;

    for (std::size_t epoch = 0; epoch < settings.epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t start = 0; start < M; start += settings.batch_size) {
            const std::size_t count = std::min(settings.batch_size, M - start);
            b.n = count;
            b.features.assign(count * spec.input_dim, 0.0);
            b.labels.assign(count * P, 0);
            for (std::size_t r = 0; r < count; ++r) {
                const std::size_t s = order[start + r];
                std::copy_n(data.features.data() + s * spec.input_dim, spec.input_dim,
                            b.features.data() + r * spec.input_dim);
                std::copy_n(data.labels.data() + s * P, P, b.labels.data() + r * P);
            }

            ForwardTrace trace = forward_train(w, spec, b);

            // MOON features are taken in train mode (batch statistics) for
            // all three models: batch-stat normalization absorbs per-client
            // input shifts, so the cosine similarities compare learned
            // representations rather than input calibration. The current
            // model reuses the BCE trace; the global and previous models
            // run on scratch copies whose running-stat updates are discarded.
            // Singleton batches are excluded: batch-stat BN normalizes a
            // batch of one to exactly zero, so its features are the zero
            // vector (no cosine exists) whenever a BN shift is still zero.
            MoonTerm moon;
            const bool moon_active =
                strategy == StrategyKind::moon && hp.mu != 0.0 && count >= 2;
            if (moon_active) {
                ParamVector glob_scratch = served;
                ForwardTrace glob_trace = forward_train(glob_scratch, spec, b);
                ParamVector prev_scratch = client.prev_local;
                ForwardTrace prev_trace = forward_train(prev_scratch, spec, b);
                moon = moon_contrastive(trace.features(), glob_trace.features(),
                                        prev_trace.features(), count, F, hp.tau);
            }

            BceResult bce = bce_with_logits(trace.logits, b);
            if (!std::isfinite(bce.loss) || (moon_active && !std::isfinite(moon.loss)))
                throw NumericError("non-finite loss at round " +
                                   std::to_string(settings.round) + ", client " +
                                   std::to_string(client.client_id) + ", batch " +
                                   std::to_string(batches));

            ParamVector grad = backward(w, spec, trace, bce.dlogits);
            if (strategy == StrategyKind::fedprox && hp.gamma != 0.0) {
                // d/dw (gamma/2)||served - w||^2 = gamma (w - served)
                double* g = grad.values().data();
                const double* wp = w.values().data();
                const double* sp = served.values().data();
                for_each_trainable(grad.segments(), [&](const Segment& s) {
                    for (std::size_t j = s.offset; j < s.offset + s.length; ++j)
                        g[j] += hp.gamma * (wp[j] - sp[j]);
                });
            }
            if (moon_active) {
                ParamVector mg = backward_from_features(w, spec, trace, moon.dfeatures);
                axpy_trainable(hp.mu, mg, grad);
            }
            if (strategy == StrategyKind::feddc && hp.feddc_penalty_weight != 0.0) {
                // d/dw lambda ||h + w - served||^2 = 2 lambda (h + w - served)
                double* g = grad.values().data();
                const double* wp = w.values().data();
                const double* sp = served.values().data();
                const double* hp_ = client.h.values().data();
                const double lam = 2.0 * hp.feddc_penalty_weight;
                for_each_trainable(grad.segments(), [&](const Segment& s) {
                    for (std::size_t j = s.offset; j < s.offset + s.length; ++j)
                        g[j] += lam * (hp_[j] + wp[j] - sp[j]);
                });
            }
            if (cv_active) {
                // SCAFFOLD correction: gradient += v - v_i
                double* g = grad.values().data();
                const double* vg = server_v->values().data();
                const double* vi = client.v.values().data();
                for_each_trainable(grad.segments(), [&](const Segment& s) {
                    for (std::size_t j = s.offset; j < s.offset + s.length; ++j)
                        g[j] += vg[j] - vi[j];
                });
            }

            client.opt.step(w, grad, settings.eta);
            ++steps;
            loss_sum += bce.loss;
            ++batches;
        }
    }

    ClientUpdate update;
    update.client_id = client.client_id;
    update.num_local_steps = steps;
    update.dataset_size = M;
    update.mean_loss = loss_sum / static_cast<double>(batches);

    if (uses_control_variates(strategy)) {
        update.delta_v = ParamVector::zeros_like(w);
        if (!hp.freeze_control_variates) {
            // v_i <- v_i - v + (served - w_i) / (U * eta), trainable coords only
            const double scale = 1.0 / (static_cast<double>(steps) * settings.eta);
            ParamVector new_v = ParamVector::zeros_like(w);
            double* nv = new_v.values().data();
            const double* ov = client.v.values().data();
            const double* vg = server_v->values().data();
            const double* sp = served.values().data();
            const double* wp = w.values().data();
            for_each_trainable(w.segments(), [&](const Segment& s) {
                for (std::size_t j = s.offset; j < s.offset + s.length; ++j)
                    nv[j] = ov[j] - vg[j] + (sp[j] - wp[j]) * scale;
            });
            double* dv = update.delta_v.values().data();
            for (std::size_t j = 0; j < w.size(); ++j) dv[j] = nv[j] - ov[j];
            client.v = std::move(new_v);
        }
    }
    if (strategy == StrategyKind::feddc) {
        // h_i <- h_i + (w_i,end - w_i,start); the round started from `served`
        double* hv = client.h.values().data();
        const double* wp = w.values().data();
        const double* sp = served.values().data();
        for_each_trainable(w.segments(), [&](const Segment& s) {
            for (std::size_t j = s.offset; j < s.offset + s.length; ++j)
                hv[j] += wp[j] - sp[j];
        });
        update.drift = client.h;
    }
    if (strategy == StrategyKind::moon) client.prev_local = w;
    if (strategy == StrategyKind::fedbn) client.bn_values = extract_bn_values(w);

    client.model = w;
    const auto t1 = std::chrono::steady_clock::now();
    update.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();

    update.model = std::move(w);

    // Upload size from the actual payload objects (the analytic
    // comm_footprint is computed independently from the spec).
    std::uint64_t floats = update.model.size();
    switch (strategy) {
        case StrategyKind::fedbn:
            floats -= batch_norm_param_count(update.model.segments());
            break;
        case StrategyKind::fednova:
            floats += 1; // U_i rides along
            break;
        case StrategyKind::scaffold:
            floats += update.delta_v.size();
            break;
        case StrategyKind::feddc:
            floats += update.delta_v.size() + update.drift.size();
            break;
        default:
            break;
    }
    update.payload_floats = floats;
    return update;
}

void aggregate(ServerState& server, const std::vector<ClientUpdate>& updates) {
    const std::size_t K = server.num_clients;
    if (updates.size() != K)
        throw InvalidArgument("aggregate: expected " + std::to_string(K) + " updates, got " +
                              std::to_string(updates.size()) + " (partial participation is "
                              "unsupported)");
    std::size_t total = 0;
    for (std::size_t i = 0; i < K; ++i) {
        if (updates[i].client_id != i)
            throw InvalidArgument("aggregate: update " + std::to_string(i) +
                                  " is for client " + std::to_string(updates[i].client_id) +
                                  "; updates must arrive in client order");
        if (updates[i].dataset_size == 0)
            throw InvalidArgument("aggregate: client " + std::to_string(i) + " reports |D_i|=0");
        total += updates[i].dataset_size;
    }

    std::vector<double> coef(K);
    for (std::size_t i = 0; i < K; ++i)
        coef[i] = static_cast<double>(updates[i].dataset_size) / static_cast<double>(total);

    std::vector<const ParamVector*> models(K);
    for (std::size_t i = 0; i < K; ++i) models[i] = &updates[i].model;

    switch (server.strategy) {
        case StrategyKind::fedavg:
        case StrategyKind::fedprox:
        case StrategyKind::moon:
        case StrategyKind::scaffold:
            weighted_sum(models, coef, server.w);
            break;

        case StrategyKind::feddc: {
            if (server.hp.feddc_drift_in_aggregate) {
                // w = sum c_i (w_i + h_i)
                std::vector<ParamVector> shifted;
                shifted.reserve(K);
                for (std::size_t i = 0; i < K; ++i) {
                    ParamVector s = updates[i].model;
                    if (updates[i].drift.size() != s.size())
                        throw InvalidArgument("aggregate: FedDC update missing drift");
                    double* sv = s.values().data();
                    const double* hv = updates[i].drift.values().data();
                    for (std::size_t j = 0; j < s.size(); ++j) sv[j] += hv[j];
                    shifted.push_back(std::move(s));
                }
                std::vector<const ParamVector*> ptrs(K);
                for (std::size_t i = 0; i < K; ++i) ptrs[i] = &shifted[i];
                weighted_sum(ptrs, coef, server.w);
            } else {
                weighted_sum(models, coef, server.w);
            }
            break;
        }

        case StrategyKind::fednova: {
            if (server.hp.fednova_paper_literal) {
                // literal reading: scale each client's *parameters* by 1/U_i
                std::vector<double> lit(K);
                for (std::size_t i = 0; i < K; ++i)
                    lit[i] = coef[i] / static_cast<double>(updates[i].num_local_steps);
                weighted_sum(models, lit, server.w);
                break;
            }
            // delta form, regrouped per client as beta_i = c_i * (tau_eff/U_i):
            //   w = sum beta_i w_i + (1 - sum beta_i) w_prev
            // tau_eff = sum c_i U_i computed from exact integer sums so that
            // homogeneous U gives beta_i == c_i bitwise.
            std::uint64_t num = 0;
            for (std::size_t i = 0; i < K; ++i)
                num += static_cast<std::uint64_t>(updates[i].dataset_size) *
                       updates[i].num_local_steps;
            const double tau_eff =
                static_cast<double>(num) / static_cast<double>(total);
            std::vector<double> beta(K);
            double beta_sum = 0.0;
            for (std::size_t i = 0; i < K; ++i) {
                beta[i] = coef[i] * (tau_eff / static_cast<double>(updates[i].num_local_steps));
                beta_sum += beta[i];
            }
            const double rho = 1.0 - beta_sum;
            ParamVector prev = server.w;
            weighted_sum(models, beta, server.w);
            if (rho != 0.0) {
                double* wv = server.w.values().data();
                const double* pv = prev.values().data();
                for (std::size_t j = 0; j < server.w.size(); ++j) wv[j] += rho * pv[j];
            }
            break;
        }

        case StrategyKind::fedbn: {
            // aggregate non-BN segments only; server BN coordinates persist
            ParamVector mixed = ParamVector::zeros_like(server.w);
            weighted_sum(models, coef, mixed);
            double* wv = server.w.values().data();
            const double* mv = mixed.values().data();
            for (const Segment& s : server.w.segments()) {
                if (is_batch_norm(s.kind)) continue;
                for (std::size_t j = s.offset; j < s.offset + s.length; ++j) wv[j] = mv[j];
            }
            break;
        }

        case StrategyKind::pfedla: {
            // Per client: recompute what was served this round (hypernets and
            // stored models are untouched between serve and aggregate), then
            // one hypernetwork step along (grad of w_i* . delta_i).
            const SegmentMap& segs = server.w.segments();
            const double lr = server.hp.pfedla_hyper_lr > 0 ? server.hp.pfedla_hyper_lr
                                                            : server.eta;
            for (std::size_t i = 0; i < K; ++i) {
                ParamVector served_i = mix_personalized(server, i);
                std::vector<double> dots(segs.size() * K, 0.0);
                const double* up = updates[i].model.values().data();
                const double* sv = served_i.values().data();
                for (std::size_t l = 0; l < segs.size(); ++l) {
                    const Segment& s = segs[l];
                    for (std::size_t j = 0; j < K; ++j) {
                        const double* mj = server.client_models[j].values().data();
                        double acc = 0.0;
                        for (std::size_t c = s.offset; c < s.offset + s.length; ++c)
                            acc += mj[c] * (up[c] - sv[c]);
                        dots[l * K + j] = acc;
                    }
                }
                server.hypernets[i].apply_update(dots, lr);
            }
            for (std::size_t i = 0; i < K; ++i) server.client_models[i] = updates[i].model;
            break;
        }
    }

    if (uses_control_variates(server.strategy)) {
        // v <- v + (1/K) sum delta_v_i
        ParamVector acc = ParamVector::zeros_like(server.v);
        double* av = acc.values().data();
        {
            if (updates[0].delta_v.size() != server.v.size())
                throw InvalidArgument("aggregate: update missing delta_v");
            const double* dv = updates[0].delta_v.values().data();
            for (std::size_t j = 0; j < acc.size(); ++j) av[j] = dv[j];
        }
        for (std::size_t i = 1; i < K; ++i) {
            if (updates[i].delta_v.size() != server.v.size())
                throw InvalidArgument("aggregate: update missing delta_v");
            const double* dv = updates[i].delta_v.values().data();
            for (std::size_t j = 0; j < acc.size(); ++j) av[j] += dv[j];
        }
        double* vv = server.v.values().data();
        const double invk = 1.0 / static_cast<double>(K);
        for (std::size_t j = 0; j < acc.size(); ++j) vv[j] += av[j] * invk;
    }

    server.round += 1;
}

CommFootprint comm_footprint(StrategyKind strategy, const ModelSpec& spec, std::size_t K) {
    (void)K; // full participation: identical per client
    const std::uint64_t n = spec.param_count();
    const std::uint64_t bn = batch_norm_param_count(*build_segment_map(spec));
    CommFootprint f;
    switch (strategy) {
        case StrategyKind::fedavg:
        case StrategyKind::fedprox:
        case StrategyKind::moon:
        case StrategyKind::pfedla:
            f.up = n;
            f.down = n;
            break;
        case StrategyKind::fednova:
            f.up = n + 1; // parameters plus the U_i scalar
            f.down = n;
            break;
        case StrategyKind::fedbn:
            f.up = n - bn;
            f.down = n - bn;
            break;
        case StrategyKind::scaffold:
            f.up = 2 * n;
            f.down = 2 * n;
            break;
        case StrategyKind::feddc:
            f.up = 3 * n; // w_i, delta v_i, h_i
            f.down = 2 * n;
            break;
    }
    return f;
}

} // namespace fbsim
