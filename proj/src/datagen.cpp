#include "fbsim/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"

#include "fbsim/rng.hpp"
#include "fbsim/serialize.hpp"

namespace fbsim {

namespace {
constexpr double kPrototypeScale = 2.0; // prototype entries ~ N(0, scale^2)
constexpr double kCoOccurRate = 0.2;    // chance of each extra positive label
constexpr int kMaxAttempts = 10;

// stream tags for derive_seed
constexpr std::uint64_t kPoolTag = 0x706f6f6cull;  // "pool"
constexpr std::uint64_t kPartTag = 0x70617274ull;  // "part"
constexpr std::uint64_t kShiftTag = 0x73686674ull; // "shft"
} // namespace

const char* scenario_name(ScenarioKind k) {
    switch (k) {
        case ScenarioKind::ds1_iid: return "ds1";
        case ScenarioKind::ds2_label_skew: return "ds2";
        case ScenarioKind::ds3_label_and_concept_shift: return "ds3";
    }
    return "?";
}

ScenarioKind scenario_from_name(const std::string& s) {
    if (s == "ds1") return ScenarioKind::ds1_iid;
    if (s == "ds2") return ScenarioKind::ds2_label_skew;
    if (s == "ds3") return ScenarioKind::ds3_label_and_concept_shift;
    throw ConfigError("unknown scenario '" + s + "' (expected ds1, ds2 or ds3)");
}

void SyntheticConfig::validate() const {
    if (input_dim == 0) throw ConfigError("data: input_dim must be positive");
    if (num_classes == 0) throw ConfigError("data: num_classes must be positive");
    if (num_clients == 0) throw ConfigError("data: num_clients must be >= 1");
    if (samples_per_client_mean == 0)
        throw ConfigError("data: samples_per_client_mean must be positive");
    if (!(dirichlet_beta > 0)) throw ConfigError("data: dirichlet_beta must be > 0");
    if (quantity_skew_exponent < 0)
        throw ConfigError("data: quantity_skew_exponent must be >= 0");
    if (!(label_noise_rate >= 0 && label_noise_rate < 0.5))
        throw ConfigError("data: label_noise_rate must be in [0, 0.5)");
    if (concept_shift_strength < 0)
        throw ConfigError("data: concept_shift_strength must be >= 0");
    if (feature_noise_sigma < 0) throw ConfigError("data: feature_noise_sigma must be >= 0");
}

bool ShiftTransform::is_identity() const {
    for (double s : scale)
        if (s != 1.0) return false;
    for (double o : offset)
        if (o != 0.0) return false;
    return true;
}

ShiftTransform ShiftTransform::identity(std::size_t input_dim) {
    ShiftTransform t;
    t.scale.assign(input_dim, 1.0);
    t.offset.assign(input_dim, 0.0);
    return t;
}

double js_divergence(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size() || p.empty())
        throw InvalidArgument("js_divergence: distributions must have equal nonzero size");
    double ps = 0, qs = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] < 0 || q[i] < 0) throw InvalidArgument("js_divergence: negative mass");
        ps += p[i];
        qs += q[i];
    }
    if (ps <= 0 || qs <= 0) throw InvalidArgument("js_divergence: zero-mass distribution");
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        double pi = p[i] / ps, qi = q[i] / qs;
        double m = 0.5 * (pi + qi);
        if (pi > 0) acc += 0.5 * pi * std::log(pi / m);
        if (qi > 0) acc += 0.5 * qi * std::log(qi / m);
    }
    return std::max(0.0, acc);
}

SamplePool generate_global_pool(const SyntheticConfig& cfg) {
    cfg.validate();
    const std::size_t d = cfg.input_dim;
    const std::size_t P = cfg.num_classes;
    const std::size_t train_target = cfg.num_clients * cfg.samples_per_client_mean;
    const std::size_t total = (train_target * 5 + 3) / 4; // test split = 20%

    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
        Rng rng(derive_seed({cfg.seed, kPoolTag, static_cast<std::uint64_t>(attempt)}));

        std::vector<double> protos(P * d);
        for (double& x : protos) x = kPrototypeScale * rng.normal();

        SamplePool pool;
        pool.input_dim = d;
        pool.num_classes = P;
        pool.train_count = train_target;
        pool.features.assign(total * d, 0.0);
        pool.labels.assign(total * P, 0);
        pool.primary.assign(total, 0);

        for (std::size_t i = 0; i < total; ++i) {
            std::uint8_t prim = static_cast<std::uint8_t>(rng.index(P));
            std::uint8_t* y = pool.labels.data() + i * P;
            y[prim] = 1;
            for (std::size_t c = 0; c < P; ++c)
                if (c != prim && rng.uniform01() < kCoOccurRate) y[c] = 1;
            if (cfg.label_noise_rate > 0) {
                // the primary label is the sample's identity (and the
                // partition key), so noise only touches the other classes
                for (std::size_t c = 0; c < P; ++c)
                    if (c != prim && rng.uniform01() < cfg.label_noise_rate) y[c] ^= 1;
            }
            pool.primary[i] = prim;

            double* x = pool.features.data() + i * d;
            std::size_t pos = 0;
            for (std::size_t c = 0; c < P; ++c) {
                if (!y[c]) continue;
                ++pos;
                const double* pc = protos.data() + c * d;
                for (std::size_t j = 0; j < d; ++j) x[j] += pc[j];
            }
            const double inv = 1.0 / static_cast<double>(pos);
            for (std::size_t j = 0; j < d; ++j)
                x[j] = x[j] * inv + cfg.feature_noise_sigma * rng.normal();
        }

        // shuffle rows so the 20% test tail is a random subsample
        std::vector<std::size_t> order(total);
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(order);
        SamplePool shuffled = pool;
        for (std::size_t i = 0; i < total; ++i) {
            std::size_t s = order[i];
            std::copy_n(pool.features.data() + s * d, d, shuffled.features.data() + i * d);
            std::copy_n(pool.labels.data() + s * P, P, shuffled.labels.data() + i * P);
            shuffled.primary[i] = pool.primary[s];
        }

        bool ok = true;
        for (std::size_t c = 0; c < P && ok; ++c) {
            bool seen = false;
            for (std::size_t i = 0; i < total && !seen; ++i)
                seen = shuffled.labels[i * P + c] != 0;
            ok = seen;
        }
        if (ok) return shuffled;
    }
    throw ConfigError("pool generation: some class had no positive example after " +
                      std::to_string(kMaxAttempts) + " attempts; enlarge the pool or reduce "
                      "label_noise_rate");
}

namespace {

// Largest-remainder rounding of share*total to integers summing to total.
std::vector<std::size_t> quota_round(const std::vector<double>& share, std::size_t total) {
    const std::size_t k = share.size();
    std::vector<std::size_t> out(k, 0);
    std::vector<std::pair<double, std::size_t>> frac(k);
    std::size_t assigned = 0;
    for (std::size_t j = 0; j < k; ++j) {
        double t = share[j] * static_cast<double>(total);
        out[j] = static_cast<std::size_t>(t);
        assigned += out[j];
        frac[j] = {t - std::floor(t), j};
    }
    std::stable_sort(frac.begin(), frac.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t r = 0; assigned < total; ++r, ++assigned) out[frac[r % k].second]++;
    return out;
}

std::vector<ClientDataset> make_clients(const SamplePool& pool, const SyntheticConfig& cfg,
                                        const std::vector<std::vector<std::size_t>>& assign) {
    std::vector<ClientDataset> clients(cfg.num_clients);
    for (std::size_t j = 0; j < cfg.num_clients; ++j) {
        ClientDataset& c = clients[j];
        c.client_id = j;
        c.input_dim = pool.input_dim;
        c.num_classes = pool.num_classes;
        c.shift = ShiftTransform::identity(pool.input_dim);
        c.features.reserve(assign[j].size() * pool.input_dim);
        c.labels.reserve(assign[j].size() * pool.num_classes);
        for (std::size_t s : assign[j]) {
            const double* x = pool.features.data() + s * pool.input_dim;
            c.features.insert(c.features.end(), x, x + pool.input_dim);
            const std::uint8_t* y = pool.labels.data() + s * pool.num_classes;
            c.labels.insert(c.labels.end(), y, y + pool.num_classes);
        }
    }
    return clients;
}

} // namespace

DatasetBundle partition(const SamplePool& pool, const SyntheticConfig& cfg,
                        ScenarioKind scenario) {
    cfg.validate();
    if (pool.total() == 0) throw InvalidArgument("partition: empty pool");
    if (cfg.num_clients > pool.train_count)
        throw InvalidArgument("partition: more clients than training samples");

    const std::size_t K = cfg.num_clients;
    const std::size_t P = pool.num_classes;
    const std::size_t train_n = pool.train_count;

    DatasetBundle bundle;
    bundle.scenario = scenario;
    bundle.config = cfg;

    if (scenario == ScenarioKind::ds1_iid) {
        Rng rng(derive_seed({cfg.seed, kPartTag, 0}));
        std::vector<std::size_t> order(train_n);
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(order);
        std::vector<std::vector<std::size_t>> assign(K);
        for (std::size_t i = 0; i < train_n; ++i) assign[i % K].push_back(order[i]);
        bundle.clients = make_clients(pool, cfg, assign);
    } else {
        // ds2 and ds3 share the assignment stream so ds3 with shift strength 0
        // reproduces ds2 exactly.
        bool done = false;
        for (int attempt = 0; attempt < kMaxAttempts && !done; ++attempt) {
            Rng rng(derive_seed({cfg.seed, kPartTag, static_cast<std::uint64_t>(attempt)}));

            // power-law size weights, rank order shuffled across clients
            std::vector<double> sizew(K);
            std::vector<std::size_t> rank(K);
            std::iota(rank.begin(), rank.end(), 0);
            rng.shuffle(rank);
            for (std::size_t j = 0; j < K; ++j)
                sizew[rank[j]] =
                    std::pow(static_cast<double>(j + 1), -cfg.quantity_skew_exponent);

            std::vector<std::vector<std::size_t>> by_class(P);
            for (std::size_t i = 0; i < train_n; ++i) by_class[pool.primary[i]].push_back(i);

            std::vector<std::vector<std::size_t>> assign(K);
            std::vector<double> share(K);
            for (std::size_t c = 0; c < P; ++c) {
                rng.dirichlet_symmetric(cfg.dirichlet_beta, share);
                double norm = 0.0;
                for (std::size_t j = 0; j < K; ++j) {
                    share[j] *= sizew[j];
                    norm += share[j];
                }
                for (double& s : share) s /= norm;
                auto& idx = by_class[c];
                rng.shuffle(idx);
                std::vector<std::size_t> quota = quota_round(share, idx.size());
                std::size_t cursor = 0;
                for (std::size_t j = 0; j < K; ++j) {
                    for (std::size_t t = 0; t < quota[j]; ++t)
                        assign[j].push_back(idx[cursor++]);
                }
            }

            bool empty = false;
            for (const auto& a : assign) empty = empty || a.empty();
            if (empty) continue;

            bundle.clients = make_clients(pool, cfg, assign);
            done = true;
        }
        if (!done)
            throw ConfigError("partition: a client received 0 samples after " +
                              std::to_string(kMaxAttempts) +
                              " attempts; raise dirichlet_beta or samples_per_client_mean");

        if (scenario == ScenarioKind::ds3_label_and_concept_shift) {
            Rng shift_rng(derive_seed({cfg.seed, kShiftTag, 0}));
            const double s = cfg.concept_shift_strength;
            for (ClientDataset& c : bundle.clients) {
                for (std::size_t j = 0; j < c.input_dim; ++j) {
                    // scale in [1-s, 1+s]: for s > 1 some features are damped,
                    // erased, or sign-flipped per client — clients then disagree
                    // about what a feature *means*, the strong form of concept
                    // shift (same label, different feature distribution)
                    c.shift.scale[j] = 1.0 + shift_rng.uniform(-s, s);
                    c.shift.offset[j] = shift_rng.uniform(-s, s);
                }
                const std::size_t n = c.n();
                for (std::size_t i = 0; i < n; ++i) {
                    double* x = c.features.data() + i * c.input_dim;
                    for (std::size_t j = 0; j < c.input_dim; ++j)
                        x[j] = c.shift.scale[j] * x[j] + c.shift.offset[j];
                }
            }
        }
    }

    bundle.test.input_dim = pool.input_dim;
    bundle.test.num_classes = P;
    bundle.test.shift_free = true;
    const std::size_t test_n = pool.total() - train_n;
    bundle.test.features.assign(pool.features.begin() + train_n * pool.input_dim,
                                pool.features.end());
    bundle.test.labels.assign(pool.labels.begin() + train_n * P, pool.labels.end());
    if (bundle.test.n() != test_n) throw InvalidArgument("partition: test split size mismatch");
    return bundle;
}

HeterogeneityReport heterogeneity_report(const std::vector<ClientDataset>& clients) {
    if (clients.empty()) throw InvalidArgument("heterogeneity_report: no clients");
    const std::size_t K = clients.size();
    const std::size_t P = clients[0].num_classes;
    HeterogeneityReport rep;
    rep.prevalence.assign(K, std::vector<double>(P, 0.0));
    rep.sizes.resize(K);
    for (std::size_t j = 0; j < K; ++j) {
        const ClientDataset& c = clients[j];
        rep.sizes[j] = c.n();
        double total = 0.0;
        for (std::size_t i = 0; i < c.n(); ++i)
            for (std::size_t p = 0; p < P; ++p)
                if (c.labels[i * P + p]) {
                    rep.prevalence[j][p] += 1.0;
                    total += 1.0;
                }
        if (total > 0)
            for (double& v : rep.prevalence[j]) v /= total;
    }
    rep.js.assign(K, std::vector<double>(K, 0.0));
    double sum = 0.0;
    std::size_t pairs = 0;
    for (std::size_t a = 0; a < K; ++a) {
        for (std::size_t b = a + 1; b < K; ++b) {
            double v = js_divergence(rep.prevalence[a], rep.prevalence[b]);
            rep.js[a][b] = rep.js[b][a] = v;
            rep.max_js = std::max(rep.max_js, v);
            sum += v;
            ++pairs;
        }
    }
    rep.mean_js = pairs ? sum / static_cast<double>(pairs) : 0.0;
    return rep;
}

namespace {

void pack_labels(ByteWriter& w, std::span<const std::uint8_t> labels, std::size_t n,
                 std::size_t P) {
    const std::size_t stride = (P + 7) / 8;
    std::vector<std::uint8_t> packed(n * stride, 0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < P; ++p)
            if (labels[i * P + p]) packed[i * stride + p / 8] |= std::uint8_t(1u << (p % 8));
    w.bytes(packed);
}

std::vector<std::uint8_t> unpack_labels(ByteReader& r, std::size_t n, std::size_t P) {
    const std::size_t stride = (P + 7) / 8;
    std::vector<std::uint8_t> packed(n * stride);
    r.bytes_into(packed);
    std::vector<std::uint8_t> labels(n * P, 0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < P; ++p)
            labels[i * P + p] = (packed[i * stride + p / 8] >> (p % 8)) & 1u;
    return labels;
}

void config_to_json(nlohmann::json& j, const SyntheticConfig& c) {
    j["input_dim"] = c.input_dim;
    j["num_classes"] = c.num_classes;
    j["num_clients"] = c.num_clients;
    j["samples_per_client_mean"] = c.samples_per_client_mean;
    j["quantity_skew_exponent"] = c.quantity_skew_exponent;
    j["dirichlet_beta"] = c.dirichlet_beta;
    j["concept_shift_strength"] = c.concept_shift_strength;
    j["label_noise_rate"] = c.label_noise_rate;
    j["feature_noise_sigma"] = c.feature_noise_sigma;
    j["seed"] = c.seed;
}

void config_from_json(const nlohmann::json& j, SyntheticConfig& c) {
    j.at("input_dim").get_to(c.input_dim);
    j.at("num_classes").get_to(c.num_classes);
    j.at("num_clients").get_to(c.num_clients);
    j.at("samples_per_client_mean").get_to(c.samples_per_client_mean);
    j.at("quantity_skew_exponent").get_to(c.quantity_skew_exponent);
    j.at("dirichlet_beta").get_to(c.dirichlet_beta);
    j.at("concept_shift_strength").get_to(c.concept_shift_strength);
    j.at("label_noise_rate").get_to(c.label_noise_rate);
    j.at("feature_noise_sigma").get_to(c.feature_noise_sigma);
    j.at("seed").get_to(c.seed);
}

} // namespace

void save_dataset(const DatasetBundle& bundle, const std::filesystem::path& path) {
    if (bundle.clients.empty()) throw InvalidArgument("save_dataset: empty client list");
    const std::size_t d = bundle.clients[0].input_dim;
    const std::size_t P = bundle.clients[0].num_classes;

    ByteWriter w;
    w.magic();
    w.u64(bundle.clients.size());
    w.u64(d);
    w.u64(P);
    for (const ClientDataset& c : bundle.clients) {
        if (c.input_dim != d || c.num_classes != P)
            throw InvalidArgument("save_dataset: inconsistent client shapes");
        w.u64(c.client_id);
        w.u64(c.n());
        w.f64_span(c.shift.scale);
        w.f64_span(c.shift.offset);
        w.f64_span(c.features);
        pack_labels(w, c.labels, c.n(), P);
    }
    w.u64(static_cast<std::uint64_t>(bundle.scenario));
    w.u64(bundle.test.n());
    w.u8(bundle.test.shift_free ? 1 : 0);
    w.f64_span(bundle.test.features);
    pack_labels(w, bundle.test.labels, bundle.test.n(), P);
    write_file_atomic(path, w.buffer());

    nlohmann::json j;
    j["scenario"] = scenario_name(bundle.scenario);
    config_to_json(j["config"], bundle.config);
    std::string text = j.dump(2);
    text.push_back('\n');
    write_file_atomic(path.string() + ".json",
                      std::span<const std::uint8_t>(
                          reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

DatasetBundle load_dataset(const std::filesystem::path& path) {
    ByteReader r(read_file(path));
    r.magic();
    const std::size_t K = static_cast<std::size_t>(r.u64());
    const std::size_t d = static_cast<std::size_t>(r.u64());
    const std::size_t P = static_cast<std::size_t>(r.u64());
    if (K == 0) throw IoError("dataset has zero clients (byte offset 6)");
    if (d == 0 || P == 0) throw IoError("dataset has zero input_dim or num_classes");

    DatasetBundle bundle;
    bundle.clients.resize(K);
    for (std::size_t j = 0; j < K; ++j) {
        ClientDataset& c = bundle.clients[j];
        c.client_id = r.u64();
        const std::size_t n = static_cast<std::size_t>(r.u64());
        c.input_dim = d;
        c.num_classes = P;
        c.shift.scale.resize(d);
        c.shift.offset.resize(d);
        r.f64_into(c.shift.scale);
        r.f64_into(c.shift.offset);
        c.features.resize(n * d);
        r.f64_into(c.features);
        c.labels = unpack_labels(r, n, P);
    }
    std::uint64_t sc = r.u64();
    if (sc > 2)
        throw IoError("bad scenario tag " + std::to_string(sc) + " at byte offset " +
                      std::to_string(r.offset() - 8));
    bundle.scenario = static_cast<ScenarioKind>(sc);
    const std::size_t test_n = static_cast<std::size_t>(r.u64());
    bundle.test.input_dim = d;
    bundle.test.num_classes = P;
    bundle.test.shift_free = r.u8() != 0;
    bundle.test.features.resize(test_n * d);
    r.f64_into(bundle.test.features);
    bundle.test.labels = unpack_labels(r, test_n, P);
    r.expect_end();

    bundle.config.input_dim = d;
    bundle.config.num_classes = P;
    bundle.config.num_clients = K;
    std::filesystem::path sidecar = path.string() + ".json";
    if (std::filesystem::exists(sidecar)) {
        auto raw = read_file(sidecar);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(raw.begin(), raw.end());
            config_from_json(j.at("config"), bundle.config);
        } catch (const nlohmann::json::exception& e) {
            throw IoError("bad dataset sidecar " + sidecar.string() + ": " + e.what());
        }
    }
    return bundle;
}

} // namespace fbsim
