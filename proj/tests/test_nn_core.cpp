#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numeric>

#include "fbsim/errors.hpp"
#include "fbsim/model.hpp"
#include "fbsim/optimizer.hpp"
#include "fbsim/rng.hpp"

using namespace fbsim;

namespace {

Batch random_batch(const ModelSpec& spec, std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    Batch b;
    b.n = n;
    b.input_dim = spec.input_dim;
    b.num_classes = spec.num_classes;
    b.features.resize(n * spec.input_dim);
    for (double& x : b.features) x = rng.normal();
    b.labels.resize(n * spec.num_classes);
    for (auto& y : b.labels) y = rng.uniform01() < 0.4 ? 1 : 0;
    return b;
}

double rel_err(const ParamVector& a, const ParamVector& f) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += (a.values()[i] - f.values()[i]) * (a.values()[i] - f.values()[i]);
        den += f.values()[i] * f.values()[i];
    }
    return std::sqrt(num) / std::max(std::sqrt(den), 1e-12);
}


bool same_values(const ParamVector& a, const ParamVector& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a.values()[i] != b.values()[i]) return false;
    return true;
}

} // namespace

TEST_CASE("the 3-4-2 batch-normed spec has 42 parameters in 8 segments") {
    ModelSpec spec = make_spec(3, {4}, 2, true);
    CHECK(spec.param_count() == 42);
    auto map = build_segment_map(spec);
    REQUIRE(map->size() == 8);
    CHECK((*map)[0].name == "h0.weight");
    CHECK((*map)[0].length == 12);
    CHECK((*map)[1].name == "h0.bias");
    CHECK((*map)[2].name == "h0.bn_gamma");
    CHECK((*map)[3].name == "h0.bn_beta");
    CHECK((*map)[4].name == "h0.bn_running_mean");
    CHECK((*map)[5].name == "h0.bn_running_var");
    CHECK((*map)[6].name == "head.weight");
    CHECK((*map)[6].length == 8);
    CHECK((*map)[7].name == "head.bias");
    CHECK((*map)[7].length == 2);
    CHECK(!is_trainable((*map)[4].kind));
    CHECK(!is_trainable((*map)[5].kind));
    CHECK(is_trainable((*map)[2].kind));
    CHECK(batch_norm_param_count(*map) == 16);
}

TEST_CASE("fresh models start with unit running variance and zero biases") {
    ModelSpec spec = make_spec(5, {6, 4}, 3, true);
    ParamVector p = build_model(spec, 9);
    auto bias = p.segment("h0.bias");
    for (double v : bias) CHECK(v == 0.0);
    for (double v : p.segment("h0.bn_gamma")) CHECK(v == 1.0);
    for (double v : p.segment("h0.bn_beta")) CHECK(v == 0.0);
    for (double v : p.segment("h1.bn_running_mean")) CHECK(v == 0.0);
    for (double v : p.segment("h1.bn_running_var")) CHECK(v == 1.0);
    // Glorot bound for h0.weight: sqrt(6 / (5 + 6)).
    double bound = std::sqrt(6.0 / 11.0);
    for (double v : p.segment("h0.weight")) {
        CHECK(v >= -bound);
        CHECK(v <= bound);
    }
    CHECK(same_values(build_model(spec, 9), p));
    CHECK(!same_values(build_model(spec, 10), p));
}

TEST_CASE("bce_with_logits: zero logits against y=[1,0] give 2 ln 2") {
    Batch b;
    b.n = 1;
    b.input_dim = 1;
    b.num_classes = 2;
    b.features = {0.0};
    b.labels = {1, 0};
    std::vector<double> logits = {0.0, 0.0};
    BceResult r = bce_with_logits(logits, b);
    CHECK(r.loss == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-15));
    CHECK(r.dlogits[0] == doctest::Approx(-0.5).epsilon(1e-15));
    CHECK(r.dlogits[1] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("bce_with_logits stays finite and tiny under saturation") {
    Batch b;
    b.n = 1;
    b.input_dim = 1;
    b.num_classes = 2;
    b.features = {0.0};
    b.labels = {1, 0};
    std::vector<double> logits = {60.0, -60.0}; // confidently correct
    BceResult r = bce_with_logits(logits, b);
    CHECK(std::isfinite(r.loss));
    CHECK(r.loss < 1e-20);
    logits = {-800.0, 800.0}; // confidently wrong: linear regime, no overflow
    r = bce_with_logits(logits, b);
    CHECK(std::isfinite(r.loss));
    CHECK(r.loss == doctest::Approx(1600.0).epsilon(1e-12));
}

TEST_CASE("bce mean-over-samples scaling") {
    Batch b;
    b.n = 2;
    b.input_dim = 1;
    b.num_classes = 1;
    b.features = {0.0, 0.0};
    b.labels = {1, 1};
    std::vector<double> logits = {0.0, 0.0};
    BceResult r = bce_with_logits(logits, b);
    CHECK(r.loss == doctest::Approx(std::log(2.0)).epsilon(1e-15)); // mean of two ln2 terms
    CHECK(r.dlogits[0] == doctest::Approx(-0.25).epsilon(1e-15));   // (sigma - y)/n
}

TEST_CASE("bce_from_probs matches the frozen value") {
    std::vector<double> probs = {0.9, 0.2, 0.8};
    std::vector<std::uint8_t> labels = {1, 0, 1};
    double loss = bce_from_probs(probs, labels, 1, 3);
    CHECK(loss == doctest::Approx(0.551648).epsilon(1e-5));
    // Clamping keeps p=0 / p=1 finite.
    std::vector<double> hard = {0.0, 1.0};
    std::vector<std::uint8_t> y2 = {1, 0};
    CHECK(std::isfinite(bce_from_probs(hard, y2, 1, 2)));
}

TEST_CASE("zero weights produce 0.5 probabilities everywhere") {
    ModelSpec spec = make_spec(4, {5}, 3, true);
    ParamVector p = build_model(spec, 3);
    p.fill(0.0);
    // keep running var at 1 so eval-mode normalization is defined
    for (double& v : p.segment("h0.bn_running_var")) v = 1.0;
    Batch b = random_batch(spec, 6, 11);
    ForwardTrace tr = forward_eval(p, spec, b);
    for (double z : tr.logits) CHECK(sigmoid(z) == 0.5);
}

TEST_CASE("train-mode batch norm maps a single sample to beta") {
    ModelSpec spec = make_spec(3, {4}, 2, true);
    ParamVector p = build_model(spec, 21);
    auto beta = p.segment("h0.bn_beta");
    for (std::size_t i = 0; i < beta.size(); ++i) beta[i] = 0.3 * (static_cast<double>(i) + 1);
    Batch b = random_batch(spec, 1, 5);
    ParamVector q = p;
    ForwardTrace tr = forward_train(q, spec, b);
    // n=1: xhat = 0, so act = tanh(beta).
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(tr.layers[0].act[i] == doctest::Approx(std::tanh(0.3 * (static_cast<double>(i) + 1)))
                                         .epsilon(1e-12));
}

TEST_CASE("forward_eval never mutates parameters") {
    ModelSpec spec = make_spec(6, {8, 4}, 3, true);
    ParamVector p = build_model(spec, 33);
    ParamVector before = p;
    Batch b = random_batch(spec, 10, 77);
    forward_eval(p, spec, b);
    CHECK(same_values(p, before));
}

TEST_CASE("forward_train updates running stats by EMA and only those") {
    ModelSpec spec = make_spec(6, {8}, 3, true);
    ParamVector p = build_model(spec, 33);
    ParamVector before = p;
    Batch b = random_batch(spec, 16, 78);
    forward_train(p, spec, b);
    bool stats_moved = false;
    for (const Segment& s : p.segments()) {
        auto pv = p.segment(s.name);
        auto bv = before.segment(s.name);
        if (is_trainable(s.kind)) {
            for (std::size_t i = 0; i < s.length; ++i) REQUIRE(pv[i] == bv[i]);
        } else {
            for (std::size_t i = 0; i < s.length; ++i)
                if (pv[i] != bv[i]) stats_moved = true;
        }
    }
    CHECK(stats_moved);

    // EMA oracle for the running mean of unit 0.
    ModelSpec tiny = make_spec(1, {1}, 1, true);
    ParamVector q = build_model(tiny, 4);
    auto w = q.segment("h0.weight");
    w[0] = 2.0;
    Batch tb;
    tb.n = 2;
    tb.input_dim = 1;
    tb.num_classes = 1;
    tb.features = {1.0, 3.0};
    tb.labels = {1, 0};
    forward_train(q, tiny, tb);
    // pre = [2, 6], batch mean 4, biased var 4; EMA with momentum 0.1
    CHECK(q.segment("h0.bn_running_mean")[0] == doctest::Approx(0.4).epsilon(1e-12));
    CHECK(q.segment("h0.bn_running_var")[0] ==
          doctest::Approx(0.9 * 1.0 + 0.1 * 4.0).epsilon(1e-12));
}

TEST_CASE("eval chunking invariance") {
    ModelSpec spec = make_spec(5, {7, 3}, 4, true);
    ParamVector p = build_model(spec, 8);
    Batch all = random_batch(spec, 9, 13);
    ForwardTrace whole = forward_eval(p, spec, all);
    for (std::size_t start : {std::size_t{0}, std::size_t{4}}) {
        std::size_t count = start == 0 ? 4 : 5;
        Batch part;
        part.n = count;
        part.input_dim = spec.input_dim;
        part.num_classes = spec.num_classes;
        part.features.assign(all.features.begin() + start * spec.input_dim,
                             all.features.begin() + (start + count) * spec.input_dim);
        part.labels.assign(count * spec.num_classes, 0);
        ForwardTrace piece = forward_eval(p, spec, part);
        for (std::size_t i = 0; i < count * spec.num_classes; ++i)
            CHECK(piece.logits[i] == whole.logits[start * spec.num_classes + i]);
    }
}

TEST_CASE("logistic regression gradient has the closed form (sigma(z)-y) x / n") {
    ModelSpec spec = make_spec(4, {}, 2, false); // no hidden layers: plain logistic head
    ParamVector p = build_model(spec, 17);
    Batch b = random_batch(spec, 5, 29);
    ParamVector q = p;
    ForwardTrace tr = forward_train(q, spec, b);
    BceResult bce = bce_with_logits(tr.logits, b);
    ParamVector g = backward(p, spec, tr, bce.dlogits);
    auto gw = g.segment("head.weight");
    auto gb = g.segment("head.bias");
    for (std::size_t c = 0; c < 2; ++c) {
        for (std::size_t j = 0; j < 4; ++j) {
            double expect = 0.0;
            for (std::size_t i = 0; i < 5; ++i)
                expect += (sigmoid(tr.logits[i * 2 + c]) - b.labels[i * 2 + c]) / 5.0 *
                          b.features[i * 4 + j];
            CHECK(gw[c * 4 + j] == doctest::Approx(expect).epsilon(1e-12));
        }
        double expect_b = 0.0;
        for (std::size_t i = 0; i < 5; ++i)
            expect_b += (sigmoid(tr.logits[i * 2 + c]) - b.labels[i * 2 + c]) / 5.0;
        CHECK(gb[c] == doctest::Approx(expect_b).epsilon(1e-12));
    }
}

TEST_CASE("analytic gradients match central differences across 24 instances") {
    struct Case {
        std::size_t in, n, classes;
        std::vector<std::size_t> hidden;
        bool bn;
    };
    std::vector<Case> cases = {
        {3, 1, 2, {4}, true},   {3, 5, 2, {4}, true},   {6, 4, 3, {5, 4}, true},
        {6, 4, 3, {5, 4}, false}, {2, 7, 1, {3}, true},  {5, 3, 4, {}, false},
        {4, 2, 2, {6, 3}, true}, {8, 6, 5, {10}, false},
    };
    int instances = 0;
    for (const Case& c : cases) {
        for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
            ModelSpec spec = make_spec(c.in, c.hidden, c.classes, c.bn);
            ParamVector p = build_model(spec, seed * 101);
            Batch b = random_batch(spec, c.n, seed * 31 + 7);

            ParamVector q = p;
            ForwardTrace tr = forward_train(q, spec, b);
            BceResult bce = bce_with_logits(tr.logits, b);
            ParamVector analytic = backward(p, spec, tr, bce.dlogits);

            auto loss_fn = [&](const ParamVector& params) {
                ParamVector scratch = params;
                ForwardTrace t = forward_train(scratch, spec, b);
                return bce_with_logits(t.logits, b).loss;
            };
            ParamVector fd = finite_diff_grad(p, loss_fn, 1e-6);
            CHECK(rel_err(analytic, fd) < 1e-4);
            ++instances;
        }
    }
    CHECK(instances == 24);
}

TEST_CASE("backward_from_features matches central differences (train and eval)") {
    ModelSpec spec = make_spec(4, {6, 3}, 2, true);
    ParamVector p = build_model(spec, 55);
    Batch b = random_batch(spec, 5, 3);
    const std::size_t F = spec.feature_dim();
    // Fixed probe vector: loss = sum_i <probe, f_i>.
    std::vector<double> probe(F);
    for (std::size_t j = 0; j < F; ++j) probe[j] = 0.1 * (static_cast<double>(j) + 1.0);

    for (bool train : {true, false}) {
        ForwardTrace tr;
        ParamVector q = p;
        tr = train ? forward_train(q, spec, b) : forward_eval(p, spec, b);
        std::vector<double> dfeat(b.n * F);
        for (std::size_t i = 0; i < b.n; ++i)
            for (std::size_t j = 0; j < F; ++j) dfeat[i * F + j] = probe[j];
        ParamVector analytic = backward_from_features(p, spec, tr, dfeat);

        auto loss_fn = [&](const ParamVector& params) {
            ParamVector scratch = params;
            ForwardTrace t = train ? forward_train(scratch, spec, b)
                                   : forward_eval(params, spec, b);
            auto f = t.features();
            double s = 0.0;
            for (std::size_t i = 0; i < b.n; ++i)
                for (std::size_t j = 0; j < F; ++j) s += probe[j] * f[i * F + j];
            return s;
        };
        ParamVector fd = finite_diff_grad(p, loss_fn, 1e-6);
        CHECK(rel_err(analytic, fd) < 1e-4);
    }
}

TEST_CASE("backward rejects eval traces; finite_diff_grad rejects bad epsilon") {
    ModelSpec spec = make_spec(3, {4}, 2, true);
    ParamVector p = build_model(spec, 1);
    Batch b = random_batch(spec, 3, 1);
    ForwardTrace tr = forward_eval(p, spec, b);
    std::vector<double> dl(b.n * 2, 0.1);
    CHECK_THROWS_AS(backward(p, spec, tr, dl), InvalidArgument);
    auto loss_fn = [](const ParamVector&) { return 0.0; };
    CHECK_THROWS_AS(finite_diff_grad(p, loss_fn, 0.0), InvalidArgument);
    CHECK_THROWS_AS(finite_diff_grad(p, loss_fn, -1e-6), InvalidArgument);
}

TEST_CASE("cosine similarity frozen examples and failure modes") {
    std::vector<double> a = {1.0, 0.0};
    std::vector<double> b = {1.0, 1.0};
    CHECK(cosine_similarity(a, b) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-15));
    CHECK(cosine_similarity(a, a) == doctest::Approx(1.0).epsilon(1e-15));
    std::vector<double> neg = {-1.0, 0.0};
    CHECK(cosine_similarity(a, neg) == doctest::Approx(-1.0).epsilon(1e-15));
    std::vector<double> zero = {0.0, 0.0};
    CHECK_THROWS_AS(cosine_similarity(a, zero), InvalidArgument);
    std::vector<double> three = {1.0, 2.0, 3.0};
    CHECK_THROWS_AS(cosine_similarity(a, three), InvalidArgument);
}

TEST_CASE("SGD step: p=[1], g=[2], eta=0.5 lands on zero") {
    ModelSpec spec = make_spec(1, {}, 1, false); // head.weight (1) + head.bias (1)
    ParamVector p = build_model(spec, 2);
    p.segment("head.weight")[0] = 1.0;
    p.segment("head.bias")[0] = 5.0;
    ParamVector g = ParamVector::zeros_like(p);
    g.segment("head.weight")[0] = 2.0;
    OptimizerConfig oc;
    oc.mode = OptimizerMode::sgd;
    Optimizer opt(oc);
    opt.reset(p.size());
    opt.step(p, g, 0.5);
    CHECK(p.segment("head.weight")[0] == 0.0);
    CHECK(p.segment("head.bias")[0] == 5.0);
}

TEST_CASE("Adam first step has magnitude ~eta against the sign of the gradient") {
    ModelSpec spec = make_spec(1, {}, 2, false);
    ParamVector p = build_model(spec, 2);
    p.fill(1.0);
    ParamVector g = ParamVector::zeros_like(p);
    g.segment("head.weight")[0] = 3.0;
    g.segment("head.weight")[1] = -0.001;
    OptimizerConfig oc; // adam defaults
    Optimizer opt(oc);
    opt.reset(p.size());
    opt.step(p, g, 0.01);
    // First step: eta * g / (|g| + eps_hat); essentially eta * sign(g).
    CHECK(p.segment("head.weight")[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-5));
    CHECK(p.segment("head.weight")[1] == doctest::Approx(1.0 + 0.01).epsilon(1e-3));
    // Zero-gradient coordinates stay put.
    CHECK(p.segment("head.bias")[0] == 1.0);
}

TEST_CASE("Adam two-step oracle on a single coordinate") {
    // Hand-computed: g = 1 both steps, eta = 0.1, defaults.
    ModelSpec spec = make_spec(1, {}, 1, false);
    ParamVector p = build_model(spec, 2);
    p.fill(0.0);
    ParamVector g = ParamVector::zeros_like(p);
    g.segment("head.weight")[0] = 1.0;
    Optimizer opt{OptimizerConfig{}};
    opt.reset(p.size());
    opt.step(p, g, 0.1);
    double m1 = 0.1, v1 = 0.001;
    double mh = m1 / (1 - 0.9), vh = v1 / (1 - 0.999);
    double x1 = -0.1 * mh / (std::sqrt(vh) + 1e-8);
    CHECK(p.segment("head.weight")[0] == doctest::Approx(x1).epsilon(1e-12));
    opt.step(p, g, 0.1);
    double m2 = 0.9 * m1 + 0.1, v2 = 0.999 * v1 + 0.001;
    double mh2 = m2 / (1 - 0.81), vh2 = v2 / (1 - 0.999 * 0.999);
    double x2 = x1 - 0.1 * mh2 / (std::sqrt(vh2) + 1e-8);
    CHECK(p.segment("head.weight")[0] == doctest::Approx(x2).epsilon(1e-12));
}

TEST_CASE("optimizer rejects non-finite gradients with a named location") {
    ModelSpec spec = make_spec(2, {3}, 2, true);
    ParamVector p = build_model(spec, 6);
    ParamVector g = ParamVector::zeros_like(p);
    g.segment("h0.bias")[1] = std::numeric_limits<double>::quiet_NaN();
    Optimizer opt{OptimizerConfig{}};
    opt.reset(p.size());
    try {
        opt.step(p, g, 0.1);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("h0.bias") != std::string::npos);
    }
}

TEST_CASE("optimizer never touches running statistics") {
    ModelSpec spec = make_spec(2, {3}, 2, true);
    ParamVector p = build_model(spec, 6);
    ParamVector g = ParamVector::zeros_like(p);
    g.fill(1.0); // even if a bug wrote grads into stat slots
    ParamVector before = p;
    Optimizer opt{OptimizerConfig{}};
    opt.reset(p.size());
    opt.step(p, g, 0.1);
    CHECK(p.segment("h0.bn_running_mean")[0] ==
          before.segment("h0.bn_running_mean")[0]);
    CHECK(p.segment("h0.bn_running_var")[0] ==
          before.segment("h0.bn_running_var")[0]);
    CHECK(p.segment("h0.bias")[0] != before.segment("h0.bias")[0]);
}

TEST_CASE("model spec validation") {
    CHECK_THROWS_AS(make_spec(0, {4}, 2, true), ConfigError);
    ModelSpec mismatch = make_spec(3, {4, 5}, 2, true);
    mismatch.batch_norm = {1}; // wrong arity
    CHECK_THROWS_AS(mismatch.validate(), ConfigError);
    ModelSpec eps = make_spec(3, {4}, 2, true);
    eps.bn_eps = 0.0;
    CHECK_THROWS_AS(eps.validate(), ConfigError);
    ModelSpec mom = make_spec(3, {4}, 2, true);
    mom.bn_momentum = 1.5;
    CHECK_THROWS_AS(mom.validate(), ConfigError);
}
