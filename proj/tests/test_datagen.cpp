#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include "fbsim/datagen.hpp"
#include "fbsim/errors.hpp"

namespace fs = std::filesystem;
using namespace fbsim;

namespace {

SyntheticConfig small_cfg(std::uint64_t seed = 1) {
    SyntheticConfig c;
    c.input_dim = 12;
    c.num_classes = 6;
    c.num_clients = 5;
    c.samples_per_client_mean = 120;
    c.seed = seed;
    return c;
}

bool bundles_equal(const DatasetBundle& a, const DatasetBundle& b) {
    if (a.scenario != b.scenario || a.clients.size() != b.clients.size()) return false;
    for (std::size_t i = 0; i < a.clients.size(); ++i) {
        const ClientDataset &x = a.clients[i], &y = b.clients[i];
        if (x.client_id != y.client_id || x.features != y.features || x.labels != y.labels)
            return false;
        if (x.shift.scale != y.shift.scale || x.shift.offset != y.shift.offset) return false;
    }
    return a.test.features == b.test.features && a.test.labels == b.test.labels;
}

double mean_pairwise_js(const DatasetBundle& b) {
    return heterogeneity_report(b.clients).mean_js;
}

struct TmpDir {
    fs::path path;
    TmpDir() {
        path = fs::temp_directory_path() /
               ("fbsim_datagen_" + std::to_string(::getpid()) + "_" +
                std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        fs::create_directories(path);
    }
    ~TmpDir() { fs::remove_all(path); }
};

} // namespace

TEST_CASE("js_divergence frozen oracle values") {
    std::vector<double> p = {0.7, 0.3}, q = {0.3, 0.7};
    CHECK(js_divergence(p, q) == doctest::Approx(0.08228287850505178).epsilon(1e-12));
    CHECK(js_divergence(q, p) == doctest::Approx(0.08228287850505178).epsilon(1e-12));
    std::vector<double> a = {1.0, 0.0}, b = {0.0, 1.0};
    CHECK(js_divergence(a, b) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(js_divergence(p, p) == 0.0);
    std::vector<double> r = {0.5, 0.25, 0.25}, s = {0.25, 0.5, 0.25};
    CHECK(js_divergence(r, s) == doctest::Approx(0.04247475919884931).epsilon(1e-12));
    // Inputs are normalized internally: counts work too.
    std::vector<double> c1 = {2.0, 6.0}, c2 = {4.0, 4.0};
    CHECK(js_divergence(c1, c2) == doctest::Approx(0.033822075568605205).epsilon(1e-12));
}

TEST_CASE("pool generation is deterministic and class-covering") {
    SyntheticConfig cfg = small_cfg();
    SamplePool p1 = generate_global_pool(cfg);
    SamplePool p2 = generate_global_pool(cfg);
    CHECK(p1.features == p2.features);
    CHECK(p1.labels == p2.labels);
    CHECK(p1.primary == p2.primary);

    // 25% on top of the train pool is the test share: total = train * 5/4.
    CHECK(p1.train_count == cfg.num_clients * cfg.samples_per_client_mean);
    CHECK(p1.total() >= p1.train_count + p1.train_count / 5);

    std::vector<std::size_t> counts(cfg.num_classes, 0);
    for (std::size_t i = 0; i < p1.total(); ++i)
        for (std::size_t c = 0; c < cfg.num_classes; ++c)
            counts[c] += p1.labels[i * cfg.num_classes + c];
    for (std::size_t c = 0; c < cfg.num_classes; ++c) CHECK(counts[c] > 0);

    SamplePool p3 = generate_global_pool(small_cfg(2));
    CHECK(p1.features != p3.features);
}

TEST_CASE("multi-label co-occurrence sits near its configured rate") {
    SyntheticConfig cfg = small_cfg();
    cfg.samples_per_client_mean = 400;
    SamplePool pool = generate_global_pool(cfg);
    double label_sum = 0.0;
    for (std::uint8_t y : pool.labels) label_sum += y;
    double per_sample = label_sum / static_cast<double>(pool.total());
    // primary + Bernoulli(0.2) over the other 5 classes = 2.0 expected
    CHECK(per_sample > 1.6);
    CHECK(per_sample < 2.4);
    // every sample keeps its primary label
    for (std::size_t i = 0; i < pool.total(); ++i)
        CHECK(pool.labels[i * cfg.num_classes + pool.primary[i]] == 1);
}

TEST_CASE("zero feature noise collapses samples onto prototype mixtures") {
    SyntheticConfig cfg = small_cfg();
    cfg.feature_noise_sigma = 0.0;
    SamplePool pool = generate_global_pool(cfg);
    // With no noise, features are a pure function of the label set.
    std::map<std::vector<std::uint8_t>, std::vector<double>> seen;
    for (std::size_t i = 0; i < pool.total(); ++i) {
        std::vector<std::uint8_t> key(pool.labels.begin() + i * cfg.num_classes,
                                      pool.labels.begin() + (i + 1) * cfg.num_classes);
        std::vector<double> f(pool.features.begin() + i * cfg.input_dim,
                              pool.features.begin() + (i + 1) * cfg.input_dim);
        auto [it, fresh] = seen.emplace(std::move(key), std::move(f));
        if (!fresh)
            for (std::size_t j = 0; j < cfg.input_dim; ++j)
                REQUIRE(it->second[j] == pool.features[i * cfg.input_dim + j]);
    }
    CHECK(seen.size() > 1);
}

TEST_CASE("ds1 splits round-robin: equal sizes, near-identical label mixes") {
    SyntheticConfig cfg;
    cfg.seed = 1; // defaults: K=7, 500 per client, 8 classes
    SamplePool pool = generate_global_pool(cfg);
    DatasetBundle b = partition(pool, cfg, ScenarioKind::ds1_iid);
    REQUIRE(b.clients.size() == 7);
    std::size_t total = 0;
    for (const ClientDataset& c : b.clients) {
        CHECK(c.n() == 500);
        total += c.n();
        CHECK(c.shift.is_identity());
    }
    CHECK(total == pool.train_count);
    HeterogeneityReport rep = heterogeneity_report(b.clients);
    CHECK(rep.max_js < 0.01);
}

TEST_CASE("ds2 skews labels and sizes; heterogeneity well above ds1") {
    SyntheticConfig cfg; // defaults, beta = 0.1
    cfg.seed = 3;
    SamplePool pool = generate_global_pool(cfg);
    DatasetBundle d1 = partition(pool, cfg, ScenarioKind::ds1_iid);
    DatasetBundle d2 = partition(pool, cfg, ScenarioKind::ds2_label_skew);

    std::size_t total = 0, mn = SIZE_MAX, mx = 0;
    for (const ClientDataset& c : d2.clients) {
        REQUIRE(c.n() > 0);
        total += c.n();
        mn = std::min(mn, c.n());
        mx = std::max(mx, c.n());
    }
    CHECK(total == pool.train_count); // conservation
    CHECK(mx > mn);                   // quantity skew

    double j1 = mean_pairwise_js(d1), j2 = mean_pairwise_js(d2);
    CHECK(j2 > 5.0 * j1);
}

TEST_CASE("ds3 with zero shift strength is exactly ds2") {
    SyntheticConfig cfg = small_cfg(9);
    cfg.concept_shift_strength = 0.0;
    SamplePool pool = generate_global_pool(cfg);
    DatasetBundle d2 = partition(pool, cfg, ScenarioKind::ds2_label_skew);
    DatasetBundle d3 = partition(pool, cfg, ScenarioKind::ds3_label_and_concept_shift);
    d3.scenario = d2.scenario; // compare everything except the tag
    CHECK(bundles_equal(d2, d3));
}

TEST_CASE("ds3 applies per-client affine shifts but leaves the test split alone") {
    SyntheticConfig cfg = small_cfg(4);
    SamplePool pool = generate_global_pool(cfg);
    DatasetBundle d2 = partition(pool, cfg, ScenarioKind::ds2_label_skew);
    DatasetBundle d3 = partition(pool, cfg, ScenarioKind::ds3_label_and_concept_shift);

    // Same assignment stream: identical label data, shifted features.
    bool any_shift = false;
    for (std::size_t i = 0; i < d3.clients.size(); ++i) {
        CHECK(d3.clients[i].labels == d2.clients[i].labels);
        if (!d3.clients[i].shift.is_identity()) any_shift = true;
        // feature = scale * base + offset, element-wise
        const ClientDataset &a = d2.clients[i], &b = d3.clients[i];
        for (std::size_t j = 0; j < std::min<std::size_t>(a.features.size(), 64); ++j) {
            std::size_t dim = j % cfg.input_dim;
            CHECK(b.features[j] ==
                  doctest::Approx(b.shift.scale[dim] * a.features[j] + b.shift.offset[dim])
                      .epsilon(1e-12));
        }
    }
    CHECK(any_shift);
    CHECK(d3.test.shift_free);
    CHECK(d3.test.features == d2.test.features);
    CHECK(d3.test.labels == d2.test.labels);

    HeterogeneityReport r2 = heterogeneity_report(d2.clients);
    HeterogeneityReport r3 = heterogeneity_report(d3.clients);
    CHECK(r3.mean_js == doctest::Approx(r2.mean_js).epsilon(1e-12));
}

TEST_CASE("label heterogeneity orders ds1 < ds2 <= ds3 across five seeds") {
    for (std::uint64_t seed : {11ull, 12ull, 13ull, 14ull, 15ull}) {
        SyntheticConfig cfg = small_cfg(seed);
        SamplePool pool = generate_global_pool(cfg);
        double j1 = mean_pairwise_js(partition(pool, cfg, ScenarioKind::ds1_iid));
        double j2 = mean_pairwise_js(partition(pool, cfg, ScenarioKind::ds2_label_skew));
        double j3 =
            mean_pairwise_js(partition(pool, cfg, ScenarioKind::ds3_label_and_concept_shift));
        CHECK(j1 < j2);
        CHECK(j2 <= j3);
    }
}

TEST_CASE("partition is deterministic per seed and sensitive to it") {
    SyntheticConfig cfg = small_cfg(21);
    SamplePool pool = generate_global_pool(cfg);
    DatasetBundle a = partition(pool, cfg, ScenarioKind::ds2_label_skew);
    DatasetBundle b = partition(pool, cfg, ScenarioKind::ds2_label_skew);
    CHECK(bundles_equal(a, b));

    SyntheticConfig cfg2 = small_cfg(22);
    SamplePool pool2 = generate_global_pool(cfg2);
    DatasetBundle c = partition(pool2, cfg2, ScenarioKind::ds2_label_skew);
    CHECK(!bundles_equal(a, c));
}

TEST_CASE("dataset container round-trips bit-exactly") {
    TmpDir tmp;
    for (ScenarioKind sc : {ScenarioKind::ds1_iid, ScenarioKind::ds3_label_and_concept_shift}) {
        SyntheticConfig cfg = small_cfg(31);
        SamplePool pool = generate_global_pool(cfg);
        DatasetBundle b = partition(pool, cfg, sc);
        fs::path file = tmp.path / (std::string("rt_") + scenario_name(sc) + ".bin");
        save_dataset(b, file);
        DatasetBundle r = load_dataset(file);
        CHECK(r.scenario == sc);
        CHECK(bundles_equal(b, r));
        // bitwise, not approximate:
        for (std::size_t i = 0; i < b.clients.size(); ++i)
            REQUIRE(std::memcmp(b.clients[i].features.data(), r.clients[i].features.data(),
                                b.clients[i].features.size() * sizeof(double)) == 0);
        // sidecar carries the generating config
        CHECK(r.config.seed == cfg.seed);
        CHECK(r.config.num_clients == cfg.num_clients);
        CHECK(r.config.input_dim == cfg.input_dim);
        CHECK(fs::exists(file.string() + ".json"));
        // saving the loaded bundle reproduces the file byte-for-byte
        fs::path file2 = tmp.path / "again.bin";
        save_dataset(r, file2);
        std::ifstream f1(file, std::ios::binary), f2(file2, std::ios::binary);
        std::string s1((std::istreambuf_iterator<char>(f1)), {});
        std::string s2((std::istreambuf_iterator<char>(f2)), {});
        CHECK(s1 == s2);
    }
}

TEST_CASE("loader reports corruption with byte offsets and paths") {
    TmpDir tmp;
    SyntheticConfig cfg = small_cfg(41);
    SamplePool pool = generate_global_pool(cfg);
    DatasetBundle b = partition(pool, cfg, ScenarioKind::ds1_iid);
    fs::path file = tmp.path / "ok.bin";
    save_dataset(b, file);

    // missing file names the path
    try {
        load_dataset(tmp.path / "absent.bin");
        FAIL("expected IoError");
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).find("absent.bin") != std::string::npos);
    }

    // bad magic
    {
        std::fstream f(file, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.write("XXXXXX", 6);
    }
    CHECK_THROWS_AS(load_dataset(file), IoError);

    // truncation reports an offset
    save_dataset(b, file);
    fs::resize_file(file, fs::file_size(file) / 2);
    try {
        load_dataset(file);
        FAIL("expected IoError");
    } catch (const IoError& e) {
        std::string msg = e.what();
        CHECK(msg.find_first_of("0123456789") != std::string::npos);
    }

    // trailing garbage is rejected, not ignored
    save_dataset(b, file);
    {
        std::ofstream f(file, std::ios::app | std::ios::binary);
        f << "zz";
    }
    CHECK_THROWS_AS(load_dataset(file), IoError);
}

TEST_CASE("save_dataset rejects empty bundles") {
    TmpDir tmp;
    DatasetBundle empty;
    CHECK_THROWS_AS(save_dataset(empty, tmp.path / "empty.bin"), InvalidArgument);
}

TEST_CASE("synthetic config validation") {
    SyntheticConfig c = small_cfg();
    c.num_clients = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small_cfg();
    c.label_noise_rate = 0.5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small_cfg();
    c.dirichlet_beta = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small_cfg();
    c.feature_noise_sigma = -0.1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small_cfg();
    c.concept_shift_strength = -1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("label noise lifts secondary prevalence to 0.2(1-q) + 0.8q") {
    auto secondary_prevalence = [](const SamplePool& p) {
        std::size_t ones = 0, cells = 0;
        for (std::size_t i = 0; i < p.total(); ++i)
            for (std::size_t c = 0; c < p.num_classes; ++c) {
                if (c == p.primary[i]) continue;
                ones += p.labels[i * p.num_classes + c];
                ++cells;
            }
        return static_cast<double>(ones) / static_cast<double>(cells);
    };
    SyntheticConfig clean = small_cfg(8);
    clean.samples_per_client_mean = 600;
    SamplePool a = generate_global_pool(clean);
    CHECK(secondary_prevalence(a) == doctest::Approx(0.2).epsilon(0.08));

    SyntheticConfig noisy = clean;
    noisy.label_noise_rate = 0.25; // 0.2 * 0.75 + 0.8 * 0.25 = 0.35
    SamplePool c = generate_global_pool(noisy);
    CHECK(secondary_prevalence(c) == doctest::Approx(0.35).epsilon(0.06));

    // primaries survive noise
    for (std::size_t i = 0; i < c.total(); ++i)
        CHECK(c.labels[i * c.num_classes + c.primary[i]] == 1);
}

TEST_CASE("heterogeneity report internals are consistent") {
    SyntheticConfig cfg = small_cfg(51);
    SamplePool pool = generate_global_pool(cfg);
    DatasetBundle b = partition(pool, cfg, ScenarioKind::ds2_label_skew);
    HeterogeneityReport rep = heterogeneity_report(b.clients);
    REQUIRE(rep.prevalence.size() == b.clients.size());
    for (const auto& row : rep.prevalence) {
        double sum = std::accumulate(row.begin(), row.end(), 0.0);
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
    double mx = 0.0;
    for (std::size_t i = 0; i < rep.js.size(); ++i) {
        CHECK(rep.js[i][i] == 0.0);
        for (std::size_t j = 0; j < rep.js.size(); ++j) {
            CHECK(rep.js[i][j] == doctest::Approx(rep.js[j][i]).epsilon(1e-15));
            CHECK(rep.js[i][j] <= std::log(2.0) + 1e-12);
            mx = std::max(mx, rep.js[i][j]);
        }
    }
    CHECK(rep.max_js == doctest::Approx(mx).epsilon(1e-15));
    for (std::size_t i = 0; i < b.clients.size(); ++i) CHECK(rep.sizes[i] == b.clients[i].n());
}
