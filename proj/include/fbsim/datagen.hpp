#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fbsim/errors.hpp"

namespace fbsim {

// The three decentralization regimes: ds1 = near-IID, ds2 adds label and
// quantity skew, ds3 adds per-client concept shift on top of ds2.
enum class ScenarioKind { ds1_iid, ds2_label_skew, ds3_label_and_concept_shift };

const char* scenario_name(ScenarioKind k);           // "ds1" / "ds2" / "ds3"
ScenarioKind scenario_from_name(const std::string&); // throws ConfigError

struct SyntheticConfig {
    std::size_t input_dim = 32;
    std::size_t num_classes = 8;
    std::size_t num_clients = 7;
    std::size_t samples_per_client_mean = 500;
    double quantity_skew_exponent = 0.5; // power-law over client sizes (ds2/ds3)
    double dirichlet_beta = 0.1;         // label-skew concentration (ds2/ds3)
    double concept_shift_strength = 0.5; // affine transform magnitude (ds3)
    double label_noise_rate = 0.0;
    double feature_noise_sigma = 1.0;    // noise std around prototype mixtures
    std::uint64_t seed = 1;

    void validate() const;
};

// Labeled sample pool. Rows [0, train_count) are the training pool;
// the rest is the shared, shift-free test split (20%).
struct SamplePool {
    std::size_t input_dim = 0;
    std::size_t num_classes = 0;
    std::vector<double> features;        // total x input_dim
    std::vector<std::uint8_t> labels;    // total x num_classes
    std::vector<std::uint8_t> primary;   // total, dominant class (partition key)
    std::size_t train_count = 0;

    std::size_t total() const { return num_classes ? labels.size() / num_classes : 0; }
};

// Per-client affine feature transform x -> scale * x + offset (element-wise).
struct ShiftTransform {
    std::vector<double> scale;  // input_dim
    std::vector<double> offset; // input_dim

    bool is_identity() const;
    static ShiftTransform identity(std::size_t input_dim);
};

struct ClientDataset {
    std::uint64_t client_id = 0;
    std::size_t input_dim = 0;
    std::size_t num_classes = 0;
    std::vector<double> features;
    std::vector<std::uint8_t> labels;
    ShiftTransform shift;

    std::size_t n() const { return num_classes ? labels.size() / num_classes : 0; }
};

struct TestSplit {
    std::size_t input_dim = 0;
    std::size_t num_classes = 0;
    std::vector<double> features;
    std::vector<std::uint8_t> labels;
    bool shift_free = true;

    std::size_t n() const { return num_classes ? labels.size() / num_classes : 0; }
};

struct DatasetBundle {
    ScenarioKind scenario = ScenarioKind::ds1_iid;
    SyntheticConfig config;
    std::vector<ClientDataset> clients;
    TestSplit test;
};

struct HeterogeneityReport {
    std::vector<std::vector<double>> prevalence; // K x P, each sums to 1
    std::vector<std::vector<double>> js;         // K x K, symmetric, zero diagonal
    std::vector<std::size_t> sizes;
    double mean_js = 0.0; // over off-diagonal pairs
    double max_js = 0.0;
};

// Jensen-Shannon divergence with natural log; range [0, ln 2].
double js_divergence(std::span<const double> p, std::span<const double> q);

// Prototype-mixture pool: P prototype vectors; each sample picks a primary
// class plus random co-occurring classes, features = mean of its positive
// prototypes + Gaussian noise. Deterministic in cfg.seed.
SamplePool generate_global_pool(const SyntheticConfig& cfg);

// Splits the training pool into K client datasets per the scenario. The
// bundle's test split is always shift-free.
DatasetBundle partition(const SamplePool& pool, const SyntheticConfig& cfg, ScenarioKind scenario);

HeterogeneityReport heterogeneity_report(const std::vector<ClientDataset>& clients);

// FBSIM1 binary container + JSON sidecar (path + ".json") with the
// generating config. Round-trip is bit-exact.
void save_dataset(const DatasetBundle& bundle, const std::filesystem::path& path);
DatasetBundle load_dataset(const std::filesystem::path& path);

} // namespace fbsim
