#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fbsim/datagen.hpp"
#include "fbsim/metrics.hpp"
#include "fbsim/strategies.hpp"

namespace fbsim {

inline constexpr int kRecordSchemaVersion = 1;

struct ExperimentConfig {
    StrategyKind strategy = StrategyKind::fedavg;
    ScenarioKind scenario = ScenarioKind::ds1_iid;
    std::uint64_t rounds = 40;
    std::size_t epochs = 3;
    std::size_t batch_size = 64;
    double eta = 1e-3;
    OptimizerConfig optimizer;       // Adam by default (experiment setting)
    ModelSpec model;
    StrategyHyperparams hp;
    SyntheticConfig data{.seed = 0}; // 0: follow `seed` (resolved by finalize)
    std::string dataset_path;        // empty: generate in-process from `data`
    std::uint64_t seed = 1;
    std::string out_dir;             // empty: in-memory run, no persistence
    std::vector<double> thresholds = {60.0, 70.0, 80.0};
    bool record_wall_time = true;    // false: wall_ms fields written as zeros
    std::size_t threads = 1;
    bool resume = false;

    void validate() const;
    // Resolves the data.seed sentinel; call after all overrides are applied.
    void finalize();
};

struct RoundRecord {
    std::uint64_t round = 0;
    double f1_micro = 0.0;
    double f1_macro = 0.0;
    std::vector<double> loss_per_client;
    std::uint64_t floats_up = 0;   // total across clients this round
    std::uint64_t floats_down = 0;
    std::vector<double> wall_ms_per_client;
};

std::string record_to_json_line(const RoundRecord& r);
RoundRecord record_from_json_line(const std::string& line);

struct ThresholdHit {
    double threshold = 0.0;
    std::optional<std::uint64_t> round;
};

struct RunResult {
    ExperimentConfig config;
    std::vector<RoundRecord> records;
    std::vector<ThresholdHit> thresholds;
    double f1_micro_final = 0.0;
    double f1_macro_final = 0.0;
    bool resumed_complete = false; // the run was already finished on disk
};

// Executes R rounds of serve -> local_train -> aggregate. When out_dir is
// set, appends one JSONL record per round (schema header first), snapshots
// resumable state after every round, and writes final checkpoints. Throws
// NumericError on divergence (state of the last completed round survives).
RunResult run_experiment(const ExperimentConfig& cfg);

// Micro/macro F1 (percent) at threshold 0.5 on sigmoid probabilities
// (equivalently logit > 0). Never mutates the model.
F1Scores evaluate(const ParamVector& model, const ModelSpec& spec, const TestSplit& test);

// Mean of per-model scores (FedBN / pFedLA personalized evaluation).
F1Scores evaluate_mean(const std::vector<ParamVector>& models, const ModelSpec& spec,
                       const TestSplit& test);

// First round whose micro-F1 reaches theta; nullopt if never.
std::optional<std::uint64_t> rounds_to_threshold(const std::vector<RoundRecord>& records,
                                                 double theta);

// Canonical experiment-config echo (the run directory's config.txt).
std::string dump_experiment_config(const ExperimentConfig& cfg);

} // namespace fbsim
