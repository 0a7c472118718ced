#pragma once

#include <string>
#include <vector>

#include "fbsim/orchestrator.hpp"

namespace fbsim {

// Everything `report` needs, loaded back from a run directory's
// config.txt + records.jsonl pair.
struct RunSummary {
    std::string run_dir;
    ExperimentConfig config;
    std::vector<RoundRecord> records;
    std::vector<ThresholdHit> thresholds;
    double f1_micro_final = 0.0;
    double f1_macro_final = 0.0;
    std::uint64_t total_floats_up = 0;
    std::uint64_t total_floats_down = 0;
    double mean_final_loss = 0.0;
    double mean_wall_ms = 0.0; // per client per round
};

RunSummary summarize_run(const std::string& run_dir);

// Plain-text summary block (deterministic for a given records file).
std::string summary_table(const RunSummary& s);

// Per-round CSV: round,f1_micro,f1_macro,mean_loss,floats_up,floats_down,mean_wall_ms
std::string rounds_csv(const RunSummary& s);

} // namespace fbsim
