#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "fbsim/orchestrator.hpp"

namespace fbsim {

// Sweep grid. Empty strategy/scenario/seed lists fall back to the single
// value carried by the experiment config.
struct SweepConfig {
    std::vector<std::string> strategies;
    std::vector<std::string> scenarios;
    std::vector<std::uint64_t> seeds;
    std::size_t jobs = 1;
};

struct FullConfig {
    ExperimentConfig exp;
    SweepConfig sweep;
};

// Applies one `key = value` entry. Throws ConfigError on unknown keys or
// unparsable values; with allow_sweep false, sweep.* keys are rejected
// (they have no effect outside the sweep subcommand).
void apply_entry(FullConfig& cfg, const std::string& key, const std::string& value,
                 bool allow_sweep = true);

// Parses `key = value` lines; blank lines and lines starting with '#' are
// skipped. `origin` names the source in error messages.
FullConfig parse_config(std::istream& in, FullConfig base, const std::string& origin,
                        bool allow_sweep = true);
FullConfig load_config_file(const std::string& path, FullConfig base = {},
                            bool allow_sweep = true);

// Canonical text form. Parsing the dump reproduces the config byte-for-byte.
std::string dump_full_config(const FullConfig& cfg);

const char* optimizer_mode_name(OptimizerMode m);
OptimizerMode optimizer_mode_from_name(const std::string& s);

} // namespace fbsim
