#include "fbsim/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "json.hpp"

#include "fbsim/errors.hpp"

namespace fbsim {

const char* optimizer_mode_name(OptimizerMode m) {
    return m == OptimizerMode::sgd ? "sgd" : "adam";
}

OptimizerMode optimizer_mode_from_name(const std::string& s) {
    if (s == "sgd") return OptimizerMode::sgd;
    if (s == "adam") return OptimizerMode::adam;
    throw ConfigError("unknown optimizer mode '" + s + "' (expected sgd or adam)");
}

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::string item;
    std::stringstream ss(s);
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::uint64_t parse_u64(const std::string& s) {
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
        throw ConfigError("expected a non-negative integer, got '" + s + "'");
    return v;
}

double parse_f64(const std::string& s) {
    try {
        std::size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw ConfigError("");
        if (!std::isfinite(v)) throw ConfigError("");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("expected a finite number, got '" + s + "'");
    }
}

bool parse_bool(const std::string& s) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw ConfigError("expected true/false, got '" + s + "'");
}

// json round-trips doubles with the shortest exact decimal form, which keeps
// the dump canonical without a hand-rolled formatter.
std::string fmt_f64(double v) { return nlohmann::json(v).dump(); }

std::string join_u64(const std::vector<std::uint64_t>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(v[i]);
    }
    return out;
}

std::string join_f64(const std::vector<double>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += fmt_f64(v[i]);
    }
    return out;
}

std::string join_str(const std::vector<std::string>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += v[i];
    }
    return out;
}

struct KeyEntry {
    const char* key;
    bool sweep_only; // excluded from the per-run experiment echo
    std::function<void(FullConfig&, const std::string&)> set;
    std::function<std::string(const FullConfig&)> get;
};

const std::vector<KeyEntry>& key_table() {
    static const std::vector<KeyEntry> table = {
        {"strategy", false,
         [](FullConfig& c, const std::string& v) { c.exp.strategy = strategy_from_name(v); },
         [](const FullConfig& c) { return std::string(strategy_name(c.exp.strategy)); }},
        {"scenario", false,
         [](FullConfig& c, const std::string& v) { c.exp.scenario = scenario_from_name(v); },
         [](const FullConfig& c) { return std::string(scenario_name(c.exp.scenario)); }},
        {"rounds", false,
         [](FullConfig& c, const std::string& v) { c.exp.rounds = parse_u64(v); },
         [](const FullConfig& c) { return std::to_string(c.exp.rounds); }},
        {"epochs", false,
         [](FullConfig& c, const std::string& v) { c.exp.epochs = parse_u64(v); },
         [](const FullConfig& c) { return std::to_string(c.exp.epochs); }},
        {"batch_size", false,
         [](FullConfig& c, const std::string& v) { c.exp.batch_size = parse_u64(v); },
         [](const FullConfig& c) { return std::to_string(c.exp.batch_size); }},
        {"eta", false,
         [](FullConfig& c, const std::string& v) { c.exp.eta = parse_f64(v); },
         [](const FullConfig& c) { return fmt_f64(c.exp.eta); }},
        {"seed", false,
         [](FullConfig& c, const std::string& v) { c.exp.seed = parse_u64(v); },
         [](const FullConfig& c) { return std::to_string(c.exp.seed); }},
        {"out_dir", false,
         [](FullConfig& c, const std::string& v) { c.exp.out_dir = v; },
         [](const FullConfig& c) { return c.exp.out_dir; }},
        {"dataset_path", false,
         [](FullConfig& c, const std::string& v) { c.exp.dataset_path = v; },
         [](const FullConfig& c) { return c.exp.dataset_path; }},
        {"thresholds", false,
         [](FullConfig& c, const std::string& v) {
             c.exp.thresholds.clear();
             for (const std::string& t : split_csv(v)) c.exp.thresholds.push_back(parse_f64(t));
         },
         [](const FullConfig& c) { return join_f64(c.exp.thresholds); }},
        {"record_wall_time", false,
         [](FullConfig& c, const std::string& v) { c.exp.record_wall_time = parse_bool(v); },
         [](const FullConfig& c) { return c.exp.record_wall_time ? "true" : "false"; }},
        {"threads", false,
         [](FullConfig& c, const std::string& v) { c.exp.threads = parse_u64(v); },
         [](const FullConfig& c) { return std::to_string(c.exp.threads); }},

        {"optimizer.mode", false,
         [](FullConfig& c, const std::string& v) {
             c.exp.optimizer.mode = optimizer_mode_from_name(v);
         },
         [](const FullConfig& c) { return std::string(optimizer_mode_name(c.exp.optimizer.mode)); }},
        {"optimizer.beta1", false,
         [](FullConfig& c, const std::string& v) { c.exp.optimizer.beta1 = parse_f64(v); },
         [](const FullConfig& c) { return fmt_f64(c.exp.optimizer.beta1); }},
        {"optimizer.beta2", false,
         [](FullConfig& c, const std::string& v) { c.exp.optimizer.beta2 = parse_f64(v); },
         [](const FullConfig& c) { return fmt_f64(c.exp.optimizer.beta2); }},
        {"optimizer.eps", false,
         [](FullConfig& c, const std::string& v) { c.exp.optimizer.eps = parse_f64(v); },
         [](const FullConfig& c) { return fmt_f64(c.exp.optimizer.eps); }},
        {"optimizer.weight_decay", false,
         [](FullConfig& c, const std::string& v) { c.exp.optimizer.weight_decay = parse_f64(v); },
         [](const FullConfig& c) { return fmt_f64(c.exp.optimizer.weight_decay); }},

        {"model.input_dim", false,
         [](FullConfig& c, const std::string& v) { c.exp.model.input_dim = parse_u64(v); },
         [](const FullConfig& c) { return std::to_string(c.exp.model.input_dim); }},
        {"model.hidden_dims", false,
         [](FullConfig& c, const std::string& v) {
             c.exp.model.hidden_dims.clear();
             for (const std::string& t : split_csv(v))
                 c.exp.model.hidden_dims.push_back(parse_u64(t));
         },
         [](const FullConfig& c) {
             std::vector<std::uint64_t> d(c.exp.model.hidden_dims.begin(),
                                          c.exp.model.hidden_dims.end());
             return join_u64(d);
         }},
        {"model.num_classes", false,
         [](FullConfig& c, const std::string& v) { c.exp.model.num_classes = parse_u64(v); },
         [](const FullConfig& c) { return std::to_string(c.exp.model.num_classes); }},
        {"model.batch_norm", false,
         [](FullConfig& c, const std::string& v) {
             c.exp.model.batch_norm.clear();
             for (const std::string& t : split_csv(v))
                 c.exp.model.batch_norm.push_back(parse_bool(t));
         },
         [](const FullConfig& c) {
             std::vector<std::string> flags;
             for (bool b : c.exp.model.batch_norm) flags.push_back(b ? "1" : "0");
             return join_str(flags);
         }},
        {"model.bn_eps", false,
         [](FullConfig& c, const std::string& v) { c.exp.model.bn_eps = parse_f64(v); },
         [](const FullConfig& c) { return fmt_f64(c.exp.model.bn_eps); }},
        {"model.bn_momentum", false,
         [](FullConfig& c, const std::string& v) { c.exp.model.bn_momentum = parse_f64(v); },
         [](const FullConfig& c) { return fmt_f64(c.exp.model.bn_momentum); }},

        {"hp.gamma", false,
         [](FullConfig& c, const std::string& v) { c.exp.hp.gamma = parse_f64(v); },
         [](const FullConfig& c) { return fmt_f64(c.exp.hp.gamma); }},
        {"hp.tau", false,
         [](FullConfig& c, const std::string& v) { c.exp.hp.tau = parse_f64(v); },
         [](const FullConfig& c) { return fmt_f64(c.exp.hp.tau); }},
        {"hp.mu", false,
         [](FullConfig& c, const std::string& v) { c.exp.hp.mu = parse_f64(v); },
         [](const FullConfig& c) { return fmt_f64(c.exp.hp.mu); }},
        {"hp.feddc_penalty_weight", false,
         [](FullConfig& c, const std::string& v) { c.exp.hp.feddc_penalty_weight = parse_f64(v); },
         [](const FullConfig& c) { return fmt_f64(c.exp.hp.feddc_penalty_weight); }},
        {"hp.pfedla_embed_dim", false,
         [](FullConfig& c, const std::string& v) { c.exp.hp.pfedla_embed_dim = parse_u64(v); },
         [](const FullConfig& c) { return std::to_string(c.exp.hp.pfedla_embed_dim); }},
        {"hp.pfedla_hidden", false,
         [](FullConfig& c, const std::string& v) { c.exp.hp.pfedla_hidden = parse_u64(v); },
         [](const FullConfig& c) { return std::to_string(c.exp.hp.pfedla_hidden); }},
        {"hp.pfedla_hyper_lr", false,
         [](FullConfig& c, const std::string& v) { c.exp.hp.pfedla_hyper_lr = parse_f64(v); },
         [](const FullConfig& c) { return fmt_f64(c.exp.hp.pfedla_hyper_lr); }},
        {"hp.fednova_paper_literal", false,
         [](FullConfig& c, const std::string& v) { c.exp.hp.fednova_paper_literal = parse_bool(v); },
         [](const FullConfig& c) { return c.exp.hp.fednova_paper_literal ? "true" : "false"; }},
        {"hp.freeze_control_variates", false,
         [](FullConfig& c, const std::string& v) {
             c.exp.hp.freeze_control_variates = parse_bool(v);
         },
         [](const FullConfig& c) { return c.exp.hp.freeze_control_variates ? "true" : "false"; }},
        {"hp.feddc_drift_in_aggregate", false,
         [](FullConfig& c, const std::string& v) {
             c.exp.hp.feddc_drift_in_aggregate = parse_bool(v);
         },
         [](const FullConfig& c) { return c.exp.hp.feddc_drift_in_aggregate ? "true" : "false"; }},

        {"data.input_dim", false,
         [](FullConfig& c, const std::string& v) { c.exp.data.input_dim = parse_u64(v); },
         [](const FullConfig& c) { return std::to_string(c.exp.data.input_dim); }},
        {"data.num_classes", false,
         [](FullConfig& c, const std::string& v) { c.exp.data.num_classes = parse_u64(v); },
         [](const FullConfig& c) { return std::to_string(c.exp.data.num_classes); }},
        {"data.num_clients", false,
         [](FullConfig& c, const std::string& v) { c.exp.data.num_clients = parse_u64(v); },
         [](const FullConfig& c) { return std::to_string(c.exp.data.num_clients); }},
        {"data.samples_per_client_mean", false,
         [](FullConfig& c, const std::string& v) {
             c.exp.data.samples_per_client_mean = parse_u64(v);
         },
         [](const FullConfig& c) { return std::to_string(c.exp.data.samples_per_client_mean); }},
        {"data.quantity_skew_exponent", false,
         [](FullConfig& c, const std::string& v) {
             c.exp.data.quantity_skew_exponent = parse_f64(v);
         },
         [](const FullConfig& c) { return fmt_f64(c.exp.data.quantity_skew_exponent); }},
        {"data.dirichlet_beta", false,
         [](FullConfig& c, const std::string& v) { c.exp.data.dirichlet_beta = parse_f64(v); },
         [](const FullConfig& c) { return fmt_f64(c.exp.data.dirichlet_beta); }},
        {"data.concept_shift_strength", false,
         [](FullConfig& c, const std::string& v) {
             c.exp.data.concept_shift_strength = parse_f64(v);
         },
         [](const FullConfig& c) { return fmt_f64(c.exp.data.concept_shift_strength); }},
        {"data.label_noise_rate", false,
         [](FullConfig& c, const std::string& v) { c.exp.data.label_noise_rate = parse_f64(v); },
         [](const FullConfig& c) { return fmt_f64(c.exp.data.label_noise_rate); }},
        {"data.feature_noise_sigma", false,
         [](FullConfig& c, const std::string& v) { c.exp.data.feature_noise_sigma = parse_f64(v); },
         [](const FullConfig& c) { return fmt_f64(c.exp.data.feature_noise_sigma); }},
        {"data.seed", false,
         [](FullConfig& c, const std::string& v) { c.exp.data.seed = parse_u64(v); },
         [](const FullConfig& c) { return std::to_string(c.exp.data.seed); }},

        {"sweep.strategies", true,
         [](FullConfig& c, const std::string& v) {
             c.sweep.strategies = split_csv(v);
             for (const std::string& s : c.sweep.strategies) strategy_from_name(s); // validate
         },
         [](const FullConfig& c) { return join_str(c.sweep.strategies); }},
        {"sweep.scenarios", true,
         [](FullConfig& c, const std::string& v) {
             c.sweep.scenarios = split_csv(v);
             for (const std::string& s : c.sweep.scenarios) scenario_from_name(s);
         },
         [](const FullConfig& c) { return join_str(c.sweep.scenarios); }},
        {"sweep.seeds", true,
         [](FullConfig& c, const std::string& v) {
             c.sweep.seeds.clear();
             for (const std::string& s : split_csv(v)) c.sweep.seeds.push_back(parse_u64(s));
         },
         [](const FullConfig& c) { return join_u64(c.sweep.seeds); }},
        {"sweep.jobs", true,
         [](FullConfig& c, const std::string& v) { c.sweep.jobs = parse_u64(v); },
         [](const FullConfig& c) { return std::to_string(c.sweep.jobs); }},
    };
    return table;
}

// `threads` and `out_dir` configure execution, not the experiment (like
// the resume flag): they stay out of the run directory's config identity,
// so resuming with a different worker count or from a relocated directory
// is legal.
bool in_run_echo(const KeyEntry& e) {
    std::string key(e.key);
    return !e.sweep_only && key != "threads" && key != "out_dir";
}

} // namespace

void apply_entry(FullConfig& cfg, const std::string& key, const std::string& value,
                 bool allow_sweep) {
    for (const KeyEntry& e : key_table()) {
        if (key == e.key) {
            if (e.sweep_only && !allow_sweep)
                throw ConfigError("key '" + key +
                                  "' is sweep-only and has no effect on a single run");
            try {
                e.set(cfg, value);
            } catch (const ConfigError& err) {
                throw ConfigError("key '" + key + "': " + err.what());
            }
            return;
        }
    }
    throw ConfigError("unknown config key '" + key + "'");
}

FullConfig parse_config(std::istream& in, FullConfig base, const std::string& origin,
                        bool allow_sweep) {
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        std::size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(lineno) +
                              ": expected 'key = value', got '" + t + "'");
        std::string key = trim(t.substr(0, eq));
        std::string value = trim(t.substr(eq + 1));
        try {
            apply_entry(base, key, value, allow_sweep);
        } catch (const ConfigError& err) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + err.what());
        }
    }
    return base;
}

FullConfig load_config_file(const std::string& path, FullConfig base, bool allow_sweep) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path);
    return parse_config(in, std::move(base), path, allow_sweep);
}

std::string dump_full_config(const FullConfig& cfg) {
    std::string out;
    for (const KeyEntry& e : key_table())
        out += std::string(e.key) + " = " + e.get(cfg) + "\n";
    return out;
}

std::string dump_experiment_config(const ExperimentConfig& cfg) {
    FullConfig full;
    full.exp = cfg;
    std::string out;
    for (const KeyEntry& e : key_table()) {
        if (!in_run_echo(e)) continue;
        out += std::string(e.key) + " = " + e.get(full) + "\n";
    }
    return out;
}

} // namespace fbsim
