// fbsim command line: gen-data | run | sweep | report | config
//
// Exit codes: 0 success, 1 runtime failure (I/O, numerics), 2 bad usage or
// bad configuration.

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "fbsim/config.hpp"
#include "fbsim/datagen.hpp"
#include "fbsim/errors.hpp"
#include "fbsim/orchestrator.hpp"
#include "fbsim/report.hpp"

namespace fs = std::filesystem;
using namespace fbsim;

namespace {

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path, "config file of key = value lines");
    cmd->add_option("--set", opts.sets, "override a single key, e.g. --set rounds=10")
        ->take_all();
}

FullConfig assemble(const CommonOpts& opts, bool allow_sweep) {
    FullConfig cfg;
    if (!opts.config_path.empty()) cfg = load_config_file(opts.config_path, cfg, allow_sweep);
    for (const std::string& kv : opts.sets) {
        std::size_t eq = kv.find('=');
        if (eq == std::string::npos)
            throw ConfigError("--set expects key=value, got '" + kv + "'");
        std::string key = kv.substr(0, eq);
        std::string value = kv.substr(eq + 1);
        // allow spaces around '='
        while (!key.empty() && (key.back() == ' ' || key.back() == '\t')) key.pop_back();
        while (!value.empty() && (value.front() == ' ' || value.front() == '\t'))
            value.erase(value.begin());
        apply_entry(cfg, key, value, allow_sweep);
    }
    return cfg;
}

std::size_t env_thread_cap() {
    const char* s = std::getenv("FBSIM_THREADS");
    if (!s || !*s) return 0;
    char* end = nullptr;
    unsigned long v = std::strtoul(s, &end, 10);
    if (end == s || *end != '\0' || v == 0) return 0;
    return static_cast<std::size_t>(v);
}

void apply_env_caps(FullConfig& cfg) {
    std::size_t cap = env_thread_cap();
    if (cap == 0) return;
    cfg.exp.threads = std::min(cfg.exp.threads, cap);
    cfg.sweep.jobs = std::min(cfg.sweep.jobs, cap);
}

int cmd_gen_data(const CommonOpts& opts, const std::string& out_path) {
    FullConfig cfg = assemble(opts, /*allow_sweep=*/false);
    cfg.exp.finalize();
    SyntheticConfig data = cfg.exp.data;
    data.validate();
    SamplePool pool = generate_global_pool(data);
    DatasetBundle bundle = partition(pool, data, cfg.exp.scenario);
    save_dataset(bundle, out_path);

    HeterogeneityReport het = heterogeneity_report(bundle.clients);
    nlohmann::json j;
    j["path"] = out_path;
    j["scenario"] = scenario_name(bundle.scenario);
    j["num_clients"] = bundle.clients.size();
    j["test_samples"] = bundle.test.n();
    j["client_sizes"] = het.sizes;
    j["js_pairwise"] = het.js;
    j["mean_js"] = het.mean_js;
    j["max_js"] = het.max_js;
    std::ofstream rep(out_path + ".report.json", std::ios::trunc);
    if (!rep) throw IoError("cannot write " + out_path + ".report.json");
    rep << j.dump(2) << "\n";

    std::cout << "wrote " << out_path << " (" << bundle.clients.size() << " clients, scenario "
              << scenario_name(bundle.scenario) << ", mean JS " << het.mean_js << ")\n";
    return 0;
}

int cmd_run(const CommonOpts& opts, const std::string& out_dir, bool resume, bool verbose) {
    FullConfig cfg = assemble(opts, /*allow_sweep=*/false);
    if (!out_dir.empty()) cfg.exp.out_dir = out_dir;
    cfg.exp.resume = resume;
    apply_env_caps(cfg);

    RunResult res = run_experiment(cfg.exp);
    if (verbose) {
        for (const RoundRecord& r : res.records)
            std::cout << "round " << r.round << "  f1_micro " << r.f1_micro << "  f1_macro "
                      << r.f1_macro << "\n";
    }
    if (res.resumed_complete)
        std::cout << "run already complete (" << res.records.size() << " rounds recorded)\n";
    std::cout << "final f1_micro " << res.f1_micro_final << "  f1_macro " << res.f1_macro_final
              << " after " << res.records.size() << " rounds\n";
    for (const ThresholdHit& t : res.thresholds) {
        std::cout << "threshold " << t.threshold << "%: ";
        if (t.round) std::cout << "round " << *t.round << "\n";
        else std::cout << "not reached\n";
    }
    return 0;
}

struct SweepJob {
    std::string name;
    std::string cfg_path;
    std::string run_dir;
};

int cmd_sweep(const CommonOpts& opts, const std::string& out_dir) {
    if (out_dir.empty()) throw ConfigError("sweep requires --out");
    FullConfig cfg = assemble(opts, /*allow_sweep=*/true);
    apply_env_caps(cfg);

    std::vector<std::string> strategies = cfg.sweep.strategies;
    if (strategies.empty()) strategies = {strategy_name(cfg.exp.strategy)};
    std::vector<std::string> scenarios = cfg.sweep.scenarios;
    if (scenarios.empty()) scenarios = {scenario_name(cfg.exp.scenario)};
    std::vector<std::uint64_t> seeds = cfg.sweep.seeds;
    if (seeds.empty()) seeds = {cfg.exp.seed};
    const std::size_t jobs = std::max<std::size_t>(1, cfg.sweep.jobs);

    fs::create_directories(fs::path(out_dir) / ".cfg");
    std::vector<SweepJob> queue;
    for (const std::string& st : strategies)
        for (const std::string& sc : scenarios)
            for (std::uint64_t seed : seeds) {
                FullConfig combo = cfg;
                combo.exp.strategy = strategy_from_name(st);
                combo.exp.scenario = scenario_from_name(sc);
                combo.exp.seed = seed;
                combo.exp.finalize();
                SweepJob job;
                job.name = st + "_" + sc + "_s" + std::to_string(seed);
                job.run_dir = (fs::path(out_dir) / job.name).string();
                combo.exp.out_dir = job.run_dir;
                job.cfg_path = (fs::path(out_dir) / ".cfg" / (job.name + ".cfg")).string();
                std::ofstream f(job.cfg_path, std::ios::trunc);
                if (!f) throw IoError("cannot write " + job.cfg_path);
                f << dump_experiment_config(combo.exp);
                queue.push_back(job);
            }

    std::string self = fs::read_symlink("/proc/self/exe").string();
    std::size_t next = 0, running = 0, failures = 0;
    std::vector<pid_t> pids;
    auto launch = [&](const SweepJob& job) {
        bool resume = fs::exists(fs::path(job.run_dir) / "records.jsonl");
        pid_t pid = fork();
        if (pid < 0) throw IoError("fork failed");
        if (pid == 0) {
            std::vector<std::string> args = {self,  "run",  "--config", job.cfg_path,
                                             "--out", job.run_dir};
            if (resume) args.push_back("--resume");
            std::vector<char*> argv;
            for (std::string& a : args) argv.push_back(a.data());
            argv.push_back(nullptr);
            execv(self.c_str(), argv.data());
            std::perror("execv");
            _exit(127);
        }
        pids.push_back(pid);
        ++running;
    };
    auto reap_one = [&] {
        int status = 0;
        pid_t pid = waitpid(-1, &status, 0);
        if (pid < 0) throw IoError("waitpid failed");
        --running;
        if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) ++failures;
    };

    while (next < queue.size() || running > 0) {
        while (next < queue.size() && running < jobs) {
            const SweepJob& job = queue[next++];
            fs::path done = fs::path(job.run_dir) / "result.json";
            if (fs::exists(done)) {
                std::ifstream f(done);
                nlohmann::json j = nlohmann::json::parse(f, nullptr, false);
                if (!j.is_discarded() && j.value("completed", false)) {
                    std::cout << job.name << ": already complete, skipped\n";
                    continue;
                }
            }
            std::cout << job.name << ": started\n";
            launch(job);
        }
        if (running > 0) reap_one();
    }

    // Collate whatever completed into one CSV.
    std::string csv =
        "strategy,scenario,seed,f1_micro_final,f1_macro_final,floats_up,floats_down\n";
    std::size_t summarized = 0;
    for (const SweepJob& job : queue) {
        if (!fs::exists(fs::path(job.run_dir) / "records.jsonl")) continue;
        RunSummary s = summarize_run(job.run_dir);
        std::ostringstream row;
        row << strategy_name(s.config.strategy) << "," << scenario_name(s.config.scenario) << ","
            << s.config.seed << "," << s.f1_micro_final << "," << s.f1_macro_final << ","
            << s.total_floats_up << "," << s.total_floats_down << "\n";
        csv += row.str();
        ++summarized;
    }
    std::ofstream out(fs::path(out_dir) / "summary.csv", std::ios::trunc);
    if (!out) throw IoError("cannot write sweep summary.csv");
    out << csv;
    std::cout << "sweep finished: " << summarized << " runs summarized, " << failures
              << " failed\n";
    return failures == 0 ? 0 : 1;
}

int cmd_report(const std::string& run_dir) {
    RunSummary s = summarize_run(run_dir);
    std::string csv = rounds_csv(s);
    fs::path csv_path = fs::path(run_dir) / "rounds.csv";
    std::ofstream out(csv_path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + csv_path.string());
    out << csv;
    std::cout << summary_table(s);
    std::cout << "per-round csv: " << csv_path.string() << "\n";
    return 0;
}

int cmd_config(const CommonOpts& opts, bool dump) {
    FullConfig cfg = assemble(opts, /*allow_sweep=*/true);
    if (dump) {
        std::cout << dump_full_config(cfg);
        return 0;
    }
    // validate only
    cfg.exp.finalize();
    cfg.exp.validate();
    std::cout << "config ok\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"fbsim: federated learning simulation over synthetic non-IID clients"};
    app.require_subcommand(1);

    CommonOpts gen_opts;
    std::string gen_out;
    CLI::App* gen = app.add_subcommand("gen-data", "generate a dataset file");
    add_common(gen, gen_opts);
    gen->add_option("--out", gen_out, "output dataset path")->required();

    CommonOpts run_opts;
    std::string run_out;
    bool run_resume = false, run_verbose = false;
    CLI::App* run = app.add_subcommand("run", "run one federated experiment");
    add_common(run, run_opts);
    run->add_option("--out", run_out, "run directory (overrides out_dir)");
    run->add_flag("--resume", run_resume, "continue an interrupted run directory");
    run->add_flag("--verbose", run_verbose, "print one line per round");

    CommonOpts sweep_opts;
    std::string sweep_out;
    CLI::App* sweep = app.add_subcommand("sweep", "run a strategy/scenario/seed grid");
    add_common(sweep, sweep_opts);
    sweep->add_option("--out", sweep_out, "sweep output directory")->required();

    std::string report_dir;
    CLI::App* report = app.add_subcommand("report", "summarize a finished run directory");
    report->add_option("--run", report_dir, "run directory")->required();

    CommonOpts config_opts;
    bool config_dump = false;
    CLI::App* config = app.add_subcommand("config", "inspect the effective configuration");
    add_common(config, config_opts);
    config->add_flag("--dump", config_dump, "print every key = value");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(gen_opts, gen_out);
        if (run->parsed()) return cmd_run(run_opts, run_out, run_resume, run_verbose);
        if (sweep->parsed()) return cmd_sweep(sweep_opts, sweep_out);
        if (report->parsed()) return cmd_report(report_dir);
        if (config->parsed()) return cmd_config(config_opts, config_dump);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
