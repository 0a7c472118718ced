#include "fbsim/report.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "fbsim/config.hpp"
#include "fbsim/errors.hpp"

namespace fs = std::filesystem;

namespace fbsim {

namespace {

std::string fmt2(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

std::string fmt4(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

double mean(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

} // namespace

RunSummary summarize_run(const std::string& run_dir) {
    fs::path dir(run_dir);
    fs::path records_path = dir / "records.jsonl";
    fs::path config_path = dir / "config.txt";
    if (!fs::exists(records_path))
        throw IoError("no records.jsonl in " + run_dir + "; not a run directory?");
    if (!fs::exists(config_path))
        throw IoError("no config.txt in " + run_dir + "; not a run directory?");

    RunSummary s;
    s.run_dir = run_dir;
    s.config = load_config_file(config_path.string()).exp;

    std::ifstream in(records_path);
    if (!in) throw IoError("cannot open " + records_path.string());
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (first) {
            first = false;
            nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
            if (j.is_discarded() || !j.contains("schema_version"))
                throw IoError(records_path.string() + ": missing schema_version header line");
            int v = j["schema_version"].get<int>();
            if (v != kRecordSchemaVersion)
                throw IoError(records_path.string() + ": schema_version " + std::to_string(v) +
                              " is not supported (this build reads version " +
                              std::to_string(kRecordSchemaVersion) + ")");
            continue;
        }
        s.records.push_back(record_from_json_line(line));
    }
    if (first) throw IoError(records_path.string() + ": empty file");

    for (const RoundRecord& r : s.records) {
        s.total_floats_up += r.floats_up;
        s.total_floats_down += r.floats_down;
        s.mean_wall_ms += mean(r.wall_ms_per_client);
    }
    if (!s.records.empty()) {
        s.mean_wall_ms /= static_cast<double>(s.records.size());
        s.f1_micro_final = s.records.back().f1_micro;
        s.f1_macro_final = s.records.back().f1_macro;
        s.mean_final_loss = mean(s.records.back().loss_per_client);
    }
    for (double theta : s.config.thresholds)
        s.thresholds.push_back({theta, rounds_to_threshold(s.records, theta)});
    return s;
}

std::string summary_table(const RunSummary& s) {
    std::ostringstream out;
    out << "run: " << s.run_dir << "\n";
    out << "strategy: " << strategy_name(s.config.strategy)
        << "  scenario: " << scenario_name(s.config.scenario)
        << "  seed: " << s.config.seed << "\n";
    out << "rounds recorded: " << s.records.size() << " / " << s.config.rounds << "\n";
    out << "final f1_micro: " << fmt2(s.f1_micro_final)
        << "  f1_macro: " << fmt2(s.f1_macro_final) << "\n";
    out << "rounds to threshold:";
    for (const ThresholdHit& t : s.thresholds) {
        out << "  " << fmt2(t.threshold) << "% -> ";
        if (t.round) out << *t.round;
        else out << "never";
    }
    out << "\n";
    out << "uplink floats total: " << s.total_floats_up
        << "  downlink floats total: " << s.total_floats_down << "\n";
    out << "mean client loss (final round): " << fmt4(s.mean_final_loss) << "\n";
    out << "mean wall ms per client-round: " << fmt2(s.mean_wall_ms) << "\n";
    return out.str();
}

std::string rounds_csv(const RunSummary& s) {
    std::string out = "round,f1_micro,f1_macro,mean_loss,floats_up,floats_down,mean_wall_ms\n";
    for (const RoundRecord& r : s.records) {
        out += std::to_string(r.round);
        out += ",";
        out += fmt4(r.f1_micro);
        out += ",";
        out += fmt4(r.f1_macro);
        out += ",";
        out += fmt4(mean(r.loss_per_client));
        out += ",";
        out += std::to_string(r.floats_up);
        out += ",";
        out += std::to_string(r.floats_down);
        out += ",";
        out += fmt4(mean(r.wall_ms_per_client));
        out += "\n";
    }
    return out;
}

} // namespace fbsim
