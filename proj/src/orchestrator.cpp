#include "fbsim/orchestrator.hpp"

#include <atomic>
#include <cmath>
#include <fcntl.h>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>
#include <unistd.h>

#include "json.hpp"

#include "fbsim/serialize.hpp"

namespace fs = std::filesystem;

namespace fbsim {

void ExperimentConfig::validate() const {
    if (rounds == 0) throw ConfigError("rounds must be >= 1");
    if (epochs == 0) throw ConfigError("epochs must be >= 1");
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (!(eta > 0)) throw ConfigError("eta must be > 0");
    if (threads == 0) throw ConfigError("threads must be >= 1");
    model.validate();
    hp.validate();
    if (dataset_path.empty()) {
        SyntheticConfig d = data;
        if (d.seed == 0) d.seed = seed;
        d.validate();
        if (model.input_dim != d.input_dim)
            throw ConfigError("model.input_dim (" + std::to_string(model.input_dim) +
                              ") != data.input_dim (" + std::to_string(d.input_dim) + ")");
        if (model.num_classes != d.num_classes)
            throw ConfigError("model.num_classes (" + std::to_string(model.num_classes) +
                              ") != data.num_classes (" + std::to_string(d.num_classes) + ")");
    }
    for (double t : thresholds)
        if (!(t > 0 && t < 100)) throw ConfigError("thresholds must lie in (0, 100)");
}

void ExperimentConfig::finalize() {
    if (data.seed == 0) data.seed = seed;
}

std::string record_to_json_line(const RoundRecord& r) {
    nlohmann::json j;
    j["round"] = r.round;
    j["f1_micro"] = r.f1_micro;
    j["f1_macro"] = r.f1_macro;
    j["loss_per_client"] = r.loss_per_client;
    j["floats_up"] = r.floats_up;
    j["floats_down"] = r.floats_down;
    j["wall_ms_per_client"] = r.wall_ms_per_client;
    return j.dump();
}

RoundRecord record_from_json_line(const std::string& line) {
    RoundRecord r;
    try {
        nlohmann::json j = nlohmann::json::parse(line);
        j.at("round").get_to(r.round);
        j.at("f1_micro").get_to(r.f1_micro);
        j.at("f1_macro").get_to(r.f1_macro);
        j.at("loss_per_client").get_to(r.loss_per_client);
        j.at("floats_up").get_to(r.floats_up);
        j.at("floats_down").get_to(r.floats_down);
        j.at("wall_ms_per_client").get_to(r.wall_ms_per_client);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("bad round record: ") + e.what());
    }
    return r;
}

F1Scores evaluate(const ParamVector& model, const ModelSpec& spec, const TestSplit& test) {
    const std::size_t n = test.n();
    if (n == 0) throw InvalidArgument("evaluate: empty test split");
    const std::size_t P = spec.num_classes;
    constexpr std::size_t kChunk = 512;
    std::vector<std::uint8_t> preds(n * P, 0);
    Batch b;
    b.input_dim = spec.input_dim;
    b.num_classes = P;
    for (std::size_t start = 0; start < n; start += kChunk) {
        const std::size_t count = std::min(kChunk, n - start);
        b.n = count;
        b.features.assign(test.features.begin() + start * spec.input_dim,
                          test.features.begin() + (start + count) * spec.input_dim);
        b.labels.assign(count * P, 0); // labels unused by forward
        ForwardTrace tr = forward_eval(model, spec, b);
        for (std::size_t i = 0; i < count * P; ++i)
            preds[start * P + i] = tr.logits[i] > 0.0 ? 1 : 0; // sigmoid(z) > 0.5
    }
    return f1_scores(preds, test.labels, n, P);
}

F1Scores evaluate_mean(const std::vector<ParamVector>& models, const ModelSpec& spec,
                       const TestSplit& test) {
    if (models.empty()) throw InvalidArgument("evaluate_mean: no models");
    F1Scores acc;
    for (const ParamVector& m : models) {
        F1Scores s = evaluate(m, spec, test);
        acc.micro += s.micro;
        acc.macro += s.macro;
    }
    acc.micro /= static_cast<double>(models.size());
    acc.macro /= static_cast<double>(models.size());
    return acc;
}

std::optional<std::uint64_t> rounds_to_threshold(const std::vector<RoundRecord>& records,
                                                 double theta) {
    if (!(theta > 0 && theta < 100))
        throw InvalidArgument("rounds_to_threshold: theta must be in (0, 100)");
    for (const RoundRecord& r : records)
        if (r.f1_micro >= theta) return r.round;
    return std::nullopt;
}

namespace {

template <typename F>
void parallel_for(std::size_t n, std::size_t threads, F&& f) {
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) f(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mu;
    auto worker = [&] {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                f(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mu);
                if (!error) error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    const std::size_t nt = std::min(threads, n);
    pool.reserve(nt);
    for (std::size_t t = 0; t < nt; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

constexpr std::uint64_t kStateVersion = 1;

void write_state(const fs::path& path, std::uint64_t completed, const ServerState& server,
                 const std::vector<ClientState>& clients) {
    ByteWriter w;
    w.magic();
    w.u64(kStateVersion);
    w.u64(completed);
    w.u64(server.round);
    write_params(w, server.w);
    w.u8(server.v.empty() ? 0 : 1);
    if (!server.v.empty()) write_params(w, server.v);
    w.u64(server.hypernets.size());
    for (const Hypernetwork& hn : server.hypernets) hn.serialize(w);
    w.u64(server.client_models.size());
    for (const ParamVector& m : server.client_models) write_params(w, m);
    w.u64(clients.size());
    for (const ClientState& c : clients) {
        w.u64(c.client_id);
        write_params(w, c.model);
        w.u8(c.v.empty() ? 0 : 1);
        if (!c.v.empty()) write_params(w, c.v);
        w.u8(c.h.empty() ? 0 : 1);
        if (!c.h.empty()) write_params(w, c.h);
        w.u8(c.prev_local.empty() ? 0 : 1);
        if (!c.prev_local.empty()) write_params(w, c.prev_local);
        w.u64(c.bn_values.size());
        w.f64_span(c.bn_values);
    }
    write_file_atomic(path, w.buffer());
}

std::uint64_t read_state(const fs::path& path, ServerState& server,
                         std::vector<ClientState>& clients) {
    ByteReader r(read_file(path));
    r.magic();
    std::uint64_t version = r.u64();
    if (version != kStateVersion)
        throw IoError("state file " + path.string() + " has version " +
                      std::to_string(version) + ", expected " + std::to_string(kStateVersion));
    std::uint64_t completed = r.u64();
    server.round = r.u64();
    server.w = read_params(r);
    if (r.u8()) server.v = read_params(r);
    std::uint64_t nh = r.u64();
    server.hypernets.clear();
    for (std::uint64_t i = 0; i < nh; ++i)
        server.hypernets.push_back(Hypernetwork::deserialize(r));
    std::uint64_t nm = r.u64();
    server.client_models.clear();
    for (std::uint64_t i = 0; i < nm; ++i) server.client_models.push_back(read_params(r));
    std::uint64_t nc = r.u64();
    if (nc != clients.size())
        throw IoError("state file has " + std::to_string(nc) + " clients, run has " +
                      std::to_string(clients.size()));
    for (ClientState& c : clients) {
        c.client_id = r.u64();
        c.model = read_params(r);
        if (r.u8()) c.v = read_params(r);
        if (r.u8()) c.h = read_params(r);
        if (r.u8()) c.prev_local = read_params(r);
        c.bn_values.resize(static_cast<std::size_t>(r.u64()));
        r.f64_into(c.bn_values);
    }
    r.expect_end();
    return completed;
}

std::string read_text_file(const fs::path& path) {
    auto raw = read_file(path);
    return std::string(raw.begin(), raw.end());
}

void write_text_file_atomic(const fs::path& path, const std::string& text) {
    write_file_atomic(path, std::span<const std::uint8_t>(
                                reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

// Models whose scores define the round metric: the global model for most
// strategies, per-client compositions for FedBN, personalized mixtures for
// pFedLA.
F1Scores evaluate_strategy(const ServerState& server, const std::vector<ClientState>& clients,
                           const ModelSpec& spec, const TestSplit& test) {
    if (server.strategy == StrategyKind::fedbn) {
        std::vector<ParamVector> models;
        models.reserve(clients.size());
        for (const ClientState& c : clients) {
            ParamVector m = server.w;
            inject_bn_values(m, c.bn_values);
            models.push_back(std::move(m));
        }
        return evaluate_mean(models, spec, test);
    }
    if (server.strategy == StrategyKind::pfedla) {
        std::vector<ParamVector> models;
        models.reserve(server.num_clients);
        for (std::size_t i = 0; i < server.num_clients; ++i)
            models.push_back(serve(server, i));
        return evaluate_mean(models, spec, test);
    }
    return evaluate(server.w, spec, test);
}

// One process owns a run directory at a time. The lock is advisory
// (O_EXCL create); a crash that skips destructors leaves it behind, and
// the error message says what to remove.
class DirLock {
public:
    explicit DirLock(const fs::path& dir) : path_(dir / ".lock") {
        std::error_code ec;
        fs::create_directories(dir, ec);
        int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd < 0) {
            if (errno == EEXIST)
                throw IoError("run directory " + dir.string() +
                              " is locked by another process (remove " + path_.string() +
                              " if that process is gone)");
            throw IoError("cannot create lock file " + path_.string());
        }
        std::string pid = std::to_string(::getpid()) + "\n";
        ssize_t n = ::write(fd, pid.data(), pid.size());
        (void)n;
        ::close(fd);
    }
    ~DirLock() {
        std::error_code ec;
        fs::remove(path_, ec);
    }
    DirLock(const DirLock&) = delete;
    DirLock& operator=(const DirLock&) = delete;

private:
    fs::path path_;
};

} // namespace

RunResult run_experiment(const ExperimentConfig& cfg_in) {
    ExperimentConfig cfg = cfg_in;
    cfg.finalize();
    cfg.validate();

    DatasetBundle bundle;
    if (!cfg.dataset_path.empty()) {
        bundle = load_dataset(cfg.dataset_path);
        if (bundle.clients[0].input_dim != cfg.model.input_dim ||
            bundle.clients[0].num_classes != cfg.model.num_classes)
            throw ConfigError("dataset " + cfg.dataset_path + " has input_dim=" +
                              std::to_string(bundle.clients[0].input_dim) + ", num_classes=" +
                              std::to_string(bundle.clients[0].num_classes) +
                              " which does not match the model spec");
    } else {
        SamplePool pool = generate_global_pool(cfg.data);
        bundle = partition(pool, cfg.data, cfg.scenario);
    }
    const std::size_t K = bundle.clients.size();

    ServerState server =
        init_server(cfg.strategy, cfg.model, cfg.hp, cfg.eta, cfg.seed, K);
    std::vector<ClientState> clients = init_clients(server);

    RunResult result;
    result.config = cfg;

    const bool persist = !cfg.out_dir.empty();
    fs::path dir(cfg.out_dir);
    fs::path records_path = dir / "records.jsonl";
    fs::path state_path = dir / "state.bin";
    fs::path config_path = dir / "config.txt";
    const std::string config_echo = dump_experiment_config(cfg);

    std::uint64_t completed = 0;        // rounds already replayable from state
    std::uint64_t recorded = 0;         // round lines already on disk

    std::optional<DirLock> lock;
    if (persist) lock.emplace(dir);

    if (persist) {
        fs::create_directories(dir);
        if (fs::exists(records_path)) {
            if (!cfg.resume)
                throw ConfigError("run directory " + dir.string() +
                                  " already contains records.jsonl; pass resume=true or use a "
                                  "fresh directory");
            if (!fs::exists(config_path) || read_text_file(config_path) != config_echo)
                throw ConfigError("resume: config mismatch with " + config_path.string() +
                                  "; refusing to mix configurations in one run directory");
            std::ifstream in(records_path);
            std::string line;
            bool first = true;
            while (std::getline(in, line)) {
                if (line.empty()) continue;
                if (first) {
                    first = false;
                    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
                    if (j.is_discarded() || !j.contains("schema_version") ||
                        j["schema_version"].get<int>() != kRecordSchemaVersion)
                        throw IoError("records.jsonl: missing or unsupported schema_version");
                    continue;
                }
                result.records.push_back(record_from_json_line(line));
            }
            recorded = result.records.size();
            if (fs::exists(state_path)) {
                completed = read_state(state_path, server, clients);
            } else {
                completed = 0;
                server = init_server(cfg.strategy, cfg.model, cfg.hp, cfg.eta, cfg.seed, K);
                clients = init_clients(server);
            }
            if (completed > recorded)
                throw IoError("state.bin is ahead of records.jsonl (" +
                              std::to_string(completed) + " > " + std::to_string(recorded) +
                              "); run directory is inconsistent");
            // Replayed rounds <= recorded regenerate identical records and are
            // not re-appended.
            result.records.resize(static_cast<std::size_t>(completed));
        } else {
            write_text_file_atomic(config_path, config_echo);
            nlohmann::json header;
            header["schema_version"] = kRecordSchemaVersion;
            std::ofstream out(records_path, std::ios::trunc);
            if (!out) throw IoError("cannot open " + records_path.string());
            out << header.dump() << "\n";
        }
    }

    if (completed >= cfg.rounds) {
        result.resumed_complete = true;
    }

    const bool cv = !server.v.empty();
    const std::uint64_t bn_count = batch_norm_param_count(server.w.segments());

    std::ofstream record_out;
    if (persist && !result.resumed_complete) {
        record_out.open(records_path, std::ios::app);
        if (!record_out) throw IoError("cannot append to " + records_path.string());
    }

    try {
        for (std::uint64_t r = completed + 1; r <= cfg.rounds; ++r) {
            std::vector<ParamVector> served(K);
            for (std::size_t i = 0; i < K; ++i) served[i] = serve(server, i);

            std::uint64_t down_per_client = server.w.size();
            if (cfg.strategy == StrategyKind::fedbn) down_per_client -= bn_count;
            if (cv) down_per_client += server.v.size();

            TrainSettings ts;
            ts.epochs = cfg.epochs;
            ts.eta = cfg.eta;
            ts.batch_size = cfg.batch_size;
            ts.optimizer = cfg.optimizer;
            ts.run_seed = cfg.seed;
            ts.round = r;

            std::vector<ClientUpdate> updates(K);
            parallel_for(K, cfg.threads, [&](std::size_t i) {
                updates[i] = local_train(cfg.strategy, clients[i], bundle.clients[i], served[i],
                                         cv ? &server.v : nullptr, cfg.model, cfg.hp, ts);
            });

            aggregate(server, updates);

            F1Scores f1 = evaluate_strategy(server, clients, cfg.model, bundle.test);

            RoundRecord rec;
            rec.round = r;
            rec.f1_micro = f1.micro;
            rec.f1_macro = f1.macro;
            rec.loss_per_client.resize(K);
            rec.wall_ms_per_client.assign(K, 0.0);
            rec.floats_down = down_per_client * K;
            for (std::size_t i = 0; i < K; ++i) {
                rec.loss_per_client[i] = updates[i].mean_loss;
                rec.floats_up += updates[i].payload_floats;
                if (cfg.record_wall_time) rec.wall_ms_per_client[i] = updates[i].wall_ms;
            }
            result.records.push_back(rec);

            if (persist) {
                if (r > recorded) {
                    record_out << record_to_json_line(rec) << "\n";
                    record_out.flush();
                }
                write_state(state_path, r, server, clients);
            }
        }
    } catch (const NumericError&) {
        if (persist) {
            nlohmann::json j;
            j["completed"] = false;
            j["rounds_done"] = result.records.size();
            write_text_file_atomic(dir / "result.json", j.dump(2) + "\n");
        }
        throw;
    }

    for (double theta : cfg.thresholds)
        result.thresholds.push_back({theta, rounds_to_threshold(result.records, theta)});
    if (!result.records.empty()) {
        result.f1_micro_final = result.records.back().f1_micro;
        result.f1_macro_final = result.records.back().f1_macro;
    }

    if (persist) {
        if (cfg.strategy == StrategyKind::pfedla) {
            for (std::size_t i = 0; i < K; ++i)
                save_params(serve(server, i),
                            dir / ("checkpoint_client" + std::to_string(i) + ".bin"));
        } else {
            save_params(server.w, dir / "checkpoint.bin");
            if (cfg.strategy == StrategyKind::fedbn) {
                for (std::size_t i = 0; i < K; ++i) {
                    ParamVector m = server.w;
                    inject_bn_values(m, clients[i].bn_values);
                    save_params(m, dir / ("checkpoint_client" + std::to_string(i) + ".bin"));
                }
            }
        }
        nlohmann::json j;
        j["completed"] = true;
        j["rounds"] = cfg.rounds;
        j["f1_micro_final"] = result.f1_micro_final;
        j["f1_macro_final"] = result.f1_macro_final;
        nlohmann::json th = nlohmann::json::array();
        for (const ThresholdHit& t : result.thresholds) {
            nlohmann::json e;
            e["theta"] = t.threshold;
            if (t.round) e["round"] = *t.round;
            else e["round"] = nullptr;
            th.push_back(e);
        }
        j["rounds_to_threshold"] = th;
        write_text_file_atomic(dir / "result.json", j.dump(2) + "\n");
    }
    return result;
}

} // namespace fbsim
