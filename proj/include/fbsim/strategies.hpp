#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fbsim/datagen.hpp"
#include "fbsim/hypernet.hpp"
#include "fbsim/model.hpp"
#include "fbsim/optimizer.hpp"

namespace fbsim {

enum class StrategyKind { fedavg, fedprox, scaffold, moon, feddc, fednova, fedbn, pfedla };

inline constexpr StrategyKind kAllStrategies[] = {
    StrategyKind::fedavg, StrategyKind::fedprox, StrategyKind::scaffold, StrategyKind::moon,
    StrategyKind::feddc,  StrategyKind::fednova, StrategyKind::fedbn,    StrategyKind::pfedla,
};

const char* strategy_name(StrategyKind k);
StrategyKind strategy_from_name(const std::string& s); // throws ConfigError

struct StrategyHyperparams {
    double gamma = 0.01;              // FedProx proximal weight
    double tau = 1.0;                 // MOON temperature
    double mu = 0.1;                  // MOON loss weight
    double feddc_penalty_weight = 1.0;
    std::size_t pfedla_embed_dim = 8;
    std::size_t pfedla_hidden = 32;
    double pfedla_hyper_lr = 0.0;     // <= 0 means: use eta

    // Semantics switches (normally left at defaults):
    bool fednova_paper_literal = false;     // scale parameters, not deltas
    bool freeze_control_variates = false;   // pin v, v_i at zero (identity tests)
    bool feddc_drift_in_aggregate = true;   // include h_i in the FedDC aggregate

    void validate() const;
};

// Per-client persistent state across rounds. Vectors that a strategy does
// not use stay empty.
struct ClientState {
    std::uint64_t client_id = 0;
    ParamVector model;              // last locally trained parameters
    ParamVector v;                  // client control variate (SCAFFOLD/FedDC)
    ParamVector h;                  // local drift accumulator (FedDC)
    ParamVector prev_local;         // previous round's local model (MOON)
    std::vector<double> bn_values;  // retained BN coordinates (FedBN)
    Optimizer opt;
};

struct ServerState {
    StrategyKind strategy = StrategyKind::fedavg;
    StrategyHyperparams hp;
    std::size_t num_clients = 0;
    double eta = 1e-3; // hypernetwork step size source when pfedla_hyper_lr <= 0
    std::uint64_t round = 1;

    ParamVector w;                          // global model
    ParamVector v;                          // global control variate (SCAFFOLD/FedDC)
    std::vector<Hypernetwork> hypernets;    // pFedLA, one per client
    std::vector<ParamVector> client_models; // pFedLA, stored w_j for mixing
};

struct ClientUpdate {
    std::uint64_t client_id = 0;
    ParamVector model;        // trained w_i
    ParamVector delta_v;      // SCAFFOLD/FedDC
    ParamVector drift;        // FedDC h_i
    std::uint64_t num_local_steps = 0;
    std::size_t dataset_size = 0;
    double mean_loss = 0.0;   // mean base BCE over the round's batches
    double wall_ms = 0.0;
    std::uint64_t payload_floats = 0; // exactly what the ledger books as upload
};

struct CommFootprint {
    std::uint64_t up = 0;   // floats per client per round
    std::uint64_t down = 0;
};

struct TrainSettings {
    std::size_t epochs = 3;
    double eta = 1e-3;
    std::size_t batch_size = 64;
    OptimizerConfig optimizer;
    std::uint64_t run_seed = 1;
    std::uint64_t round = 1;
};

ServerState init_server(StrategyKind strategy, const ModelSpec& spec,
                        const StrategyHyperparams& hp, double eta, std::uint64_t seed,
                        std::size_t num_clients);

std::vector<ClientState> init_clients(const ServerState& server);

// Model the server sends to client_id this round (pFedLA: the personalized
// per-layer mixture, Eq.-17-style; everyone else: the global model).
ParamVector serve(const ServerState& server, std::uint64_t client_id);

// One round of local training. `served` is what serve() returned for this
// client; server_v is the global control variate or null.
ClientUpdate local_train(StrategyKind strategy, ClientState& client, const ClientDataset& data,
                         const ParamVector& served, const ParamVector* server_v,
                         const ModelSpec& spec, const StrategyHyperparams& hp,
                         const TrainSettings& settings);

// Folds all K updates into the server state and advances the round counter.
// Updates must arrive in client-id order, one per client.
void aggregate(ServerState& server, const std::vector<ClientUpdate>& updates);

CommFootprint comm_footprint(StrategyKind strategy, const ModelSpec& spec, std::size_t K);

// MOON's model-contrastive term for one batch of per-sample feature rows
// (current, global, previous-local), batch-sum reduction.
// loss = sum_i log(1 + exp((s_prev_i - s_glob_i)/tau)); dfeatures is the
// gradient w.r.t. the current model's features.
struct MoonTerm {
    double loss = 0.0;
    std::vector<double> dfeatures; // n x feature_dim
};
MoonTerm moon_contrastive(std::span<const double> f_cur, std::span<const double> f_glob,
                          std::span<const double> f_prev, std::size_t n, std::size_t feature_dim,
                          double tau);

// FedBN helpers: gather/scatter the batch-norm coordinates of a vector.
std::vector<double> extract_bn_values(const ParamVector& params);
void inject_bn_values(ParamVector& params, std::span<const double> bn_values);

} // namespace fbsim
