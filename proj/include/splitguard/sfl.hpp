#pragma once
// Split federated learning rounds: client-side forward, server-side training,
// gradient return, dual aggregation, evaluation. A defense hook may rewrite
// the pooled smashed records between the client forwards and server training.

#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "splitguard/attacks.hpp"
#include "splitguard/config.hpp"
#include "splitguard/data.hpp"
#include "splitguard/nn.hpp"
#include "splitguard/record.hpp"
#include "splitguard/topo.hpp"

namespace splitguard::sfl {

enum class Aggregator { fedavg, median, trimmed_mean, krum };

Aggregator aggregator_from_name(const std::string& name);

// fedavg: weighted mean (empty weights = uniform); median/trimmed_mean:
// coordinate-wise with `trim_param` dropped from each end; krum: the model
// minimizing the summed squared distances to its n−f−2 nearest peers.
nn::MlpModel aggregate(const std::vector<nn::MlpModel>& models, const std::vector<double>& weights,
                       Aggregator method, int trim_param);

struct ClientState {
    int id = 0;
    nn::MlpModel model;
    std::vector<std::size_t> train_indices;
    std::vector<std::size_t> test_indices;
    bool is_malicious = false;
    attacks::AttackSpec attack;  // meaningful only for malicious clients
};

struct Batch {
    std::vector<std::size_t> sample_ids;
    Matrix inputs;
    std::vector<int> labels;
    std::vector<bool> poison_flags;
};

struct ForwardResult {
    std::vector<SmashedRecord> records;
    nn::Trace trace;
    std::vector<std::uint64_t> uids;
};

ForwardResult client_forward(const ClientState& client, const Batch& batch,
                             std::uint64_t& uid_counter);

struct ServerStep {
    double loss = 0.0;
    std::map<std::uint64_t, std::vector<double>> smashed_grads;  // keyed by record uid
};

// One cross-entropy training step on the given records; returns the loss at
// the pre-update parameters and the gradients w.r.t. each record's features.
ServerStep server_train_step(nn::MlpModel& server, const std::vector<SmashedRecord>& records,
                             double lr, double momentum, nn::GradientBundle& velocity);

// Chain rule through the client model using the returned smashed gradients.
// Records the defense dropped simply contribute nothing (zero rows); uids
// must match the trace row-for-row.
void client_backward(ClientState& client, const nn::Trace& trace,
                     const std::vector<std::uint64_t>& uids,
                     const std::map<std::uint64_t, std::vector<double>>& smashed_grads, double lr,
                     double momentum, nn::GradientBundle& velocity);

// Top-1 accuracy of server∘client over the given dataset rows.
double evaluate(const nn::MlpModel& client_model, const nn::MlpModel& server_model,
                const data::Dataset& dataset, const std::vector<std::size_t>& indices);

struct SystemState {
    data::Dataset dataset;
    std::vector<ClientState> clients;
    nn::MlpModel server;                        // shared-server mode
    std::vector<nn::MlpModel> server_replicas;  // per-client mode (cfg.server_replicas)
    std::vector<std::vector<double>> client_input_std;
    std::uint64_t seed = 0;
    int round = 0;
};

SystemState init_system(const ExperimentConfig& cfg);

class DefenseHook {
public:
    struct Stats {
        bool ran = false;
        topo::DetectionStats detection;
        std::size_t flagged = 0;
        std::size_t replaced = 0;
        std::size_t dropped = 0;
        double mu = 0.0, eta = 0.0;
        double threshold = 0.0;
    };

    virtual ~DefenseHook() = default;
    // Receives the whole round's pooled records and returns the rewritten
    // list. Returned uids must be a subset of the input uids.
    virtual std::vector<SmashedRecord> repair(std::vector<SmashedRecord> pool, int round,
                                              Stats& stats) = 0;
};

struct RoundReport {
    int round = 0;
    AttackMask attack;
    bool adaptive = false;
    bool defense_ran = false;
    double train_loss = 0.0;
    double accuracy = 0.0;
    std::vector<double> per_client_loss;
    std::vector<double> per_client_accuracy;
    topo::DetectionStats detection;
    std::size_t flagged = 0;
    std::size_t replaced = 0;
    std::size_t dropped = 0;
    double mu = 0.0, eta = 0.0;
    double sgv = std::numeric_limits<double>::quiet_NaN();
    double wall_ms = 0.0;
};

// One full SFL round: attacks → client forwards → defense hook → server
// training → client backprop → weight poisoning → dual aggregation →
// evaluation. Deterministic given state.seed and state.round.
RoundReport run_round(SystemState& state, const ExperimentConfig& cfg, DefenseHook* hook);

}  // namespace splitguard::sfl
