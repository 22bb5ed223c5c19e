#include "splitguard/sfl.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <set>

#include "splitguard/errors.hpp"
#include "splitguard/kernels.hpp"
#include "splitguard/sgv.hpp"

namespace splitguard::sfl {

Aggregator aggregator_from_name(const std::string& name) {
    if (name == "fedavg") return Aggregator::fedavg;
    if (name == "median") return Aggregator::median;
    if (name == "trimmed_mean") return Aggregator::trimmed_mean;
    if (name == "krum") return Aggregator::krum;
    throw ConfigError("unknown aggregator: " + name);
}

nn::MlpModel aggregate(const std::vector<nn::MlpModel>& models, const std::vector<double>& weights,
                       Aggregator method, int trim_param) {
    if (models.empty()) throw DomainError("aggregate: no models");
    const std::size_t n = models.size();
    std::vector<std::vector<double>> flat(n);
    for (std::size_t i = 0; i < n; ++i) {
        flat[i] = nn::flatten_params(models[i]);
        if (flat[i].size() != flat[0].size()) throw ShapeError("aggregate: model shapes differ");
    }
    const std::size_t p = flat[0].size();
    std::vector<double> out(p, 0.0);

    switch (method) {
        case Aggregator::fedavg: {
            std::vector<double> w = weights.empty() ? std::vector<double>(n, 1.0) : weights;
            if (w.size() != n) throw ShapeError("aggregate: weight count mismatch");
            const double total = kernels::sum(w.data(), w.size());
            if (total <= 0.0) throw DomainError("aggregate: non-positive weight total");
            for (std::size_t i = 0; i < n; ++i) {
                kernels::axpy(w[i] / total, flat[i].data(), out.data(), p);
            }
            break;
        }
        case Aggregator::median: {
            std::vector<double> column(n);
            for (std::size_t j = 0; j < p; ++j) {
                for (std::size_t i = 0; i < n; ++i) column[i] = flat[i][j];
                std::sort(column.begin(), column.end());
                out[j] = (n % 2 == 1) ? column[n / 2]
                                      : 0.5 * (column[n / 2 - 1] + column[n / 2]);
            }
            break;
        }
        case Aggregator::trimmed_mean: {
            const std::size_t f = static_cast<std::size_t>(std::max(trim_param, 0));
            if (2 * f >= n) {
                throw ConfigError("aggregate: trim parameter " + std::to_string(f) +
                                  " infeasible for group size " + std::to_string(n));
            }
            std::vector<double> column(n);
            const double inv = 1.0 / static_cast<double>(n - 2 * f);
            for (std::size_t j = 0; j < p; ++j) {
                for (std::size_t i = 0; i < n; ++i) column[i] = flat[i][j];
                std::sort(column.begin(), column.end());
                double acc = 0.0;
                for (std::size_t i = f; i < n - f; ++i) acc += column[i];
                out[j] = acc * inv;
            }
            break;
        }
        case Aggregator::krum: {
            const std::size_t f = static_cast<std::size_t>(std::max(trim_param, 0));
            if (n < f + 3) {
                throw ConfigError("aggregate: krum needs n >= f+3, got n=" + std::to_string(n) +
                                  " f=" + std::to_string(f));
            }
            const std::size_t keep = n - f - 2;
            std::size_t best = 0;
            double best_score = std::numeric_limits<double>::infinity();
            std::vector<double> dist(n);
            for (std::size_t i = 0; i < n; ++i) {
                std::size_t m = 0;
                for (std::size_t j = 0; j < n; ++j) {
                    if (j == i) continue;
                    dist[m++] = kernels::squared_distance(flat[i].data(), flat[j].data(), p);
                }
                std::sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(m));
                const double score =
                    std::accumulate(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(keep), 0.0);
                if (score < best_score) {
                    best_score = score;
                    best = i;
                }
            }
            return models[best];
        }
    }
    nn::MlpModel result = models[0];
    nn::set_params(result, out);
    return result;
}

ForwardResult client_forward(const ClientState& client, const Batch& batch,
                             std::uint64_t& uid_counter) {
    if (batch.sample_ids.empty()) throw DomainError("client_forward: empty batch");
    if (batch.labels.size() != batch.sample_ids.size() ||
        batch.poison_flags.size() != batch.sample_ids.size() ||
        batch.inputs.rows() != batch.sample_ids.size()) {
        throw ShapeError("client_forward: inconsistent batch");
    }
    ForwardResult fr;
    fr.trace = nn::forward(client.model, batch.inputs);
    fr.records.reserve(batch.sample_ids.size());
    for (std::size_t i = 0; i < batch.sample_ids.size(); ++i) {
        SmashedRecord rec;
        rec.uid = uid_counter++;
        rec.sample_id = batch.sample_ids[i];
        rec.client_id = client.id;
        rec.z.assign(fr.trace.output.row(i), fr.trace.output.row(i) + fr.trace.output.cols());
        rec.label = batch.labels[i];
        rec.poison_truth = batch.poison_flags[i];
        fr.records.push_back(std::move(rec));
        fr.uids.push_back(fr.records.back().uid);
    }
    return fr;
}

ServerStep server_train_step(nn::MlpModel& server, const std::vector<SmashedRecord>& records,
                             double lr, double momentum, nn::GradientBundle& velocity) {
    if (records.empty()) throw DomainError("server_train_step: empty record set");
    const std::size_t d_z = server.input_dim();
    Matrix z(records.size(), d_z);
    std::vector<int> labels(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (records[i].z.size() != d_z) throw ShapeError("server_train_step: record width mismatch");
        std::copy(records[i].z.begin(), records[i].z.end(), z.row(i));
        labels[i] = records[i].label;
    }
    const nn::Trace trace = nn::forward(server, z);
    const nn::CrossEntropy ce = nn::cross_entropy(trace.output, labels);
    nn::GradientBundle grads = nn::backward(server, trace, ce.grad);

    ServerStep step;
    step.loss = ce.loss;
    for (std::size_t i = 0; i < records.size(); ++i) {
        step.smashed_grads[records[i].uid] =
            std::vector<double>(grads.input.row(i), grads.input.row(i) + d_z);
    }
    nn::sgd_step(server, grads, lr, momentum, velocity);
    return step;
}

void client_backward(ClientState& client, const nn::Trace& trace,
                     const std::vector<std::uint64_t>& uids,
                     const std::map<std::uint64_t, std::vector<double>>& smashed_grads, double lr,
                     double momentum, nn::GradientBundle& velocity) {
    if (uids.size() != trace.output.rows()) {
        throw ContractError("client_backward: uid list does not match trace");
    }
    Matrix output_grad(trace.output.rows(), trace.output.cols());
    for (std::size_t i = 0; i < uids.size(); ++i) {
        auto it = smashed_grads.find(uids[i]);
        if (it == smashed_grads.end()) continue;  // record dropped by the defense
        if (it->second.size() != output_grad.cols()) {
            throw ContractError("client_backward: gradient width mismatch");
        }
        std::copy(it->second.begin(), it->second.end(), output_grad.row(i));
    }
    nn::GradientBundle grads = nn::backward(client.model, trace, output_grad);
    nn::sgd_step(client.model, grads, lr, momentum, velocity);
}

double evaluate(const nn::MlpModel& client_model, const nn::MlpModel& server_model,
                const data::Dataset& dataset, const std::vector<std::size_t>& indices) {
    if (indices.empty()) throw DomainError("evaluate: empty test set");
    constexpr std::size_t kChunk = 256;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < indices.size(); start += kChunk) {
        const std::size_t count = std::min(kChunk, indices.size() - start);
        Matrix x(count, dataset.dim());
        for (std::size_t i = 0; i < count; ++i) {
            const double* row = dataset.features.row(indices[start + i]);
            std::copy(row, row + dataset.dim(), x.row(i));
        }
        const Matrix z = nn::forward(client_model, x).output;
        const Matrix logits = nn::forward(server_model, z).output;
        for (std::size_t i = 0; i < count; ++i) {
            std::size_t argmax = 0;
            for (std::size_t c = 1; c < logits.cols(); ++c) {
                if (logits(i, c) > logits(i, argmax)) argmax = c;
            }
            if (argmax == static_cast<std::size_t>(dataset.labels[indices[start + i]])) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(indices.size());
}

SystemState init_system(const ExperimentConfig& cfg) {
    validate_config(cfg);
    SystemState state;
    state.seed = cfg.seed;

    if (cfg.dataset == "synthetic") {
        state.dataset = data::make_synthetic(cfg.classes, static_cast<std::size_t>(cfg.features),
                                             static_cast<std::size_t>(cfg.per_class), cfg.spread,
                                             cfg.seed);
    } else {
        state.dataset = data::load_idx(cfg.idx_images, cfg.idx_labels, cfg.idx_downsample);
    }

    const auto parts = data::partition(state.dataset, static_cast<std::size_t>(cfg.clients),
                                       cfg.noniid_q, cfg.seed);

    Rng client_init = Rng::stream(cfg.seed, {0xc11e});
    nn::MlpModel client_template =
        nn::make_mlp({state.dataset.dim(), static_cast<std::size_t>(cfg.client_hidden),
                      static_cast<std::size_t>(cfg.bottleneck)},
                     {nn::Activation::relu, nn::Activation::identity}, client_init);
    Rng server_init = Rng::stream(cfg.seed, {0x5e12});
    state.server = nn::make_mlp({static_cast<std::size_t>(cfg.bottleneck),
                                 static_cast<std::size_t>(cfg.server_hidden),
                                 static_cast<std::size_t>(state.dataset.num_classes)},
                                {nn::Activation::relu, nn::Activation::identity}, server_init);
    if (cfg.server_replicas) {
        state.server_replicas.assign(static_cast<std::size_t>(cfg.clients), state.server);
    }

    // Exactly round(ratio·N) malicious clients, chosen by seeded shuffle.
    const std::size_t n_malicious = static_cast<std::size_t>(
        std::llround(cfg.malicious_ratio * static_cast<double>(cfg.clients)));
    std::vector<int> ids(static_cast<std::size_t>(cfg.clients));
    std::iota(ids.begin(), ids.end(), 0);
    Rng mal_rng = Rng::stream(cfg.seed, {0x3a1});
    mal_rng.shuffle(ids);
    std::set<int> malicious(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_malicious));

    const attacks::AttackSpec spec = attacks::spec_from_config(cfg);
    for (int i = 0; i < cfg.clients; ++i) {
        ClientState client;
        client.id = i;
        client.model = client_template;
        const data::TrainTest tt = data::split_train_test(
            parts[static_cast<std::size_t>(i)], cfg.test_fraction,
            splitmix64(cfg.seed ^ static_cast<std::uint64_t>(i)));
        client.train_indices = tt.train;
        client.test_indices = tt.test;
        client.is_malicious = malicious.count(i) > 0;
        client.attack = spec;
        state.clients.push_back(std::move(client));
        state.client_input_std.push_back(
            data::feature_std(state.dataset.features, state.clients.back().train_indices));
    }
    return state;
}

namespace {

struct ClientBatchWork {
    int client_id = 0;
    nn::Trace trace;
    std::vector<std::uint64_t> uids;
    std::vector<SmashedRecord> records;
};

std::vector<Batch> make_batches(const SystemState& state, const ClientState& client,
                                const ExperimentConfig& cfg, int round) {
    std::vector<std::size_t> order = client.train_indices;
    std::vector<Batch> batches;
    for (int epoch = 0; epoch < cfg.local_epochs; ++epoch) {
        Rng rng = Rng::stream(state.seed, {0xba7c, static_cast<std::uint64_t>(round),
                                           static_cast<std::uint64_t>(client.id),
                                           static_cast<std::uint64_t>(epoch)});
        rng.shuffle(order);
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t count =
                std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), order.size() - start);
            Batch b;
            b.sample_ids.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                                order.begin() + static_cast<std::ptrdiff_t>(start + count));
            b.inputs = Matrix(count, state.dataset.dim());
            b.labels.resize(count);
            b.poison_flags.assign(count, false);
            for (std::size_t i = 0; i < count; ++i) {
                const double* row = state.dataset.features.row(b.sample_ids[i]);
                std::copy(row, row + state.dataset.dim(), b.inputs.row(i));
                b.labels[i] = state.dataset.labels[b.sample_ids[i]];
            }
            batches.push_back(std::move(b));
        }
    }
    return batches;
}

std::vector<double> smashed_feature_std(const std::vector<SmashedRecord>& records) {
    const std::size_t d = records.front().z.size();
    std::vector<double> mean(d, 0.0), var(d, 0.0);
    for (const auto& r : records) {
        for (std::size_t j = 0; j < d; ++j) mean[j] += r.z[j];
    }
    const double inv = 1.0 / static_cast<double>(records.size());
    for (double& m : mean) m *= inv;
    for (const auto& r : records) {
        for (std::size_t j = 0; j < d; ++j) {
            const double dlt = r.z[j] - mean[j];
            var[j] += dlt * dlt;
        }
    }
    std::vector<double> sd(d);
    for (std::size_t j = 0; j < d; ++j) sd[j] = std::sqrt(var[j] * inv);
    return sd;
}

}  // namespace

RoundReport run_round(SystemState& state, const ExperimentConfig& cfg, DefenseHook* hook) {
    const auto t0 = std::chrono::steady_clock::now();
    const int round = state.round;
    RoundReport report;
    report.round = round;
    report.attack = parse_attack_mask(cfg.attack);
    report.adaptive = cfg.adaptive;

    // Participant selection (100% by default).
    std::vector<int> participants;
    {
        std::vector<int> ids(state.clients.size());
        std::iota(ids.begin(), ids.end(), 0);
        if (cfg.participation >= 1.0) {
            participants = ids;
        } else {
            Rng rng = Rng::stream(state.seed, {0x9a57, static_cast<std::uint64_t>(round)});
            rng.shuffle(ids);
            const std::size_t take = std::max<std::size_t>(
                1, static_cast<std::size_t>(std::ceil(cfg.participation *
                                                      static_cast<double>(ids.size()))));
            participants.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(take));
            std::sort(participants.begin(), participants.end());
        }
    }

    // Client forwards with attack stages LP/DP (pre) and SP (post).
    std::uint64_t uid_counter = 0;
    std::vector<ClientBatchWork> work;
    std::vector<std::vector<double>> adaptive_reference;
    bool adaptive_active = false;
    for (int id : participants) {
        ClientState& client = state.clients[static_cast<std::size_t>(id)];
        const bool attacking = client.is_malicious && client.attack.mask.any();
        const bool marks_records =
            attacking && (client.attack.mask.lp || client.attack.mask.dp || client.attack.mask.sp);
        Rng attack_rng = Rng::stream(state.seed, {0xa77c, static_cast<std::uint64_t>(round),
                                                  static_cast<std::uint64_t>(id)});
        const bool wants_adaptive = attacking && client.attack.adaptive &&
                                    client.attack.lambda_a > 0.0 && client.attack.mask.sp;
        for (Batch& batch : make_batches(state, client, cfg, round)) {
            if (wants_adaptive) {
                // The attacker's own clean forwards serve as the mimicry target.
                const Matrix clean_z = nn::forward(client.model, batch.inputs).output;
                for (std::size_t i = 0; i < clean_z.rows(); ++i) {
                    adaptive_reference.emplace_back(clean_z.row(i), clean_z.row(i) + clean_z.cols());
                }
                adaptive_active = true;
            }
            if (marks_records) batch.poison_flags.assign(batch.poison_flags.size(), true);
            if (attacking && client.attack.mask.lp) {
                attacks::poison_labels(batch.labels, client.attack.delta_y, state.dataset.num_classes);
            }
            if (attacking && client.attack.mask.dp) {
                attacks::poison_inputs(batch.inputs, client.attack.delta_x,
                                       state.client_input_std[static_cast<std::size_t>(id)],
                                       attack_rng);
            }
            ClientBatchWork cbw;
            cbw.client_id = id;
            ForwardResult fr = client_forward(client, batch, uid_counter);
            if (attacking && client.attack.mask.sp) {
                attacks::poison_smashed(fr.records, client.attack.delta_z,
                                        smashed_feature_std(fr.records), attack_rng);
            }
            cbw.trace = std::move(fr.trace);
            cbw.uids = std::move(fr.uids);
            cbw.records = std::move(fr.records);
            work.push_back(std::move(cbw));
        }
    }

    if (adaptive_active && !adaptive_reference.empty()) {
        for (ClientBatchWork& cbw : work) {
            const ClientState& client = state.clients[static_cast<std::size_t>(cbw.client_id)];
            if (!client.is_malicious || !client.attack.adaptive) continue;
            if (client.attack.iterative) {
                attacks::adaptive_tas_evasion_iterative(cbw.records, adaptive_reference,
                                                        client.attack.lambda_a,
                                                        client.attack.adaptive_k,
                                                        client.attack.attack_epochs,
                                                        client.attack.attack_lr);
            } else {
                attacks::adaptive_tas_evasion(cbw.records, adaptive_reference,
                                              client.attack.lambda_a, client.attack.adaptive_k);
            }
        }
    }

    // Pool, defense hook, contract check.
    std::vector<SmashedRecord> pool;
    for (const ClientBatchWork& cbw : work) {
        pool.insert(pool.end(), cbw.records.begin(), cbw.records.end());
    }
    std::vector<SmashedRecord> repaired;
    if (hook) {
        std::set<std::uint64_t> known;
        for (const auto& rec : pool) known.insert(rec.uid);
        DefenseHook::Stats stats;
        repaired = hook->repair(pool, round, stats);
        for (const auto& rec : repaired) {
            if (!known.count(rec.uid)) {
                throw ContractError("defense hook returned unknown record uid " +
                                    std::to_string(rec.uid));
            }
        }
        report.defense_ran = stats.ran;
        report.detection = stats.detection;
        report.flagged = stats.flagged;
        report.replaced = stats.replaced;
        report.dropped = stats.dropped;
        report.mu = stats.mu;
        report.eta = stats.eta;
    } else {
        repaired = pool;
    }

    // Server-side training over the (possibly rewritten) pool.
    std::map<std::uint64_t, std::vector<double>> grad_map;
    double loss_acc = 0.0;
    std::size_t loss_count = 0;
    auto train_server = [&](nn::MlpModel& server, const std::vector<SmashedRecord>& records) {
        nn::GradientBundle velocity;
        for (std::size_t start = 0; start < records.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t count =
                std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), records.size() - start);
            const std::vector<SmashedRecord> chunk(records.begin() + static_cast<std::ptrdiff_t>(start),
                                                   records.begin() +
                                                       static_cast<std::ptrdiff_t>(start + count));
            ServerStep step = server_train_step(server, chunk, cfg.lr, cfg.momentum, velocity);
            loss_acc += step.loss * static_cast<double>(count);
            loss_count += count;
            grad_map.merge(step.smashed_grads);
        }
    };
    if (cfg.server_replicas) {
        std::map<int, std::vector<SmashedRecord>> by_client;
        for (const auto& rec : repaired) by_client[rec.client_id].push_back(rec);
        for (auto& [cid, records] : by_client) {
            train_server(state.server_replicas[static_cast<std::size_t>(cid)], records);
        }
    } else if (!repaired.empty()) {
        train_server(state.server, repaired);
    }
    report.train_loss = loss_count ? loss_acc / static_cast<double>(loss_count) : 0.0;

    // Gradient return: backpropagate every batch trace at the round-start
    // parameters, then apply one accumulated step per client (per-batch steps
    // would invalidate the remaining traces).
    {
        std::map<int, nn::GradientBundle> client_grads;
        for (ClientBatchWork& cbw : work) {
            ClientState& client = state.clients[static_cast<std::size_t>(cbw.client_id)];
            Matrix output_grad(cbw.trace.output.rows(), cbw.trace.output.cols());
            for (std::size_t i = 0; i < cbw.uids.size(); ++i) {
                auto it = grad_map.find(cbw.uids[i]);
                if (it == grad_map.end()) continue;  // dropped by the defense
                std::copy(it->second.begin(), it->second.end(), output_grad.row(i));
            }
            nn::GradientBundle grads = nn::backward(client.model, cbw.trace, output_grad);
            grads.input = Matrix();  // batch-shaped, not accumulable
            auto slot = client_grads.find(cbw.client_id);
            if (slot == client_grads.end()) {
                client_grads.emplace(cbw.client_id, std::move(grads));
            } else {
                slot->second.add(grads);
            }
        }
        for (auto& [cid, grads] : client_grads) {
            nn::GradientBundle velocity;
            nn::sgd_step(state.clients[static_cast<std::size_t>(cid)].model, grads, cfg.lr,
                         cfg.momentum, velocity);
        }
    }

    // Weight poisoning happens right before aggregation.
    for (int id : participants) {
        ClientState& client = state.clients[static_cast<std::size_t>(id)];
        if (client.is_malicious && client.attack.mask.wp) {
            Rng rng = Rng::stream(state.seed, {0x3bad, static_cast<std::uint64_t>(round),
                                               static_cast<std::uint64_t>(id)});
            attacks::poison_weights(client.model, client.attack.delta_theta,
                                    client.attack.wp_gaussian, rng);
        }
    }

    // Dual aggregation: fed server for client models, main server for replicas.
    const Aggregator method = aggregator_from_name(cfg.aggregator);
    {
        std::vector<nn::MlpModel> models;
        std::vector<double> weights;
        for (int id : participants) {
            models.push_back(state.clients[static_cast<std::size_t>(id)].model);
            weights.push_back(static_cast<double>(
                state.clients[static_cast<std::size_t>(id)].train_indices.size()));
        }
        nn::MlpModel global = aggregate(models, weights, method, cfg.krum_trim_param);
        for (ClientState& client : state.clients) client.model = global;
    }
    if (cfg.server_replicas) {
        std::vector<nn::MlpModel> models;
        for (int id : participants) {
            models.push_back(state.server_replicas[static_cast<std::size_t>(id)]);
        }
        nn::MlpModel global = aggregate(models, {}, method, cfg.krum_trim_param);
        for (auto& replica : state.server_replicas) replica = global;
        state.server = std::move(global);
    }

    // Evaluation on the pooled and per-client test sets.
    std::vector<std::size_t> all_test;
    for (const ClientState& client : state.clients) {
        all_test.insert(all_test.end(), client.test_indices.begin(), client.test_indices.end());
        report.per_client_accuracy.push_back(
            client.test_indices.empty()
                ? 0.0
                : evaluate(client.model, state.server, state.dataset, client.test_indices));
    }
    report.accuracy = all_test.empty()
                          ? 0.0
                          : evaluate(state.clients.front().model, state.server, state.dataset,
                                     all_test);

    // Per-client mean training loss under the post-update server model.
    {
        std::map<int, std::pair<double, std::size_t>> acc;
        for (const auto& rec : repaired) {
            Matrix z(1, rec.z.size());
            std::copy(rec.z.begin(), rec.z.end(), z.row(0));
            const Matrix logits = nn::forward(state.server, z).output;
            const auto ce = nn::per_sample_cross_entropy(logits, {rec.label});
            auto& slot = acc[rec.client_id];
            slot.first += ce.losses[0];
            slot.second += 1;
        }
        report.per_client_loss.assign(state.clients.size(), 0.0);
        for (const auto& [cid, slot] : acc) {
            report.per_client_loss[static_cast<std::size_t>(cid)] =
                slot.first / static_cast<double>(slot.second);
        }
    }

    if (cfg.sgv_every > 0 && round % cfg.sgv_every == 0 && repaired.size() >= 2) {
        report.sgv = sgv::estimate_sgv(state.server, repaired).sgv;
    }

    ++state.round;
    report.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                         .count();
    return report;
}

}  // namespace splitguard::sfl
