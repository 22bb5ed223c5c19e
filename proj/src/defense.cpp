#include "splitguard/defense.hpp"

#include <algorithm>
#include <cmath>

#include "splitguard/errors.hpp"

namespace splitguard::defense {

topo::DetectConfig detect_config(const ExperimentConfig& cfg) {
    topo::DetectConfig dc;
    dc.k = cfg.detect_k;
    dc.rho = cfg.kde_rho;
    dc.per_class = cfg.detect_per_class;
    dc.tas.alpha = cfg.ppr_alpha;
    dc.tas.eps = cfg.ppr_eps;
    dc.tas.tol = cfg.ppr_tol;
    dc.tas.max_iter = cfg.ppr_max_iter;
    if (cfg.teleport == "degree") dc.tas.teleport = topo::Teleport::degree;
    else if (cfg.teleport == "uniform") dc.tas.teleport = topo::Teleport::uniform;
    else dc.tas.teleport = topo::Teleport::inverse_degree;
    return dc;
}

FeatureScaler FeatureScaler::fit(const std::vector<SmashedRecord>& records,
                                 const std::vector<bool>& exclude) {
    if (records.empty()) throw DomainError("FeatureScaler::fit: no records");
    const std::size_t d = records.front().z.size();
    FeatureScaler s;
    s.mean.assign(d, 0.0);
    s.std.assign(d, 0.0);
    std::size_t n = 0;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (i < exclude.size() && exclude[i]) continue;
        for (std::size_t j = 0; j < d; ++j) s.mean[j] += records[i].z[j];
        ++n;
    }
    if (n == 0) throw DomainError("FeatureScaler::fit: all records excluded");
    for (double& m : s.mean) m /= static_cast<double>(n);
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (i < exclude.size() && exclude[i]) continue;
        for (std::size_t j = 0; j < d; ++j) {
            const double dlt = records[i].z[j] - s.mean[j];
            s.std[j] += dlt * dlt;
        }
    }
    for (double& v : s.std) v = std::max(std::sqrt(v / static_cast<double>(n)), 1e-8);
    return s;
}

std::vector<double> FeatureScaler::transform(const std::vector<double>& z) const {
    std::vector<double> out(z.size());
    for (std::size_t j = 0; j < z.size(); ++j) {
        out[j] = std::clamp((z[j] - mean[j]) / std[j], -clip, clip);
    }
    return out;
}

std::vector<double> FeatureScaler::inverse(const std::vector<double>& z) const {
    std::vector<double> out(z.size());
    for (std::size_t j = 0; j < z.size(); ++j) out[j] = z[j] * std[j] + mean[j];
    return out;
}

Pipeline::Pipeline(const ExperimentConfig& cfg, int n_clients, int n_classes)
    : cfg_(cfg), n_clients_(n_clients), n_classes_(n_classes) {}

void Pipeline::refresh_models(const std::vector<SmashedRecord>& pool,
                              const std::vector<bool>& mask, const std::vector<double>& scores,
                              int round) {
    const std::size_t k = pool.size();
    const std::size_t d_z = pool.front().z.size();
    Matrix z(k, d_z);
    influence::TaskLabels labels;
    labels.n_client_labels = n_clients_;
    labels.n_category_labels = n_classes_;
    for (std::size_t i = 0; i < k; ++i) {
        std::copy(pool[i].z.begin(), pool[i].z.end(), z.row(i));
        labels.poison.push_back(mask[i] ? 1 : 0);
        labels.client.push_back(pool[i].client_id);
        labels.category.push_back(pool[i].label);
    }

    const std::uint64_t r64 = static_cast<std::uint64_t>(round);
    if (!cfg_.ablate_ad) {
        Rng rng = Rng::stream(cfg_.seed, {0xad0, r64});
        ad_ = influence::make_ad_teacher(d_z, 64, 32, n_clients_, n_classes_, rng);
        influence::AdTrainConfig tc;
        tc.epochs = cfg_.ad_epochs;
        tc.lr = cfg_.ad_lr;
        tc.lambda_b = cfg_.lambda_b;
        tc.lambda_c = cfg_.lambda_c;
        tc.beta = cfg_.beta;
        tc.influence_refresh = cfg_.influence_refresh;
        tc.clip_norm = 5.0;
        tc.r_mode = cfg_.r_mode == "outer" ? influence::RMode::outer : influence::RMode::broadcast;
        influence::train_ad_teacher(*ad_, z, labels, scores, tc);
    }

    if (!cfg_.ablate_vanilla) {
        // Detected-clean records labeled clean plus a small reservoir of
        // detected-poisoned ones so the two-way head is trainable.
        std::vector<std::size_t> clean_rows, poison_rows;
        for (std::size_t i = 0; i < k; ++i) (mask[i] ? poison_rows : clean_rows).push_back(i);
        if (clean_rows.empty()) throw ConfigError("vanilla teacher: no detected-clean records");
        const std::size_t reservoir = std::min(
            poison_rows.size(),
            static_cast<std::size_t>(std::ceil(cfg_.reservoir_ratio *
                                               static_cast<double>(clean_rows.size()))));
        std::vector<std::size_t> rows = clean_rows;
        rows.insert(rows.end(), poison_rows.begin(),
                    poison_rows.begin() + static_cast<std::ptrdiff_t>(reservoir));
        Matrix vz(rows.size(), d_z);
        std::vector<int> vlabels(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            std::copy(pool[rows[i]].z.begin(), pool[rows[i]].z.end(), vz.row(i));
            vlabels[i] = i < clean_rows.size() ? 0 : 1;
        }
        Rng rng = Rng::stream(cfg_.seed, {0x7a2, r64});
        vanilla_ = distill::make_teacher(d_z, 32, rng);
        distill::train_vanilla_teacher(*vanilla_, vz, vlabels, cfg_.vanilla_epochs,
                                       cfg_.teacher_lr);
    }

    {
        std::vector<int> client_labels(labels.client.begin(), labels.client.end());
        Rng rng = Rng::stream(cfg_.seed, {0x57d, r64});
        student_ = distill::make_student(d_z, 32, n_clients_, rng);
        distill::StudentTrainConfig sc;
        sc.epochs = cfg_.student_epochs;
        sc.lr = cfg_.teacher_lr;
        sc.distill.tau = cfg_.tau;
        sc.distill.momentum = cfg_.distill_m;
        sc.distill.kappa = cfg_.kappa;
        sc.distill.eps = cfg_.distill_eps;
        sc.distill.mu0 = cfg_.mu0;
        sc.distill.eta0 = cfg_.eta0;
        sc.distill.lambda_b = cfg_.student_lambda_b;
        sc.use_vanilla = !cfg_.ablate_distill && !cfg_.ablate_vanilla && vanilla_.has_value();
        sc.use_ad = !cfg_.ablate_distill && !cfg_.ablate_ad && ad_.has_value();
        last_momentum_ = distill::train_student(*student_, z, labels.poison, client_labels,
                                                vanilla_ ? &*vanilla_ : nullptr,
                                                ad_ ? &*ad_ : nullptr, sc);
    }
    models_ready_ = true;
}

std::vector<SmashedRecord> Pipeline::repair(std::vector<SmashedRecord> pool, int round,
                                            Stats& stats) {
    if (pool.size() < static_cast<std::size_t>(cfg_.detect_k) + 1) {
        stats.ran = false;  // not enough records to build the graph this round
        return pool;
    }

    const topo::DetectConfig dc = detect_config(cfg_);
    last_detection_ = topo::detect(pool, dc);
    const std::vector<bool>& mask = last_detection_.mask;
    stats.ran = true;
    stats.detection = topo::score_detection(mask, pool);
    stats.flagged = last_detection_.poisoned_indices.size();
    stats.threshold = last_detection_.detail.threshold;

    // All learned defense components work on standardized features so that
    // far-displaced poisons cannot dominate their gradients.
    scaler_ = FeatureScaler::fit(pool, mask);
    std::vector<SmashedRecord> tpool = pool;
    for (auto& rec : tpool) rec.z = scaler_.transform(rec.z);

    // Bootstrap: substitution is gated by the student, so the very first
    // defended round trains the models up front.
    if (!models_ready_) refresh_models(tpool, mask, last_detection_.scores, round);

    if (defense_rounds_ % cfg_.gan_every == 0 || !gans_.any_trainable()) {
        std::vector<SmashedRecord> clean;
        for (std::size_t i = 0; i < tpool.size(); ++i) {
            if (!mask[i]) clean.push_back(tpool[i]);
        }
        gan::GanConfig gc;
        gc.noise_dim = cfg_.gan_noise_dim;
        gc.hidden = cfg_.gan_hidden;
        gc.lr = cfg_.gan_lr;
        gc.steps = cfg_.gan_steps;
        gc.min_class = cfg_.gan_min_class;
        gc.batch = cfg_.gan_batch;
        Rng rng = Rng::stream(cfg_.seed, {0x6a4, static_cast<std::uint64_t>(round)});
        gans_ = gan::train_gan(clean, gc, rng);
    }

    gan::Validator validator;
    validator.conf_threshold = cfg_.gate_conf;
    if (!cfg_.ablate_distill) {
        validator.student = student_ ? &*student_ : nullptr;
        validator.ad_teacher = (!cfg_.ablate_ad && ad_) ? &*ad_ : nullptr;
    }
    gan::SubstitutionReport sub;
    Rng sub_rng = Rng::stream(cfg_.seed, {0x5b5, static_cast<std::uint64_t>(round)});
    const std::vector<SmashedRecord> trepaired =
        gan::substitute(tpool, mask, gans_, validator, cfg_.candidate_budget, sub_rng, &sub);
    stats.replaced = sub.replaced;
    stats.dropped = sub.dropped;

    // Map back to the original feature space: untouched records pass through
    // bit-identical, replacements are inverse-transformed.
    std::vector<SmashedRecord> repaired;
    repaired.reserve(trepaired.size());
    {
        std::size_t cursor = 0;
        for (std::size_t i = 0; i < pool.size(); ++i) {
            if (sub.outcomes[i] == gan::SubstitutionReport::kOutcomeDropped) continue;
            const SmashedRecord& trec = trepaired[cursor++];
            if (sub.outcomes[i] == gan::SubstitutionReport::kOutcomeKept) {
                repaired.push_back(pool[i]);
            } else {
                SmashedRecord rec = trec;
                rec.z = scaler_.inverse(trec.z);
                repaired.push_back(std::move(rec));
            }
        }
    }

    // Steady-state refresh cadence; trains on this round's pool and detection.
    ++defense_rounds_;
    if (defense_rounds_ % cfg_.refresh_every == 0) {
        refresh_models(tpool, mask, last_detection_.scores, round);
    }
    stats.mu = last_momentum_.mu;
    stats.eta = last_momentum_.eta;
    return repaired;
}

std::vector<SmashedRecord> DetectOnly::repair(std::vector<SmashedRecord> pool, int round,
                                              Stats& stats) {
    (void)round;
    if (pool.size() < static_cast<std::size_t>(cfg_.detect_k) + 1) {
        stats.ran = false;
        return pool;
    }
    last_detection_ = topo::detect(pool, detect_config(cfg_));
    stats.ran = true;
    stats.detection = topo::score_detection(last_detection_.mask, pool);
    stats.flagged = last_detection_.poisoned_indices.size();
    stats.threshold = last_detection_.detail.threshold;
    return pool;
}

}  // namespace splitguard::defense
