#include "splitguard/attacks.hpp"

#include <algorithm>
#include <cmath>

#include "splitguard/errors.hpp"
#include "splitguard/kernels.hpp"

namespace splitguard::attacks {

AttackSpec spec_from_config(const ExperimentConfig& cfg) {
    AttackSpec s;
    s.mask = parse_attack_mask(cfg.attack);
    s.delta_y = cfg.delta_y;
    s.delta_x = cfg.delta_x;
    s.delta_z = cfg.delta_z;
    s.delta_theta = cfg.delta_theta;
    s.wp_gaussian = cfg.wp_mode == "gaussian";
    s.adaptive = cfg.adaptive;
    s.lambda_a = cfg.lambda_a;
    s.adaptive_k = cfg.adaptive_k;
    s.iterative = cfg.attack_iterative;
    s.attack_epochs = cfg.attack_epochs;
    s.attack_lr = cfg.attack_lr;
    return s;
}

void poison_labels(std::vector<int>& labels, int delta_y, int num_classes) {
    if (num_classes < 2) throw DomainError("poison_labels: need at least 2 classes");
    for (int& y : labels) {
        y = ((y + delta_y) % num_classes + num_classes) % num_classes;
    }
}

void poison_inputs(Matrix& inputs, double scale, const std::vector<double>& feature_std, Rng& rng) {
    if (scale < 0.0) throw DomainError("poison_inputs: negative scale");
    if (feature_std.size() != inputs.cols()) throw ShapeError("poison_inputs: std width mismatch");
    for (std::size_t r = 0; r < inputs.rows(); ++r) {
        double* x = inputs.row(r);
        for (std::size_t j = 0; j < inputs.cols(); ++j) {
            x[j] += rng.normal(0.0, scale * std::max(feature_std[j], 1e-12));
        }
    }
}

void poison_smashed(std::vector<SmashedRecord>& records, double scale,
                    const std::vector<double>& feature_std, Rng& rng) {
    if (scale < 0.0) throw DomainError("poison_smashed: negative scale");
    for (SmashedRecord& rec : records) {
        if (feature_std.size() != rec.z.size()) throw ShapeError("poison_smashed: std width mismatch");
        for (std::size_t j = 0; j < rec.z.size(); ++j) {
            rec.z[j] += rng.normal(0.0, scale * std::max(feature_std[j], 1e-12));
        }
        rec.poison_truth = true;
    }
}

void poison_weights(nn::MlpModel& model, double scale, bool gaussian, Rng& rng) {
    if (scale < 0.0) throw DomainError("poison_weights: negative scale");
    if (scale == 0.0) return;
    std::vector<double> theta = nn::flatten_params(model);
    if (gaussian) {
        // Random direction with exact norm c·‖θ‖.
        const double theta_norm = std::sqrt(kernels::dot(theta.data(), theta.data(), theta.size()));
        std::vector<double> dir(theta.size());
        for (double& v : dir) v = rng.normal();
        const double dir_norm = std::sqrt(kernels::dot(dir.data(), dir.data(), dir.size()));
        if (dir_norm > 0.0) {
            kernels::axpy(scale * theta_norm / dir_norm, dir.data(), theta.data(), theta.size());
        }
    } else {
        // θ + (−c·θ) = (1−c)·θ; c = 2 flips the sign.
        kernels::scale(theta.data(), 1.0 - scale, theta.size());
    }
    nn::set_params(model, theta);
}

void apply_multi(const AttackSpec& spec, int num_classes, std::vector<int>* labels, Matrix* inputs,
                 const std::vector<double>& input_std, std::vector<SmashedRecord>* records,
                 const std::vector<double>& smashed_std, nn::MlpModel* model, Rng& rng) {
    if (spec.mask.lp && labels) poison_labels(*labels, spec.delta_y, num_classes);
    if (spec.mask.dp && inputs) poison_inputs(*inputs, spec.delta_x, input_std, rng);
    if (spec.mask.sp && records) poison_smashed(*records, spec.delta_z, smashed_std, rng);
    if (spec.mask.wp && model) poison_weights(*model, spec.delta_theta, spec.wp_gaussian, rng);
}

namespace {

std::vector<double> neighbor_mean(const std::vector<double>& z,
                                  const std::vector<std::vector<double>>& reference, int k) {
    const std::size_t kk = std::min<std::size_t>(static_cast<std::size_t>(k), reference.size());
    // (distance, index) pairs; ties broken by index for determinism.
    std::vector<std::pair<double, std::size_t>> dist(reference.size());
    for (std::size_t i = 0; i < reference.size(); ++i) {
        dist[i] = {kernels::squared_distance(z.data(), reference[i].data(), z.size()), i};
    }
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(kk), dist.end());
    std::vector<double> mean(z.size(), 0.0);
    for (std::size_t i = 0; i < kk; ++i) {
        kernels::axpy(1.0, reference[dist[i].second].data(), mean.data(), mean.size());
    }
    kernels::scale(mean.data(), 1.0 / static_cast<double>(kk), mean.size());
    return mean;
}

}  // namespace

void adaptive_tas_evasion(std::vector<SmashedRecord>& records,
                          const std::vector<std::vector<double>>& clean_reference, double lambda_a,
                          int k) {
    if (lambda_a < 0.0 || lambda_a > 1.0) throw DomainError("adaptive_tas_evasion: lambda outside [0,1]");
    if (clean_reference.empty()) throw ConfigError("adaptive_tas_evasion: empty clean reference");
    if (lambda_a == 0.0) return;
    for (SmashedRecord& rec : records) {
        if (!rec.poison_truth) continue;
        const std::vector<double> mean = neighbor_mean(rec.z, clean_reference, k);
        for (std::size_t j = 0; j < rec.z.size(); ++j) {
            rec.z[j] = (1.0 - lambda_a) * rec.z[j] + lambda_a * mean[j];
        }
    }
}

void adaptive_tas_evasion_iterative(std::vector<SmashedRecord>& records,
                                    const std::vector<std::vector<double>>& clean_reference,
                                    double lambda_a, int k, int epochs, double lr) {
    if (lambda_a < 0.0 || lambda_a > 1.0) throw DomainError("adaptive_tas_evasion: lambda outside [0,1]");
    if (clean_reference.empty()) throw ConfigError("adaptive_tas_evasion: empty clean reference");
    for (SmashedRecord& rec : records) {
        if (!rec.poison_truth) continue;
        for (int e = 0; e < epochs; ++e) {
            const std::vector<double> mean = neighbor_mean(rec.z, clean_reference, k);
            const double step = lr * lambda_a;
            for (std::size_t j = 0; j < rec.z.size(); ++j) {
                rec.z[j] += step * (mean[j] - rec.z[j]);
            }
        }
    }
}

}  // namespace splitguard::attacks
