#include "splitguard/gan.hpp"

#include <algorithm>
#include <cmath>

#include "splitguard/errors.hpp"
#include "splitguard/kernels.hpp"

namespace splitguard::gan {

namespace {

constexpr double kProbClamp = 1e-7;

double clamp_prob(double p) { return std::min(std::max(p, kProbClamp), 1.0 - kProbClamp); }

}  // namespace

double discriminator_step(ClassGan& g, const Matrix& real, const Matrix& fake, double lr,
                          nn::GradientBundle& velocity) {
    const nn::Trace tr = nn::forward(g.discriminator, real);
    const nn::Trace tf = nn::forward(g.discriminator, fake);
    const double inv_r = 1.0 / static_cast<double>(real.rows());
    const double inv_f = 1.0 / static_cast<double>(fake.rows());

    double loss = 0.0;
    Matrix grad_r(tr.output.rows(), 1);
    for (std::size_t i = 0; i < real.rows(); ++i) {
        const double p = clamp_prob(tr.output(i, 0));
        loss -= inv_r * std::log(p);
        grad_r(i, 0) = -inv_r / p;
    }
    Matrix grad_f(tf.output.rows(), 1);
    for (std::size_t i = 0; i < fake.rows(); ++i) {
        const double p = clamp_prob(tf.output(i, 0));
        loss -= inv_f * std::log(1.0 - p);
        grad_f(i, 0) = inv_f / (1.0 - p);
    }

    nn::GradientBundle grads = nn::backward(g.discriminator, tr, grad_r);
    grads.add(nn::backward(g.discriminator, tf, grad_f));
    nn::sgd_step(g.discriminator, grads, lr, 0.0, velocity);
    return loss;
}

double generator_step(ClassGan& g, const Matrix& noise, double lr, nn::GradientBundle& velocity) {
    const nn::Trace tg = nn::forward(g.generator, noise);
    const nn::Trace td = nn::forward(g.discriminator, tg.output);
    const double inv_n = 1.0 / static_cast<double>(noise.rows());

    double loss = 0.0;
    Matrix grad_d(td.output.rows(), 1);
    for (std::size_t i = 0; i < noise.rows(); ++i) {
        const double p = clamp_prob(td.output(i, 0));
        loss -= inv_n * std::log(p);
        grad_d(i, 0) = -inv_n / p;
    }

    // Through the frozen discriminator down to its inputs, then into G.
    const nn::GradientBundle d_grads = nn::backward(g.discriminator, td, grad_d);
    nn::GradientBundle g_grads = nn::backward(g.generator, tg, d_grads.input);
    nn::sgd_step(g.generator, g_grads, lr, 0.0, velocity);
    return loss;
}

Matrix sample_noise(std::size_t count, int noise_dim, Rng& rng) {
    Matrix noise(count, static_cast<std::size_t>(noise_dim));
    for (double& v : noise.values()) v = rng.normal();
    return noise;
}

Matrix generate(const ClassGan& g, const Matrix& noise) {
    return nn::forward(g.generator, noise).output;
}

GanState train_gan(const std::vector<SmashedRecord>& clean_records, const GanConfig& cfg, Rng& rng) {
    if (cfg.min_class < 2) throw ConfigError("train_gan: min_class must be >= 2");
    GanState state;
    state.noise_dim = cfg.noise_dim;
    if (clean_records.empty()) return state;  // caller decides how to proceed
    const std::size_t d_z = clean_records.front().z.size();

    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < clean_records.size(); ++i) {
        by_class[clean_records[i].label].push_back(i);
    }

    for (const auto& [label, rows] : by_class) {
        ClassGan g;
        g.train_count = rows.size();
        if (rows.size() < static_cast<std::size_t>(cfg.min_class)) {
            state.per_class[label] = std::move(g);  // untrainable
            continue;
        }
        Rng class_rng = Rng::stream(rng.next_u64(), {0x6a9, static_cast<std::uint64_t>(label)});
        g.generator = nn::make_mlp({static_cast<std::size_t>(cfg.noise_dim),
                                    static_cast<std::size_t>(cfg.hidden), d_z},
                                   {nn::Activation::relu, nn::Activation::identity}, class_rng);
        g.discriminator = nn::make_mlp({d_z, static_cast<std::size_t>(cfg.hidden), 1},
                                       {nn::Activation::relu, nn::Activation::sigmoid}, class_rng);

        const std::size_t batch = std::min<std::size_t>(rows.size(), static_cast<std::size_t>(cfg.batch));
        nn::GradientBundle d_vel, g_vel;
        for (int step = 0; step < cfg.steps; ++step) {
            Matrix real(batch, d_z);
            for (std::size_t i = 0; i < batch; ++i) {
                const std::size_t pick = rows[class_rng.below(rows.size())];
                std::copy(clean_records[pick].z.begin(), clean_records[pick].z.end(), real.row(i));
            }
            const Matrix fake = generate(g, sample_noise(batch, cfg.noise_dim, class_rng));
            discriminator_step(g, real, fake, cfg.lr, d_vel);
            generator_step(g, sample_noise(batch, cfg.noise_dim, class_rng), cfg.lr, g_vel);
        }
        g.trainable = true;
        state.per_class[label] = std::move(g);
    }
    return state;
}

Matrix generate_candidates(const GanState& state, int label, std::size_t count, Rng& rng) {
    auto it = state.per_class.find(label);
    if (it == state.per_class.end() || !it->second.trainable) {
        throw DomainError("generate_candidates: class " + std::to_string(label) + " untrainable");
    }
    if (count == 0) return Matrix(0, it->second.generator.output_dim());
    return generate(it->second, sample_noise(count, state.noise_dim, rng));
}

bool Validator::accept(const std::vector<double>& z, int target_class, double* confidence) const {
    Matrix row(1, z.size());
    std::copy(z.begin(), z.end(), row.row(0));
    double conf = 1.0;
    if (student) {
        const Matrix logits = nn::forward(*student, row, std::string("poison")).output;
        conf = nn::softmax(logits)(0, 0);  // label 0 = clean
        if (confidence) *confidence = conf;
        if (conf < conf_threshold) return false;
    } else if (confidence) {
        *confidence = conf;
    }
    if (ad_teacher) {
        const Matrix logits = nn::forward(*ad_teacher, row, std::string("category")).output;
        std::size_t argmax = 0;
        for (std::size_t c = 1; c < logits.cols(); ++c) {
            if (logits(0, c) > logits(0, argmax)) argmax = c;
        }
        if (argmax != static_cast<std::size_t>(target_class)) return false;
    }
    return true;
}

std::vector<SmashedRecord> substitute(const std::vector<SmashedRecord>& records,
                                      const std::vector<bool>& mask, const GanState& state,
                                      const Validator& validator, int budget, Rng& rng,
                                      SubstitutionReport* report) {
    if (mask.size() != records.size()) throw ShapeError("substitute: mask not aligned to records");
    if (budget < 1) throw ConfigError("substitute: budget must be >= 1");

    SubstitutionReport local;
    local.outcomes.assign(records.size(), SubstitutionReport::kOutcomeKept);
    std::vector<SmashedRecord> out;
    out.reserve(records.size());
    double conf_sum = 0.0;

    for (std::size_t i = 0; i < records.size(); ++i) {
        if (!mask[i]) {
            ++local.kept;
            out.push_back(records[i]);
            continue;
        }
        const int label = records[i].label;
        auto it = state.per_class.find(label);
        const bool trainable = it != state.per_class.end() && it->second.trainable;
        bool replaced = false;
        if (trainable) {
            for (int attempt = 0; attempt < budget && !replaced; ++attempt) {
                const Matrix cand = generate(it->second, sample_noise(1, state.noise_dim, rng));
                std::vector<double> z(cand.row(0), cand.row(0) + cand.cols());
                ++local.candidates_tried;
                double conf = 1.0;
                if (validator.accept(z, label, &conf)) {
                    SmashedRecord rep = records[i];
                    rep.z = std::move(z);
                    rep.poison_truth = false;  // features are synthetic now
                    out.push_back(std::move(rep));
                    conf_sum += conf;
                    replaced = true;
                }
            }
        }
        if (replaced) {
            ++local.replaced;
            local.outcomes[i] = SubstitutionReport::kOutcomeReplaced;
        } else {
            ++local.dropped;  // keeping a known-poisoned record defeats the defense
            local.outcomes[i] = SubstitutionReport::kOutcomeDropped;
        }
    }
    if (local.replaced > 0) local.mean_gate_confidence = conf_sum / static_cast<double>(local.replaced);
    if (report) *report = std::move(local);
    return out;
}

}  // namespace splitguard::gan
