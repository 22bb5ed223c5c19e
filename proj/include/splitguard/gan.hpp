#pragma once
// Per-class vanilla GANs over smashed features, plus gated substitution of
// detected-poisoned records by validated synthetic candidates.

#include <map>
#include <vector>

#include "splitguard/linalg.hpp"
#include "splitguard/nn.hpp"
#include "splitguard/record.hpp"
#include "splitguard/rng.hpp"

namespace splitguard::gan {

struct GanConfig {
    int noise_dim = 16;
    int hidden = 64;
    double lr = 1e-3;
    int steps = 200;      // alternating D/G updates per class
    int min_class = 16;   // classes with fewer clean samples are untrainable
    int batch = 64;
};

struct ClassGan {
    nn::MlpModel generator;      // noise → z-space
    nn::MlpModel discriminator;  // z-space → 1, sigmoid
    bool trainable = false;
    std::size_t train_count = 0;
};

struct GanState {
    std::map<int, ClassGan> per_class;
    int noise_dim = 0;
    bool any_trainable() const {
        for (const auto& [label, g] : per_class) {
            if (g.trainable) return true;
        }
        return false;
    }
};

// One discriminator update on fixed real/fake batches; returns L_D before the
// step. L_D = −E[log D(z)] − E[log(1 − D(z̃))].
double discriminator_step(ClassGan& g, const Matrix& real, const Matrix& fake, double lr,
                          nn::GradientBundle& velocity);

// One generator update; returns L_G = −E[log D(G(noise))] before the step.
// Discriminator parameters are left untouched.
double generator_step(ClassGan& g, const Matrix& noise, double lr, nn::GradientBundle& velocity);

Matrix sample_noise(std::size_t count, int noise_dim, Rng& rng);
Matrix generate(const ClassGan& g, const Matrix& noise);

// Trains one GAN per class on the given clean records (current round only).
GanState train_gan(const std::vector<SmashedRecord>& clean_records, const GanConfig& cfg, Rng& rng);

// `count` samples from the class generator. Throws DomainError when the class
// is untrainable (recovery unavailable for it).
Matrix generate_candidates(const GanState& state, int label, std::size_t count, Rng& rng);

// Acceptance gate for one candidate: the student's poison head must call it
// clean with probability ≥ conf_threshold, and the debiasing teacher's
// category head must agree with the target class. Null models disable the
// corresponding check.
struct Validator {
    const nn::MlpModel* student = nullptr;
    const nn::MlpModel* ad_teacher = nullptr;
    double conf_threshold = 0.9;

    bool accept(const std::vector<double>& z, int target_class, double* confidence = nullptr) const;
};

struct SubstitutionReport {
    std::size_t replaced = 0;
    std::size_t dropped = 0;
    std::size_t kept = 0;
    std::size_t candidates_tried = 0;
    double mean_gate_confidence = 0.0;  // over accepted candidates
    enum Outcome { kOutcomeKept = 0, kOutcomeReplaced = 1, kOutcomeDropped = 2 };
    std::vector<int> outcomes;  // aligned with the input records
};

// For each masked record draws up to `budget` candidates of the record's
// class; the first accepted one replaces its features (label and client kept).
// Masked records with no accepted candidate, or an untrainable class, are
// dropped. Unmasked records pass through bit-identical.
std::vector<SmashedRecord> substitute(const std::vector<SmashedRecord>& records,
                                      const std::vector<bool>& mask, const GanState& state,
                                      const Validator& validator, int budget, Rng& rng,
                                      SubstitutionReport* report = nullptr);

}  // namespace splitguard::gan
