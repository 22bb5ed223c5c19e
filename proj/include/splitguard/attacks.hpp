#pragma once
// The five threat-model attacks plus the adaptive detection-evasion attack.
// All functions are pure given their RNG stream; attacks touch only the
// artifacts they are handed, so the orchestrator controls which clients are
// affected.

#include <vector>

#include "splitguard/config.hpp"
#include "splitguard/linalg.hpp"
#include "splitguard/nn.hpp"
#include "splitguard/record.hpp"
#include "splitguard/rng.hpp"

namespace splitguard::attacks {

struct AttackSpec {
    AttackMask mask;
    int delta_y = 1;           // label shift
    double delta_x = 0.0;      // input-noise scale (× per-feature data std)
    double delta_z = 0.0;      // smashed-noise scale (× per-feature z std)
    double delta_theta = 0.0;  // weight-perturbation scale
    bool wp_gaussian = false;  // default is scaled sign-flip
    bool adaptive = false;
    double lambda_a = 0.0;  // mimicry strength
    int adaptive_k = 5;
    bool iterative = false;  // iterative mimicry consuming epochs/lr below
    int attack_epochs = 100;
    double attack_lr = 0.01;
};

AttackSpec spec_from_config(const ExperimentConfig& cfg);

// LP: y ← (y + delta_y) mod C.
void poison_labels(std::vector<int>& labels, int delta_y, int num_classes);

// DP: x ← x + N(0, (scale·std_f)²) per feature.
void poison_inputs(Matrix& inputs, double scale, const std::vector<double>& feature_std, Rng& rng);

// SP: z ← z + N(0, (scale·std_f)²) per feature; marks poison_truth even at
// scale 0 (an attempted attack stays an attack for the bookkeeping).
void poison_smashed(std::vector<SmashedRecord>& records, double scale,
                    const std::vector<double>& feature_std, Rng& rng);

// WP: θ ← θ + Δθ. Sign-flip mode uses Δθ = −c·θ; gaussian mode draws a random
// direction scaled to norm c·‖θ‖.
void poison_weights(nn::MlpModel& model, double scale, bool gaussian, Rng& rng);

// Composite application at the correct pipeline stages, order LP→DP→SP→WP.
// Null artifacts are skipped; stats vectors may be empty when the matching
// attack flag is off.
void apply_multi(const AttackSpec& spec, int num_classes, std::vector<int>* labels, Matrix* inputs,
                 const std::vector<double>& input_std, std::vector<SmashedRecord>* records,
                 const std::vector<double>& smashed_std, nn::MlpModel* model, Rng& rng);

// Moves each poisoned record toward the mean of its k nearest clean-reference
// vectors: z ← (1−λ)z + λ·mean(neighbors).
void adaptive_tas_evasion(std::vector<SmashedRecord>& records,
                          const std::vector<std::vector<double>>& clean_reference, double lambda_a,
                          int k);

// Iterative variant: attack_epochs steps of z ← z + lr·λ·(mean(neighbors)−z),
// re-finding neighbors every step.
void adaptive_tas_evasion_iterative(std::vector<SmashedRecord>& records,
                                    const std::vector<std::vector<double>>& clean_reference,
                                    double lambda_a, int k, int epochs, double lr);

}  // namespace splitguard::attacks
