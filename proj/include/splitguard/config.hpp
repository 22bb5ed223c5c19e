#pragma once
// Experiment configuration: a flat `key = value` text document with typed
// values. Unknown keys are hard errors; every run echoes the fully resolved
// config into its output header.

#include <cstdint>
#include <string>

namespace splitguard {

struct ExperimentConfig {
    // system
    std::uint64_t seed = 1;
    int clients = 10;
    double malicious_ratio = 0.20;
    int rounds = 100;
    int batch_size = 64;
    int local_epochs = 1;
    double participation = 1.0;
    double lr = 1e-4;
    double momentum = 0.0;
    std::string aggregator = "fedavg";  // fedavg | median | trimmed_mean | krum
    int krum_trim_param = 10;
    bool server_replicas = false;

    // dataset
    std::string dataset = "synthetic";  // synthetic | idx
    int classes = 4;
    int features = 8;
    int per_class = 200;
    double spread = 0.15;
    double noniid_q = 0.0;
    double test_fraction = 0.25;
    std::string idx_images;
    std::string idx_labels;
    bool idx_downsample = true;

    // model
    int bottleneck = 3;  // split-boundary width d_z
    int client_hidden = 16;
    int server_hidden = 16;

    // attack
    std::string attack = "dp+sp";  // '+'-joined subset of {lp,dp,sp,wp}, or "none"
    int delta_y = 1;
    double delta_x = 4.0;
    double delta_z = 12.0;
    double delta_theta = 1.0;
    std::string wp_mode = "signflip";  // signflip | gaussian
    bool adaptive = false;
    double lambda_a = 0.5;
    int adaptive_k = 5;
    bool attack_iterative = false;
    int attack_epochs = 100;
    double attack_lr = 0.01;

    // detection
    bool defense = false;
    int defense_warmup = 2;
    int detect_k = 10;
    double ppr_alpha = 0.85;
    double ppr_eps = 1e-9;
    double ppr_tol = 1e-10;
    int ppr_max_iter = 1000;
    std::string teleport = "degree";  // degree | uniform | inverse_degree
    double kde_rho = 25.0;
    bool detect_per_class = false;
    bool dump_scores = false;

    // recovery
    int gan_steps = 300;
    double gan_lr = 0.02;
    int gan_noise_dim = 16;
    int gan_hidden = 64;
    int gan_min_class = 16;
    int gan_batch = 64;
    int gan_every = 1;
    int candidate_budget = 8;
    double gate_conf = 0.9;

    // teachers & distillation
    int refresh_every = 5;
    int ad_epochs = 200;
    double ad_lr = 0.01;
    double lambda_b = 1.0;
    double lambda_c = 1.0;
    double beta = 0.15;
    int influence_refresh = 1;  // epochs between influence-matrix recomputes
    std::string r_mode = "outer";  // outer | broadcast
    int vanilla_epochs = 200;
    int student_epochs = 200;
    double teacher_lr = 0.1;
    double reservoir_ratio = 0.25;
    double tau = 4.0;
    double distill_m = 0.9;
    double kappa = 5.0;
    double distill_eps = 1e-8;
    double mu0 = 0.5;
    double eta0 = 0.5;
    double student_lambda_b = 0.5;

    // ablations
    bool ablate_vanilla = false;
    bool ablate_ad = false;
    bool ablate_distill = false;

    // metrics
    int sgv_every = 1;
    std::string out_dir;
    std::string run_name = "run";
};

ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);
std::string serialize_config(const ExperimentConfig& cfg);  // canonical form
void apply_override(ExperimentConfig& cfg, const std::string& key, const std::string& value);
void validate_config(const ExperimentConfig& cfg);

struct AttackMask {
    bool lp = false, dp = false, sp = false, wp = false;
    bool any() const { return lp || dp || sp || wp; }
};

AttackMask parse_attack_mask(const std::string& s);
std::string attack_mask_name(const AttackMask& m);

}  // namespace splitguard
