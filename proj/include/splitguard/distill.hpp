#pragma once
// Vanilla teacher and the consistency-validation student, trained with
// two-teacher distillation under momentum-adaptive loss weights.
//
// Both teachers expose a "poison" head; the student adds a "client" head.
// Distillation compares poison-head logits (the task both teachers share).

#include <vector>

#include "splitguard/linalg.hpp"
#include "splitguard/nn.hpp"
#include "splitguard/rng.hpp"

namespace splitguard::distill {

struct DistillConfig {
    double tau = 4.0;
    double momentum = 0.9;  // m
    double kappa = 5.0;
    double eps = 1e-8;
    double mu0 = 0.5;
    double eta0 = 0.5;
    double lambda_b = 0.5;  // student client-head weight
};

struct MomentumState {
    double mu = 0.5;
    double eta = 0.5;
    std::vector<std::pair<double, double>> loss_history;  // (L_VS, L_IS) per iteration
    std::vector<std::pair<double, double>> weight_history;  // (mu_t, eta_t)
};

struct KlResult {
    double loss = 0.0;  // τ²·KL summed over the batch
    Matrix grad;        // d(loss)/d(student logits) = τ·(softmax(s/τ) − softmax(t/τ))
};

// τ²·KL(softmax(teacher/τ) ‖ softmax(student/τ)); gradient flows to the
// student only.
KlResult kl_distill(const Matrix& teacher_logits, const Matrix& student_logits, double tau);

// μ_t = m·μ_{t−1} + (1−m)·σ(κ·(L_VS−L_IS)/(L_VS+L_IS+ε)); η_t symmetric.
void momentum_update(MomentumState& state, double l_vs, double l_is, const DistillConfig& cfg);

nn::MlpModel make_teacher(std::size_t d_z, std::size_t hidden, Rng& rng);
nn::MlpModel make_student(std::size_t d_z, std::size_t hidden, int n_clients, Rng& rng);

// Minimizes Σ_k L_poison on the given records (mean-scaled steps).
void train_vanilla_teacher(nn::MlpModel& teacher, const Matrix& z,
                           const std::vector<int>& poison_labels, int epochs, double lr);

struct StudentLoss {
    double total = 0.0;
    double supervised = 0.0;  // Σ_k (L_a + λ_b·L_b)
    double l_vs = 0.0;
    double l_is = 0.0;
    nn::GradientBundle grads;
};

// L = Σ_k (L_a + λ_b·L_b) + μ·L_VS + η·L_IS; teacher weights are constants.
StudentLoss student_loss(const nn::MlpModel& student, const Matrix& z,
                         const std::vector<int>& poison_labels,
                         const std::vector<int>& client_labels, const nn::MlpModel* vanilla,
                         const nn::MlpModel* ad_teacher, double mu, double eta,
                         const DistillConfig& cfg);

struct StudentTrainConfig {
    int epochs = 30;
    double lr = 0.01;
    DistillConfig distill;
    bool use_vanilla = true;  // forced off by ablations
    bool use_ad = true;
};

// Per iteration: evaluate the two distillation losses, update (μ, η), then
// take one mean-scaled gradient step on the total loss.
MomentumState train_student(nn::MlpModel& student, const Matrix& z,
                            const std::vector<int>& poison_labels,
                            const std::vector<int>& client_labels, const nn::MlpModel* vanilla,
                            const nn::MlpModel* ad_teacher, const StudentTrainConfig& cfg);

}  // namespace splitguard::distill
