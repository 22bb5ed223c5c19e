#pragma once
// Gradient-interaction scores between task labels, the inter-task influence
// matrix built from anomaly scores and those interactions, and the multi-head
// debiasing teacher trained with the influence-gated loss.
//
// Tasks: "poison" (2 labels, from the detection mask), "client" (one label
// per client) and "category" (the class label). All three heads share a
// trunk; label interactions are measured on the trunk gradients only.

#include <map>
#include <string>
#include <vector>

#include "splitguard/linalg.hpp"
#include "splitguard/nn.hpp"
#include "splitguard/rng.hpp"

namespace splitguard::influence {

inline constexpr const char* kPoisonHead = "poison";
inline constexpr const char* kClientHead = "client";
inline constexpr const char* kCategoryHead = "category";

struct TaskLabels {
    std::vector<int> poison;    // 0 = clean, 1 = poisoned (detector output)
    std::vector<int> client;    // client id
    std::vector<int> category;  // class label
    int n_client_labels = 0;
    int n_category_labels = 0;
};

nn::MlpModel make_ad_teacher(std::size_t d_z, std::size_t hidden1, std::size_t hidden2,
                             int n_clients, int n_classes, Rng& rng);

// For each label value present in the batch: gradient of that label's
// mean-reduced cross-entropy w.r.t. the shared trunk parameters, flattened.
// Absent labels are omitted (zero-filled later by gis_matrix).
std::map<int, std::vector<double>> per_label_gradients(const nn::MlpModel& teacher, const Matrix& z,
                                                       const std::vector<int>& labels,
                                                       const std::string& head);

// G[i][j] = cosine(grad_x(i), grad_y(j)); missing labels and zero vectors
// yield 0 entries.
Matrix gis_matrix(const std::map<int, std::vector<double>>& grads_x, int n_labels_x,
                  const std::map<int, std::vector<double>>& grads_y, int n_labels_y);

enum class RMode { outer, broadcast };

// M_p = (1−β)·Eᵀ·(I_K − β·RowNorm(R ⊙ (E·G_p·Fᵀ)))^(−1)·F with E/F the
// node-to-label incidences of labels_x/labels_y and R lifted from the anomaly
// scores (outer: r·rᵀ max-normalized; broadcast: R_kj = r_j).
Matrix influence_matrix(const std::vector<double>& tas_scores, const Matrix& gis,
                        const std::vector<int>& labels_x, int n_labels_x,
                        const std::vector<int>& labels_y, int n_labels_y, double beta,
                        RMode mode = RMode::outer, bool* jittered = nullptr);

struct AdLoss {
    double loss = 0.0;
    nn::GradientBundle grads;
};

// L = Σ_k [ L_poison + λ_b·M_ab[a_k,b_k]·L_client + λ_c·M_ac[a_k,c_k]·L_category ]
// with per-sample cross-entropies; M entries are treated as constants.
AdLoss ad_teacher_loss(const nn::MlpModel& teacher, const Matrix& z, const TaskLabels& labels,
                       const Matrix& m_ab, const Matrix& m_ac, double lambda_b, double lambda_c);

struct AdTrainConfig {
    int epochs = 30;
    double lr = 0.005;
    double lambda_b = 1.0;
    double lambda_c = 1.0;
    double beta = 0.15;
    int influence_refresh = 1;  // epochs between influence-matrix recomputes
    RMode r_mode = RMode::outer;
    double clip_norm = 5.0;  // gradient-norm clip; the gating weights are count-scale
};

// Alternates influence-matrix refreshes with full-batch gradient steps. The
// step uses the loss gradient scaled by 1/K (mean form) so learning rates are
// batch-size independent.
void train_ad_teacher(nn::MlpModel& teacher, const Matrix& z, const TaskLabels& labels,
                      const std::vector<double>& tas_scores, const AdTrainConfig& cfg);

}  // namespace splitguard::influence
