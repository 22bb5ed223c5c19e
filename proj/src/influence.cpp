#include "splitguard/influence.hpp"

#include <cmath>

#include "splitguard/errors.hpp"
#include "splitguard/kernels.hpp"

namespace splitguard::influence {

nn::MlpModel make_ad_teacher(std::size_t d_z, std::size_t hidden1, std::size_t hidden2,
                             int n_clients, int n_classes, Rng& rng) {
    nn::MlpModel m = nn::make_mlp({d_z, hidden1, hidden2},
                                  {nn::Activation::relu, nn::Activation::relu}, rng);
    nn::add_head(m, kPoisonHead, 2, rng);
    nn::add_head(m, kClientHead, static_cast<std::size_t>(n_clients), rng);
    nn::add_head(m, kCategoryHead, static_cast<std::size_t>(n_classes), rng);
    return m;
}

std::map<int, std::vector<double>> per_label_gradients(const nn::MlpModel& teacher, const Matrix& z,
                                                       const std::vector<int>& labels,
                                                       const std::string& head) {
    if (labels.size() != z.rows()) throw ShapeError("per_label_gradients: label count mismatch");
    if (!teacher.has_head(head)) throw ContractError("per_label_gradients: missing head " + head);

    std::map<int, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < labels.size(); ++i) groups[labels[i]].push_back(i);

    std::map<int, std::vector<double>> out;
    for (const auto& [label, rows] : groups) {
        Matrix sub(rows.size(), z.cols());
        std::vector<int> sub_labels(rows.size(), label);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            std::copy(z.row(rows[i]), z.row(rows[i]) + z.cols(), sub.row(i));
        }
        const nn::Trace trace = nn::forward(teacher, sub, head);
        const nn::CrossEntropy ce = nn::cross_entropy(trace.output, sub_labels);
        const nn::GradientBundle grads = nn::backward(teacher, trace, ce.grad);
        out[label] = nn::flatten_trunk_grads(grads);
    }
    return out;
}

namespace {

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    const double na = kernels::dot(a.data(), a.data(), a.size());
    const double nb = kernels::dot(b.data(), b.data(), b.size());
    if (na == 0.0 || nb == 0.0) return 0.0;
    return kernels::dot(a.data(), b.data(), a.size()) / std::sqrt(na * nb);
}

}  // namespace

Matrix gis_matrix(const std::map<int, std::vector<double>>& grads_x, int n_labels_x,
                  const std::map<int, std::vector<double>>& grads_y, int n_labels_y) {
    Matrix g(static_cast<std::size_t>(n_labels_x), static_cast<std::size_t>(n_labels_y));
    for (const auto& [lx, gx] : grads_x) {
        if (lx < 0 || lx >= n_labels_x) throw DomainError("gis_matrix: label x out of range");
        for (const auto& [ly, gy] : grads_y) {
            if (ly < 0 || ly >= n_labels_y) throw DomainError("gis_matrix: label y out of range");
            if (gx.size() != gy.size()) throw ShapeError("gis_matrix: gradient dims differ");
            g(static_cast<std::size_t>(lx), static_cast<std::size_t>(ly)) = cosine(gx, gy);
        }
    }
    return g;
}

Matrix influence_matrix(const std::vector<double>& tas_scores, const Matrix& gis,
                        const std::vector<int>& labels_x, int n_labels_x,
                        const std::vector<int>& labels_y, int n_labels_y, double beta, RMode mode,
                        bool* jittered) {
    const std::size_t k = tas_scores.size();
    if (labels_x.size() != k || labels_y.size() != k) {
        throw ShapeError("influence_matrix: label vectors must match score count");
    }
    if (beta <= 0.0 || beta >= 1.0) throw ConfigError("influence_matrix: beta outside (0,1)");
    if (gis.rows() != static_cast<std::size_t>(n_labels_x) ||
        gis.cols() != static_cast<std::size_t>(n_labels_y)) {
        throw ShapeError("influence_matrix: GIS shape mismatch");
    }

    // Q = RowNorm(R ⊙ (E·G·Fᵀ)); S_kj = G[x_k, y_j].
    double max_r = 0.0;
    for (double r : tas_scores) max_r = std::max(max_r, std::fabs(r));
    const double outer_norm = max_r > 0.0 ? 1.0 / (max_r * max_r) : 0.0;

    Matrix q(k, k);
    for (std::size_t i = 0; i < k; ++i) {
        const int xi = labels_x[i];
        if (xi < 0 || xi >= n_labels_x) throw DomainError("influence_matrix: label x out of range");
        double row_sum = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            const int yj = labels_y[j];
            if (yj < 0 || yj >= n_labels_y) throw DomainError("influence_matrix: label y out of range");
            const double r = mode == RMode::outer
                                 ? tas_scores[i] * tas_scores[j] * outer_norm
                                 : tas_scores[j];
            const double v = r * gis(static_cast<std::size_t>(xi), static_cast<std::size_t>(yj));
            q(i, j) = v;
            row_sum += v;
        }
        if (std::fabs(row_sum) < 1e-12) {
            for (std::size_t j = 0; j < k; ++j) q(i, j) = 0.0;  // zero rows stay zero
        } else {
            kernels::scale(q.row(i), 1.0 / row_sum, k);
        }
    }

    // A = I_K − β·Q ; X = A^(−1)·F ; M = (1−β)·Eᵀ·X.
    Matrix a(k, k);
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < k; ++j) a(i, j) = (i == j ? 1.0 : 0.0) - beta * q(i, j);
    }
    Matrix f(k, static_cast<std::size_t>(n_labels_y));
    for (std::size_t i = 0; i < k; ++i) f(i, static_cast<std::size_t>(labels_y[i])) = 1.0;
    const Matrix x = linalg::solve(a, f, 1e-10, jittered);

    Matrix m(static_cast<std::size_t>(n_labels_x), static_cast<std::size_t>(n_labels_y));
    for (std::size_t i = 0; i < k; ++i) {
        kernels::axpy(1.0 - beta, x.row(i), m.row(static_cast<std::size_t>(labels_x[i])), m.cols());
    }
    return m;
}

AdLoss ad_teacher_loss(const nn::MlpModel& teacher, const Matrix& z, const TaskLabels& labels,
                       const Matrix& m_ab, const Matrix& m_ac, double lambda_b, double lambda_c) {
    const std::size_t k = z.rows();
    if (labels.poison.size() != k || labels.client.size() != k || labels.category.size() != k) {
        throw ShapeError("ad_teacher_loss: label vectors must match batch");
    }

    const nn::Trace trace_a = nn::forward(teacher, z, kPoisonHead);
    const nn::Trace trace_b = nn::forward(teacher, z, kClientHead);
    const nn::Trace trace_c = nn::forward(teacher, z, kCategoryHead);

    nn::PerSampleCrossEntropy ce_a = nn::per_sample_cross_entropy(trace_a.output, labels.poison);
    nn::PerSampleCrossEntropy ce_b = nn::per_sample_cross_entropy(trace_b.output, labels.client);
    nn::PerSampleCrossEntropy ce_c = nn::per_sample_cross_entropy(trace_c.output, labels.category);

    AdLoss out;
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t a = static_cast<std::size_t>(labels.poison[i]);
        const std::size_t b = static_cast<std::size_t>(labels.client[i]);
        const std::size_t c = static_cast<std::size_t>(labels.category[i]);
        if (a >= m_ab.rows() || b >= m_ab.cols()) throw ContractError("ad_teacher_loss: index outside M_ab");
        if (a >= m_ac.rows() || c >= m_ac.cols()) throw ContractError("ad_teacher_loss: index outside M_ac");
        const double wb = lambda_b * m_ab(a, b);
        const double wc = lambda_c * m_ac(a, c);
        out.loss += ce_a.losses[i] + wb * ce_b.losses[i] + wc * ce_c.losses[i];
        kernels::scale(ce_b.grad.row(i), wb, ce_b.grad.cols());
        kernels::scale(ce_c.grad.row(i), wc, ce_c.grad.cols());
    }

    out.grads = nn::backward(teacher, trace_a, ce_a.grad);
    out.grads.add(nn::backward(teacher, trace_b, ce_b.grad));
    out.grads.add(nn::backward(teacher, trace_c, ce_c.grad));
    return out;
}

void train_ad_teacher(nn::MlpModel& teacher, const Matrix& z, const TaskLabels& labels,
                      const std::vector<double>& tas_scores, const AdTrainConfig& cfg) {
    if (z.rows() == 0) throw DomainError("train_ad_teacher: empty batch");
    const std::size_t k = z.rows();
    Matrix m_ab, m_ac;
    nn::GradientBundle velocity;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (epoch % cfg.influence_refresh == 0) {
            const auto grads_a = per_label_gradients(teacher, z, labels.poison, kPoisonHead);
            const auto grads_b = per_label_gradients(teacher, z, labels.client, kClientHead);
            const auto grads_c = per_label_gradients(teacher, z, labels.category, kCategoryHead);
            const Matrix g_ab = gis_matrix(grads_a, 2, grads_b, labels.n_client_labels);
            const Matrix g_ac = gis_matrix(grads_a, 2, grads_c, labels.n_category_labels);
            m_ab = influence_matrix(tas_scores, g_ab, labels.poison, 2, labels.client,
                                    labels.n_client_labels, cfg.beta, cfg.r_mode);
            m_ac = influence_matrix(tas_scores, g_ac, labels.poison, 2, labels.category,
                                    labels.n_category_labels, cfg.beta, cfg.r_mode);
        }
        AdLoss al = ad_teacher_loss(teacher, z, labels, m_ab, m_ac, cfg.lambda_b, cfg.lambda_c);
        al.grads.scale(1.0 / static_cast<double>(k));
        if (cfg.clip_norm > 0.0) nn::clip_grad_norm(al.grads, cfg.clip_norm);
        nn::sgd_step(teacher, al.grads, cfg.lr, 0.0, velocity);
    }
}

}  // namespace splitguard::influence
