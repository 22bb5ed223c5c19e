#include "splitguard/distill.hpp"

#include <cmath>

#include "splitguard/errors.hpp"
#include "splitguard/kernels.hpp"

namespace splitguard::distill {

namespace {
constexpr const char* kPoisonHead = "poison";
constexpr const char* kClientHead = "client";

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
}  // namespace

KlResult kl_distill(const Matrix& teacher_logits, const Matrix& student_logits, double tau) {
    if (!teacher_logits.same_shape(student_logits)) throw ShapeError("kl_distill: logit shapes differ");
    if (tau <= 0.0) throw DomainError("kl_distill: tau must be positive");

    Matrix t_scaled = teacher_logits;
    Matrix s_scaled = student_logits;
    kernels::scale(t_scaled.data(), 1.0 / tau, t_scaled.size());
    kernels::scale(s_scaled.data(), 1.0 / tau, s_scaled.size());
    const Matrix p = nn::softmax(t_scaled);
    const Matrix q = nn::softmax(s_scaled);

    KlResult out;
    out.grad = Matrix(p.rows(), p.cols());
    const double tau2 = tau * tau;
    for (std::size_t r = 0; r < p.rows(); ++r) {
        for (std::size_t c = 0; c < p.cols(); ++c) {
            const double pi = p(r, c);
            const double qi = q(r, c);
            if (pi > 0.0) out.loss += tau2 * pi * (std::log(pi) - std::log(std::max(qi, 1e-300)));
            out.grad(r, c) = tau * (qi - pi);
        }
    }
    return out;
}

void momentum_update(MomentumState& state, double l_vs, double l_is, const DistillConfig& cfg) {
    if (!(l_vs >= 0.0) || !(l_is >= 0.0) || !std::isfinite(l_vs) || !std::isfinite(l_is)) {
        throw DomainError("momentum_update: losses must be finite and non-negative");
    }
    const double denom = l_vs + l_is + cfg.eps;
    const double ratio = denom != 0.0 ? (l_vs - l_is) / denom : 0.0;
    state.mu = cfg.momentum * state.mu + (1.0 - cfg.momentum) * sigmoid(cfg.kappa * ratio);
    state.eta = cfg.momentum * state.eta + (1.0 - cfg.momentum) * sigmoid(-cfg.kappa * ratio);
    state.loss_history.emplace_back(l_vs, l_is);
    state.weight_history.emplace_back(state.mu, state.eta);
}

nn::MlpModel make_teacher(std::size_t d_z, std::size_t hidden, Rng& rng) {
    nn::MlpModel m = nn::make_mlp({d_z, hidden}, {nn::Activation::relu}, rng);
    nn::add_head(m, kPoisonHead, 2, rng);
    return m;
}

nn::MlpModel make_student(std::size_t d_z, std::size_t hidden, int n_clients, Rng& rng) {
    nn::MlpModel m = nn::make_mlp({d_z, hidden}, {nn::Activation::relu}, rng);
    nn::add_head(m, kPoisonHead, 2, rng);
    nn::add_head(m, kClientHead, static_cast<std::size_t>(n_clients), rng);
    return m;
}

void train_vanilla_teacher(nn::MlpModel& teacher, const Matrix& z,
                           const std::vector<int>& poison_labels, int epochs, double lr) {
    if (z.rows() == 0) throw ConfigError("train_vanilla_teacher: empty record set");
    nn::GradientBundle velocity;
    for (int e = 0; e < epochs; ++e) {
        const nn::Trace trace = nn::forward(teacher, z, kPoisonHead);
        const nn::CrossEntropy ce = nn::cross_entropy(trace.output, poison_labels);
        nn::GradientBundle grads = nn::backward(teacher, trace, ce.grad);
        nn::sgd_step(teacher, grads, lr, 0.0, velocity);
    }
}

StudentLoss student_loss(const nn::MlpModel& student, const Matrix& z,
                         const std::vector<int>& poison_labels,
                         const std::vector<int>& client_labels, const nn::MlpModel* vanilla,
                         const nn::MlpModel* ad_teacher, double mu, double eta,
                         const DistillConfig& cfg) {
    const std::size_t k = z.rows();
    if (poison_labels.size() != k || client_labels.size() != k) {
        throw ShapeError("student_loss: label vectors must match batch");
    }

    const nn::Trace trace_a = nn::forward(student, z, kPoisonHead);
    const nn::Trace trace_b = nn::forward(student, z, kClientHead);
    nn::PerSampleCrossEntropy ce_a = nn::per_sample_cross_entropy(trace_a.output, poison_labels);
    nn::PerSampleCrossEntropy ce_b = nn::per_sample_cross_entropy(trace_b.output, client_labels);

    StudentLoss out;
    out.supervised = kernels::sum(ce_a.losses.data(), k) +
                     cfg.lambda_b * kernels::sum(ce_b.losses.data(), k);

    Matrix grad_a = ce_a.grad;  // already softmax − onehot per sample
    if (vanilla) {
        const Matrix t = nn::forward(*vanilla, z, kPoisonHead).output;
        KlResult kl = kl_distill(t, trace_a.output, cfg.tau);
        out.l_vs = kl.loss;
        if (mu != 0.0) {
            kernels::axpy(mu, kl.grad.data(), grad_a.data(), grad_a.size());
        }
    }
    if (ad_teacher) {
        const Matrix t = nn::forward(*ad_teacher, z, kPoisonHead).output;
        KlResult kl = kl_distill(t, trace_a.output, cfg.tau);
        out.l_is = kl.loss;
        if (eta != 0.0) {
            kernels::axpy(eta, kl.grad.data(), grad_a.data(), grad_a.size());
        }
    }
    out.total = out.supervised + mu * out.l_vs + eta * out.l_is;

    Matrix grad_b = ce_b.grad;
    kernels::scale(grad_b.data(), cfg.lambda_b, grad_b.size());
    out.grads = nn::backward(student, trace_a, grad_a);
    out.grads.add(nn::backward(student, trace_b, grad_b));
    return out;
}

MomentumState train_student(nn::MlpModel& student, const Matrix& z,
                            const std::vector<int>& poison_labels,
                            const std::vector<int>& client_labels, const nn::MlpModel* vanilla,
                            const nn::MlpModel* ad_teacher, const StudentTrainConfig& cfg) {
    if (z.rows() == 0) throw DomainError("train_student: empty batch");
    MomentumState state;
    state.mu = cfg.distill.mu0;
    state.eta = cfg.distill.eta0;
    const nn::MlpModel* van = cfg.use_vanilla ? vanilla : nullptr;
    const nn::MlpModel* ad = cfg.use_ad ? ad_teacher : nullptr;
    nn::GradientBundle velocity;
    const double inv_k = 1.0 / static_cast<double>(z.rows());
    for (int e = 0; e < cfg.epochs; ++e) {
        // Current distillation losses drive the weight update for this step.
        StudentLoss probe = student_loss(student, z, poison_labels, client_labels, van, ad,
                                         state.mu, state.eta, cfg.distill);
        momentum_update(state, probe.l_vs, probe.l_is, cfg.distill);
        StudentLoss sl = student_loss(student, z, poison_labels, client_labels, van, ad, state.mu,
                                      state.eta, cfg.distill);
        sl.grads.scale(inv_k);
        nn::sgd_step(student, sl.grads, cfg.lr, 0.0, velocity);
    }
    return state;
}

}  // namespace splitguard::distill
