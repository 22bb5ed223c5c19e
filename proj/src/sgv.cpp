#include "splitguard/sgv.hpp"

#include <cmath>

#include "splitguard/errors.hpp"
#include "splitguard/kernels.hpp"

namespace splitguard::sgv {

namespace {

std::vector<double> record_gradient(const nn::MlpModel& model, const SmashedRecord& rec) {
    Matrix z(1, rec.z.size());
    std::copy(rec.z.begin(), rec.z.end(), z.row(0));
    const nn::Trace trace = nn::forward(model, z);
    const nn::CrossEntropy ce = nn::cross_entropy(trace.output, {rec.label});
    const nn::GradientBundle grads = nn::backward(model, trace, ce.grad);
    return nn::flatten_trunk_grads(grads);
}

}  // namespace

SgvReport estimate_sgv(const nn::MlpModel& server_model, const std::vector<SmashedRecord>& records) {
    if (records.size() < 2) throw DomainError("estimate_sgv: need at least 2 records");

    SgvReport report;
    std::vector<std::vector<double>> grads;
    grads.reserve(records.size());
    std::vector<double> mean;
    for (const SmashedRecord& rec : records) {
        grads.push_back(record_gradient(server_model, rec));
        if (mean.empty()) mean.assign(grads.back().size(), 0.0);
        kernels::axpy(1.0, grads.back().data(), mean.data(), mean.size());
        (rec.poison_truth ? report.m_poisoned : report.m_clean) += 1;
    }
    kernels::scale(mean.data(), 1.0 / static_cast<double>(records.size()), mean.size());

    report.deviation_sq.reserve(records.size());
    double acc = 0.0;
    for (const auto& g : grads) {
        const double d = kernels::squared_distance(g.data(), mean.data(), mean.size());
        report.deviation_sq.push_back(d);
        acc += d;
    }
    report.sgv = acc / static_cast<double>(records.size());
    return report;
}

double theorem_factor(double alpha, double m_clean, double m_poisoned) {
    const double total = m_clean + m_poisoned;
    if (total <= 0.0) throw DomainError("theorem_factor: empty sample counts");
    const double frac = m_clean / total;
    return alpha * alpha * frac * frac;
}

TheoremVerdict check_theorem(const std::vector<SmashedRecord>& before,
                             const std::vector<SmashedRecord>& after, double alpha,
                             std::size_t m_clean, std::size_t m_poisoned,
                             const nn::MlpModel& server_model) {
    TheoremVerdict v;
    v.before = estimate_sgv(server_model, before);
    v.after = estimate_sgv(server_model, after);
    v.factor = theorem_factor(alpha, static_cast<double>(m_clean), static_cast<double>(m_poisoned));
    v.before.alpha = v.after.alpha = alpha;
    v.before.factor = v.after.factor = v.factor;
    v.ratio = v.before.sgv > 0.0 ? v.after.sgv / v.before.sgv : 0.0;
    v.holds = v.after.sgv <= v.before.sgv;
    v.before.bound_satisfied = v.after.bound_satisfied = v.holds;
    return v;
}

}  // namespace splitguard::sgv
