#pragma once
// Empirical inter-server gradient variance and the substitution bound check.

#include <cstddef>
#include <vector>

#include "splitguard/nn.hpp"
#include "splitguard/record.hpp"

namespace splitguard::sgv {

struct SgvReport {
    double sgv = 0.0;                      // mean ‖∇f(θ;z,y) − ∇F‖² over records
    std::vector<double> deviation_sq;      // per-record squared deviations
    std::size_t m_clean = 0;               // M
    std::size_t m_poisoned = 0;            // M̂ (by poison_truth, evaluation only)
    double alpha = 0.0;                    // malicious client fraction
    double factor = 0.0;                   // α²M²/(M̂+M)²
    bool bound_satisfied = false;
};

// Per-record server-side gradients of the cross-entropy loss; the report's
// counts are filled from poison_truth.
SgvReport estimate_sgv(const nn::MlpModel& server_model, const std::vector<SmashedRecord>& records);

double theorem_factor(double alpha, double m_clean, double m_poisoned);

struct TheoremVerdict {
    SgvReport before;
    SgvReport after;
    double factor = 0.0;
    double ratio = 0.0;  // SGV_after / SGV_before (0 when before is 0)
    bool holds = false;  // SGV_after <= SGV_before
};

// `after` is expected to be the substitution output for `before`.
TheoremVerdict check_theorem(const std::vector<SmashedRecord>& before,
                             const std::vector<SmashedRecord>& after, double alpha,
                             std::size_t m_clean, std::size_t m_poisoned,
                             const nn::MlpModel& server_model);

}  // namespace splitguard::sgv
