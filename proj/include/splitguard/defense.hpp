#pragma once
// The full defense pipeline behind the round hook: detect → recover →
// periodic teacher/student refresh. Models persist across rounds; the first
// defended round trains them before any substitution is gated.

#include <optional>

#include "splitguard/config.hpp"
#include "splitguard/distill.hpp"
#include "splitguard/gan.hpp"
#include "splitguard/influence.hpp"
#include "splitguard/sfl.hpp"

namespace splitguard::defense {

// Defense-side feature standardization. Fitted on detected-clean records so
// poisoned magnitudes cannot dominate the teachers' and GANs' gradients; the
// transform clamps extremes, and generated candidates are mapped back through
// inverse() (their values stay inside the clean range, so no clamp applies).
struct FeatureScaler {
    std::vector<double> mean;
    std::vector<double> std;
    double clip = 6.0;

    static FeatureScaler fit(const std::vector<SmashedRecord>& records,
                             const std::vector<bool>& exclude);
    std::vector<double> transform(const std::vector<double>& z) const;
    std::vector<double> inverse(const std::vector<double>& z) const;
};

class Pipeline : public sfl::DefenseHook {
public:
    Pipeline(const ExperimentConfig& cfg, int n_clients, int n_classes);

    std::vector<SmashedRecord> repair(std::vector<SmashedRecord> pool, int round,
                                      Stats& stats) override;

    const std::optional<nn::MlpModel>& student() const { return student_; }
    const std::optional<nn::MlpModel>& ad_teacher() const { return ad_; }
    const std::optional<nn::MlpModel>& vanilla_teacher() const { return vanilla_; }
    const gan::GanState& gans() const { return gans_; }
    const topo::Detection& last_detection() const { return last_detection_; }
    const FeatureScaler& scaler() const { return scaler_; }

private:
    void refresh_models(const std::vector<SmashedRecord>& pool, const std::vector<bool>& mask,
                        const std::vector<double>& scores, int round);

    ExperimentConfig cfg_;
    int n_clients_ = 0;
    int n_classes_ = 0;
    int defense_rounds_ = 0;
    bool models_ready_ = false;
    std::optional<nn::MlpModel> ad_;
    std::optional<nn::MlpModel> vanilla_;
    std::optional<nn::MlpModel> student_;
    gan::GanState gans_;
    FeatureScaler scaler_;
    distill::MomentumState last_momentum_;
    topo::Detection last_detection_;
};

// Pass-through hook that only reports detection stats; used by the
// detection-only benchmark.
class DetectOnly : public sfl::DefenseHook {
public:
    explicit DetectOnly(const ExperimentConfig& cfg) : cfg_(cfg) {}
    std::vector<SmashedRecord> repair(std::vector<SmashedRecord> pool, int round,
                                      Stats& stats) override;
    const topo::Detection& last_detection() const { return last_detection_; }

private:
    ExperimentConfig cfg_;
    topo::Detection last_detection_;
};

topo::DetectConfig detect_config(const ExperimentConfig& cfg);

}  // namespace splitguard::defense
