#include "splitguard/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "splitguard/defense.hpp"
#include "splitguard/errors.hpp"
#include "splitguard/gan.hpp"

namespace splitguard::experiment {

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string output_dir(const ExperimentConfig& cfg) {
    if (!cfg.out_dir.empty()) return cfg.out_dir;
    if (const char* env = std::getenv("SPLITGUARD_OUT")) return env;
    return ".";
}

}  // namespace

std::string metrics_csv(const ExperimentConfig& cfg, const std::vector<sfl::RoundReport>& rounds) {
    std::ostringstream os;
    os << "# splitguard-metrics v1\n";
    std::istringstream cfg_lines(serialize_config(cfg));
    std::string line;
    while (std::getline(cfg_lines, line)) os << "# " << line << "\n";
    os << "round,defense,attack,adaptive,train_loss,accuracy,det_precision,det_recall,det_f1,"
          "flagged,replaced,dropped,mu,eta,sgv\n";
    for (const sfl::RoundReport& r : rounds) {
        os << r.round << ',' << (r.defense_ran ? 1 : 0) << ',' << attack_mask_name(r.attack) << ','
           << (r.adaptive ? 1 : 0) << ',' << fmt(r.train_loss) << ',' << fmt(r.accuracy) << ','
           << fmt(r.detection.precision) << ',' << fmt(r.detection.recall) << ','
           << fmt(r.detection.f1) << ',' << r.flagged << ',' << r.replaced << ',' << r.dropped
           << ',' << fmt(r.mu) << ',' << fmt(r.eta) << ',' << fmt(r.sgv) << "\n";
    }
    return os.str();
}

RunResult run_experiment(const ExperimentConfig& cfg, bool persist) {
    validate_config(cfg);
    const auto t0 = std::chrono::steady_clock::now();

    sfl::SystemState state = sfl::init_system(cfg);
    defense::Pipeline pipeline(cfg, cfg.clients, state.dataset.num_classes);

    RunResult result;
    for (int round = 0; round < cfg.rounds; ++round) {
        const bool defended = cfg.defense && round >= cfg.defense_warmup;
        sfl::RoundReport report = sfl::run_round(state, cfg, defended ? &pipeline : nullptr);
        result.best_accuracy = std::max(result.best_accuracy, report.accuracy);
        result.rounds.push_back(std::move(report));
    }
    result.final_accuracy = result.rounds.empty() ? 0.0 : result.rounds.back().accuracy;
    result.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    if (persist) {
        const std::string dir = output_dir(cfg);
        result.csv_path = dir + "/" + cfg.run_name + "_metrics.csv";
        result.json_path = dir + "/" + cfg.run_name + "_summary.json";
        std::ofstream csv(result.csv_path, std::ios::binary);
        if (!csv) throw FormatError("cannot write " + result.csv_path);
        csv << metrics_csv(cfg, result.rounds);

        nlohmann::json summary;
        summary["run_name"] = cfg.run_name;
        summary["seed"] = cfg.seed;
        summary["rounds"] = cfg.rounds;
        summary["final_accuracy"] = result.final_accuracy;
        summary["best_accuracy"] = result.best_accuracy;
        summary["wall_seconds"] = result.wall_seconds;
        std::size_t replaced = 0, dropped = 0;
        double prec = 0.0, rec = 0.0;
        int defended_rounds = 0;
        for (const auto& r : result.rounds) {
            replaced += r.replaced;
            dropped += r.dropped;
            if (r.defense_ran) {
                prec += r.detection.precision;
                rec += r.detection.recall;
                ++defended_rounds;
            }
        }
        summary["replaced_total"] = replaced;
        summary["dropped_total"] = dropped;
        if (defended_rounds > 0) {
            summary["detection_precision_mean"] = prec / defended_rounds;
            summary["detection_recall_mean"] = rec / defended_rounds;
        }
        summary["config"] = serialize_config(cfg);
        std::ofstream js(result.json_path, std::ios::binary);
        if (!js) throw FormatError("cannot write " + result.json_path);
        js << summary.dump(2) << "\n";
    }
    return result;
}

SweepResult sweep(ExperimentConfig cfg, int n_seeds, bool persist) {
    if (n_seeds < 1) throw ConfigError("sweep: need at least one seed");
    SweepResult out;
    const std::string base_name = cfg.run_name;
    const std::uint64_t base_seed = cfg.seed;
    for (int i = 0; i < n_seeds; ++i) {
        cfg.seed = base_seed + static_cast<std::uint64_t>(i);
        cfg.run_name = base_name + "_s" + std::to_string(cfg.seed);
        out.runs.push_back(run_experiment(cfg, persist));
    }
    double mean = 0.0;
    for (const auto& r : out.runs) mean += r.final_accuracy;
    mean /= static_cast<double>(out.runs.size());
    double var = 0.0;
    for (const auto& r : out.runs) var += (r.final_accuracy - mean) * (r.final_accuracy - mean);
    out.mean_final_accuracy = mean;
    out.std_final_accuracy = std::sqrt(var / static_cast<double>(out.runs.size()));
    return out;
}

TheoremTrial theorem_trial(std::uint64_t seed, int n_clients, int records_per_client,
                           double malicious_ratio, double displacement) {
    const int d_z = 3;
    const int n_classes = 2;
    const int n_malicious =
        static_cast<int>(std::llround(malicious_ratio * static_cast<double>(n_clients)));

    // Clean records cluster per class in z-space; malicious clients transmit
    // records displaced far outside the clusters.
    Rng rng = Rng::stream(seed, {0x7e0});
    std::vector<SmashedRecord> before;
    std::uint64_t uid = 0;
    for (int c = 0; c < n_clients; ++c) {
        const bool malicious = c >= n_clients - n_malicious;
        for (int j = 0; j < records_per_client; ++j) {
            SmashedRecord rec;
            rec.uid = uid++;
            rec.sample_id = static_cast<std::size_t>(rec.uid);
            rec.client_id = c;
            rec.label = static_cast<int>(rng.below(n_classes));
            rec.z.assign(static_cast<std::size_t>(d_z), 0.0);
            for (int f = 0; f < d_z; ++f) {
                rec.z[static_cast<std::size_t>(f)] =
                    (rec.label == 0 ? -1.0 : 1.0) + 0.25 * rng.normal();
            }
            if (malicious) {
                for (double& v : rec.z) v += displacement * 0.25 * rng.normal();
                rec.poison_truth = true;
            }
            before.push_back(std::move(rec));
        }
    }

    // Detection, then ungated substitution (full replacement pressure).
    ExperimentConfig cfg;
    cfg.detect_k = 8;
    TheoremTrial trial;
    const topo::Detection det = topo::detect(before, defense::detect_config(cfg));
    trial.detection = topo::score_detection(det.mask, before);

    std::vector<SmashedRecord> clean;
    for (std::size_t i = 0; i < before.size(); ++i) {
        if (!det.mask[i]) clean.push_back(before[i]);
    }
    gan::GanConfig gc;
    gc.steps = 300;
    Rng gan_rng = Rng::stream(seed, {0x7e1});
    const gan::GanState gans = gan::train_gan(clean, gc, gan_rng);
    gan::Validator permissive;  // no student/teacher: accept all candidates
    Rng sub_rng = Rng::stream(seed, {0x7e2});
    const std::vector<SmashedRecord> after =
        gan::substitute(before, det.mask, gans, permissive, 8, sub_rng, nullptr);

    // A server model trained briefly on clean data gives non-degenerate
    // gradients for the variance comparison.
    Rng model_rng = Rng::stream(seed, {0x7e3});
    nn::MlpModel server = nn::make_mlp({static_cast<std::size_t>(d_z), 16,
                                        static_cast<std::size_t>(n_classes)},
                                       {nn::Activation::relu, nn::Activation::identity}, model_rng);
    {
        Matrix z(clean.size(), static_cast<std::size_t>(d_z));
        std::vector<int> labels(clean.size());
        for (std::size_t i = 0; i < clean.size(); ++i) {
            std::copy(clean[i].z.begin(), clean[i].z.end(), z.row(i));
            labels[i] = clean[i].label;
        }
        nn::GradientBundle vel;
        for (int e = 0; e < 40; ++e) {
            const nn::Trace tr = nn::forward(server, z);
            const nn::CrossEntropy ce = nn::cross_entropy(tr.output, labels);
            nn::GradientBundle grads = nn::backward(server, tr, ce.grad);
            nn::sgd_step(server, grads, 0.05, 0.0, vel);
        }
    }

    std::size_t m_clean = 0, m_poisoned = 0;
    for (const auto& rec : before) (rec.poison_truth ? m_poisoned : m_clean) += 1;
    trial.verdict = sgv::check_theorem(before, after, malicious_ratio, m_clean, m_poisoned, server);
    return trial;
}

DetectBenchResult detect_bench(ExperimentConfig cfg, int n_seeds) {
    if (n_seeds < 1) throw ConfigError("detect_bench: need at least one seed");
    DetectBenchResult out;
    const std::uint64_t base_seed = cfg.seed;
    for (int i = 0; i < n_seeds; ++i) {
        cfg.seed = base_seed + static_cast<std::uint64_t>(i);
        sfl::SystemState state = sfl::init_system(cfg);
        // A couple of undefended rounds first so the detector sees the
        // representations of a training (not freshly initialized) system.
        for (int r = 0; r < cfg.defense_warmup; ++r) sfl::run_round(state, cfg, nullptr);
        defense::DetectOnly probe(cfg);
        sfl::RoundReport report = sfl::run_round(state, cfg, &probe);
        out.per_seed.push_back(report.detection);
    }
    for (const auto& s : out.per_seed) {
        out.mean_precision += s.precision;
        out.mean_recall += s.recall;
    }
    out.mean_precision /= static_cast<double>(n_seeds);
    out.mean_recall /= static_cast<double>(n_seeds);
    return out;
}

}  // namespace splitguard::experiment
