// Command-line front end: run experiments, seed sweeps, the gradient-variance
// theorem scenario and the detection-only benchmark.

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "splitguard/config.hpp"
#include "splitguard/experiment.hpp"
#include "splitguard/kernels.hpp"
#include "splitguard/sgv.hpp"

namespace {

using splitguard::ExperimentConfig;

ExperimentConfig resolve_config(const std::string& config_path,
                                const std::vector<std::string>& overrides) {
    ExperimentConfig cfg;
    if (!config_path.empty()) cfg = splitguard::load_config(config_path);
    for (const std::string& kv : overrides) {
        const std::size_t eq = kv.find('=');
        if (eq == std::string::npos) {
            throw splitguard::ConfigError("--set expects key=value, got '" + kv + "'");
        }
        splitguard::apply_override(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    splitguard::validate_config(cfg);
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"splitguard: split federated learning simulator with poisoning defense"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::vector<std::string> overrides;
    app.add_option("-c,--config", config_path, "experiment config file")->capture_default_str();
    app.add_option("--set", overrides, "override a config key (key=value, repeatable)");

    auto* cmd_run = app.add_subcommand("run", "run one experiment");
    auto* cmd_sweep = app.add_subcommand("sweep", "run a multi-seed sweep");
    int sweep_seeds = 5;
    cmd_sweep->add_option("-n,--seeds", sweep_seeds, "number of consecutive seeds")
        ->capture_default_str();

    auto* cmd_theorem = app.add_subcommand("theorem", "gradient-variance bound scenario");
    int theorem_trials = 5;
    double theorem_ratio = 0.2;
    int theorem_clients = 10;
    int theorem_records = 10;
    double theorem_displacement = 12.0;
    cmd_theorem->add_option("-n,--trials", theorem_trials, "seeded trials")->capture_default_str();
    cmd_theorem->add_option("--malicious-ratio", theorem_ratio, "fraction of malicious clients")
        ->capture_default_str();
    cmd_theorem->add_option("--clients", theorem_clients, "client count")->capture_default_str();
    cmd_theorem->add_option("--records", theorem_records, "records per client")
        ->capture_default_str();
    cmd_theorem->add_option("--displacement", theorem_displacement, "poison displacement scale")
        ->capture_default_str();

    auto* cmd_bench = app.add_subcommand("detect-bench", "detection-only Monte-Carlo benchmark");
    int bench_seeds = 5;
    cmd_bench->add_option("-n,--seeds", bench_seeds, "number of consecutive seeds")
        ->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    try {
        if (cmd_run->parsed()) {
            const ExperimentConfig cfg = resolve_config(config_path, overrides);
            const auto result = splitguard::experiment::run_experiment(cfg);
            std::printf("kernels backend: %s\n",
                        splitguard::kernels::backend_name(splitguard::kernels::active_backend())
                            .c_str());
            std::printf("final accuracy: %.4f (best %.4f) over %d rounds\n", result.final_accuracy,
                        result.best_accuracy, cfg.rounds);
            std::printf("metrics: %s\nsummary: %s\n", result.csv_path.c_str(),
                        result.json_path.c_str());
        } else if (cmd_sweep->parsed()) {
            const ExperimentConfig cfg = resolve_config(config_path, overrides);
            const auto result = splitguard::experiment::sweep(cfg, sweep_seeds);
            for (const auto& run : result.runs) {
                std::printf("  %s: final accuracy %.4f\n", run.json_path.c_str(),
                            run.final_accuracy);
            }
            std::printf("sweep mean final accuracy: %.4f (std %.4f) over %d seeds\n",
                        result.mean_final_accuracy, result.std_final_accuracy, sweep_seeds);
        } else if (cmd_theorem->parsed()) {
            const ExperimentConfig cfg = resolve_config(config_path, overrides);
            int holds = 0;
            for (int i = 0; i < theorem_trials; ++i) {
                const auto trial = splitguard::experiment::theorem_trial(
                    cfg.seed + static_cast<std::uint64_t>(i), theorem_clients, theorem_records,
                    theorem_ratio, theorem_displacement);
                const auto& v = trial.verdict;
                std::printf(
                    "trial %d: sgv_before=%.6g sgv_after=%.6g ratio=%.4f factor=%.6g %s "
                    "(detection recall %.2f)\n",
                    i, v.before.sgv, v.after.sgv, v.ratio, v.factor,
                    v.holds ? "HOLDS" : "VIOLATED", trial.detection.recall);
                if (v.holds) ++holds;
            }
            const double factor = splitguard::sgv::theorem_factor(
                theorem_ratio,
                (1.0 - theorem_ratio) * theorem_clients * theorem_records,
                theorem_ratio * theorem_clients * theorem_records);
            std::printf("factor for this setting: %.6g\n", factor);
            std::printf("bound held in %d/%d trials\n", holds, theorem_trials);
            return holds * 2 >= theorem_trials ? 0 : 1;
        } else if (cmd_bench->parsed()) {
            const ExperimentConfig cfg = resolve_config(config_path, overrides);
            const auto result = splitguard::experiment::detect_bench(cfg, bench_seeds);
            for (std::size_t i = 0; i < result.per_seed.size(); ++i) {
                const auto& s = result.per_seed[i];
                std::printf("seed %zu: precision %.3f recall %.3f f1 %.3f (tp=%zu fp=%zu fn=%zu)\n",
                            i, s.precision, s.recall, s.f1, s.tp, s.fp, s.fn);
            }
            std::printf("mean precision %.3f, mean recall %.3f over %d seeds\n",
                        result.mean_precision, result.mean_recall, bench_seeds);
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
