#pragma once
// Experiment front door: wires the modules per round, persists metrics, and
// hosts the theorem-check and detection-benchmark scenarios.

#include <string>
#include <vector>

#include "splitguard/config.hpp"
#include "splitguard/sfl.hpp"
#include "splitguard/sgv.hpp"
#include "splitguard/topo.hpp"

namespace splitguard::experiment {

struct RunResult {
    std::vector<sfl::RoundReport> rounds;
    double final_accuracy = 0.0;
    double best_accuracy = 0.0;
    std::string csv_path;   // empty when persistence is disabled
    std::string json_path;
    double wall_seconds = 0.0;
};

// Full experiment. When `persist` is true, writes <run_name>_metrics.csv and
// <run_name>_summary.json under the output directory (config out_dir, else
// $SPLITGUARD_OUT, else the working directory).
RunResult run_experiment(const ExperimentConfig& cfg, bool persist = true);

// The metrics CSV for a finished run, byte-stable for a given config.
std::string metrics_csv(const ExperimentConfig& cfg, const std::vector<sfl::RoundReport>& rounds);

struct SweepResult {
    std::vector<RunResult> runs;
    double mean_final_accuracy = 0.0;
    double std_final_accuracy = 0.0;
};

// Runs seeds seed, seed+1, …, seed+n−1 as independent experiments.
SweepResult sweep(ExperimentConfig cfg, int n_seeds, bool persist = true);

struct TheoremTrial {
    sgv::TheoremVerdict verdict;
    topo::DetectionStats detection;
};

// Constructed substitution scenario: clustered clean records in z-space for
// (1−alpha)·N clients, heavily displaced records for the rest; detection and
// ungated GAN substitution; gradient variance compared before/after.
TheoremTrial theorem_trial(std::uint64_t seed, int n_clients, int records_per_client,
                           double malicious_ratio, double displacement);

struct DetectBenchResult {
    std::vector<topo::DetectionStats> per_seed;
    double mean_precision = 0.0;
    double mean_recall = 0.0;
};

// Runs the simulator with the configured attack for a few rounds and scores
// the detector on one round's pooled records, per seed.
DetectBenchResult detect_bench(ExperimentConfig cfg, int n_seeds);

}  // namespace splitguard::experiment
