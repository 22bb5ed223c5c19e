#pragma once
// Topology-based malicious data detection: mutual-KNN graph over smashed
// vectors, anomaly scores via personalized-PageRank propagation, KDE over the
// scores and an adaptive threshold. Records scoring below the threshold are
// flagged as poisoned.

#include <cstddef>
#include <utility>
#include <vector>

#include "splitguard/linalg.hpp"
#include "splitguard/record.hpp"

namespace splitguard::topo {

struct KnnGraph {
    std::size_t node_count = 0;
    int k = 0;
    double sigma = 0.0;  // median Euclidean distance over retained edges
    double gamma = 0.0;  // (2σ²)^(−1)
    // Symmetric adjacency as per-node (neighbor, weight) lists; weights in (0,1].
    std::vector<std::vector<std::pair<std::size_t, double>>> adjacency;
    std::vector<double> degrees;  // weighted degree d_k = Σ_j W_kj
};

// Mutual-KNN graph with Gaussian edge weights exp(−γ‖z_k−z_j‖²).
KnnGraph build_knn_graph(const Matrix& z, int k);

enum class Teleport { degree, uniform, inverse_degree };

struct TasConfig {
    double alpha = 0.85;
    double eps = 1e-9;
    double tol = 1e-10;
    int max_iter = 1000;
    Teleport teleport = Teleport::degree;
};

struct TasScores {
    std::vector<double> scores;
    std::vector<double> teleport;  // sums to 1
    int iterations = 0;
    bool converged = false;
};

// Scores start from r⁰_k = 1/(d_k+ε) and iterate
//   r_k ← α · Σ_{w∈N(k)} W_kw · r_w / d_w + (1−α) · v_k
// until the L1 change drops below tol. Non-convergence is reported via the
// `converged` flag, not an error.
TasScores compute_tas(const KnnGraph& graph, const TasConfig& cfg);

struct KdeCurve {
    std::vector<double> grid;     // 512 evaluation points
    std::vector<double> density;  // f̂ at each grid point
    double bandwidth = 0.0;
};

// Gaussian-kernel KDE on [min−3h, max+3h]; h defaults to Silverman's rule
// 1.06·std·K^(−1/5) with a 1e-6 floor. Pass h > 0 to override.
KdeCurve kde(const std::vector<double>& scores, double h = 0.0);

// T = min(valley, Q_ρ): the deepest interior minimum of the density between
// its two tallest modes (+∞ when unimodal) against the ρ-percentile of the
// scores.
double adaptive_threshold(const std::vector<double>& scores, const KdeCurve& curve, double rho);

struct DetectConfig {
    int k = 10;
    TasConfig tas;
    double rho = 25.0;
    bool per_class = false;
};

struct TasResult {
    TasScores tas;
    KdeCurve curve;
    double threshold = 0.0;
    std::vector<bool> poison_mask;  // mask[i] ⇔ score[i] < threshold
};

struct Detection {
    std::vector<double> scores;  // aligned with the input records
    std::vector<bool> mask;
    std::vector<std::size_t> clean_indices;
    std::vector<std::size_t> poisoned_indices;
    TasResult detail;  // pooled result; largest group in per-class mode
};

Detection detect(const std::vector<SmashedRecord>& records, const DetectConfig& cfg);

struct DetectionStats {
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    double precision = 1.0;
    double recall = 1.0;
    double f1 = 0.0;
};

// Evaluation-only comparison of a mask against poison_truth.
DetectionStats score_detection(const std::vector<bool>& mask,
                               const std::vector<SmashedRecord>& records);

}  // namespace splitguard::topo
