#include "splitguard/topo.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "splitguard/errors.hpp"
#include "splitguard/kernels.hpp"

namespace splitguard::topo {

KnnGraph build_knn_graph(const Matrix& z, int k) {
    const std::size_t n = z.rows();
    if (k < 1) throw ConfigError("build_knn_graph: k must be >= 1");
    if (n <= static_cast<std::size_t>(k)) throw ConfigError("build_knn_graph: need more points than k");

    // Pairwise squared distances.
    Matrix d2(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        d2(i, i) = 0.0;
        for (std::size_t j = i + 1; j < n; ++j) {
            const double d = kernels::squared_distance(z.row(i), z.row(j), z.cols());
            d2(i, j) = d;
            d2(j, i) = d;
        }
    }

    // k nearest per node, ties broken by index.
    std::vector<std::vector<std::size_t>> nearest(n);
    std::vector<std::pair<double, std::size_t>> order(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t m = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i) order[m++] = {d2(i, j), j};
        }
        std::partial_sort(order.begin(), order.begin() + k, order.end());
        nearest[i].reserve(static_cast<std::size_t>(k));
        for (int t = 0; t < k; ++t) nearest[i].push_back(order[static_cast<std::size_t>(t)].second);
        std::sort(nearest[i].begin(), nearest[i].end());
    }

    auto is_neighbor = [&](std::size_t of, std::size_t who) {
        return std::binary_search(nearest[of].begin(), nearest[of].end(), who);
    };

    // Mutual edges and the median retained distance.
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    std::vector<double> edge_dist;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j : nearest[i]) {
            if (j > i && is_neighbor(j, i)) {
                edges.emplace_back(i, j);
                edge_dist.push_back(std::sqrt(d2(i, j)));
            }
        }
    }

    KnnGraph g;
    g.node_count = n;
    g.k = k;
    g.adjacency.assign(n, {});
    g.degrees.assign(n, 0.0);
    g.sigma = edges.empty() ? 0.0 : linalg::median(edge_dist);
    const double sigma_eff = std::max(g.sigma, 1e-12);
    g.gamma = 1.0 / (2.0 * sigma_eff * sigma_eff);
    for (const auto& [i, j] : edges) {
        const double w = std::exp(-g.gamma * d2(i, j));
        g.adjacency[i].emplace_back(j, w);
        g.adjacency[j].emplace_back(i, w);
        g.degrees[i] += w;
        g.degrees[j] += w;
    }
    return g;
}

TasScores compute_tas(const KnnGraph& graph, const TasConfig& cfg) {
    if (cfg.alpha <= 0.0 || cfg.alpha >= 1.0) throw ConfigError("compute_tas: alpha outside (0,1)");
    if (cfg.eps <= 0.0) throw ConfigError("compute_tas: eps must be positive");
    const std::size_t n = graph.node_count;

    TasScores out;
    out.scores.resize(n);
    for (std::size_t i = 0; i < n; ++i) out.scores[i] = 1.0 / (graph.degrees[i] + cfg.eps);

    out.teleport.assign(n, 1.0 / static_cast<double>(n));
    switch (cfg.teleport) {
        case Teleport::uniform:
            break;
        case Teleport::degree: {
            const double total = kernels::sum(graph.degrees.data(), n);
            if (total > 0.0) {
                for (std::size_t i = 0; i < n; ++i) out.teleport[i] = graph.degrees[i] / total;
            }
            break;
        }
        case Teleport::inverse_degree: {
            const double total = kernels::sum(out.scores.data(), n);
            for (std::size_t i = 0; i < n; ++i) out.teleport[i] = out.scores[i] / total;
            break;
        }
    }

    std::vector<double> spread(n), next(n);
    for (out.iterations = 0; out.iterations < cfg.max_iter; ++out.iterations) {
        for (std::size_t i = 0; i < n; ++i) {
            spread[i] = graph.degrees[i] > 0.0 ? out.scores[i] / graph.degrees[i] : 0.0;
        }
        double delta = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double acc = 0.0;
            for (const auto& [j, w] : graph.adjacency[i]) acc += w * spread[j];
            next[i] = cfg.alpha * acc + (1.0 - cfg.alpha) * out.teleport[i];
            delta += std::fabs(next[i] - out.scores[i]);
        }
        out.scores.swap(next);
        if (delta < cfg.tol) {
            ++out.iterations;
            out.converged = true;
            break;
        }
    }
    return out;
}

KdeCurve kde(const std::vector<double>& scores, double h) {
    const std::size_t n = scores.size();
    if (n < 2) throw DomainError("kde: need at least 2 scores");

    if (h <= 0.0) {
        double mean = kernels::sum(scores.data(), n) / static_cast<double>(n);
        double var = 0.0;
        for (double s : scores) var += (s - mean) * (s - mean);
        const double sd = std::sqrt(var / static_cast<double>(n));
        h = 1.06 * sd * std::pow(static_cast<double>(n), -0.2);
        if (h < 1e-6) h = 1e-6;  // zero-variance floor
    }

    const auto [mn_it, mx_it] = std::minmax_element(scores.begin(), scores.end());
    const double lo = *mn_it - 3.0 * h;
    const double hi = *mx_it + 3.0 * h;

    constexpr std::size_t kGridSize = 512;
    KdeCurve curve;
    curve.bandwidth = h;
    curve.grid.resize(kGridSize);
    curve.density.resize(kGridSize);
    const double step = (hi - lo) / static_cast<double>(kGridSize - 1);
    const double norm = 1.0 / (static_cast<double>(n) * h * std::sqrt(2.0 * M_PI));
    for (std::size_t g = 0; g < kGridSize; ++g) {
        const double x = lo + step * static_cast<double>(g);
        double acc = 0.0;
        for (double s : scores) {
            const double u = (x - s) / h;
            acc += std::exp(-0.5 * u * u);
        }
        curve.grid[g] = x;
        curve.density[g] = norm * acc;
    }
    return curve;
}

namespace {

// Interior local maxima of the density curve; plateau runs count once.
std::vector<std::size_t> local_maxima(const std::vector<double>& f) {
    std::vector<std::size_t> maxima;
    const std::size_t n = f.size();
    for (std::size_t i = 1; i + 1 < n; ++i) {
        if (f[i] < f[i - 1] || f[i] < f[i + 1]) continue;
        if (f[i] == f[i - 1]) continue;  // not the first point of a plateau
        maxima.push_back(i);
    }
    return maxima;
}

}  // namespace

double adaptive_threshold(const std::vector<double>& scores, const KdeCurve& curve, double rho) {
    if (rho <= 0.0 || rho >= 100.0) throw ConfigError("adaptive_threshold: rho outside (0,100)");
    const double q = linalg::percentile(scores, rho);

    const std::vector<std::size_t> maxima = local_maxima(curve.density);
    double valley = std::numeric_limits<double>::infinity();
    if (maxima.size() >= 2) {
        // Two tallest modes.
        std::size_t a = maxima[0], b = maxima[1];
        if (curve.density[b] > curve.density[a]) std::swap(a, b);
        for (std::size_t i = 2; i < maxima.size(); ++i) {
            const std::size_t m = maxima[i];
            if (curve.density[m] > curve.density[a]) {
                b = a;
                a = m;
            } else if (curve.density[m] > curve.density[b]) {
                b = m;
            }
        }
        const std::size_t lo = std::min(a, b), hi = std::max(a, b);
        if (hi > lo + 1) {
            std::size_t arg = lo + 1;
            for (std::size_t i = lo + 1; i < hi; ++i) {
                if (curve.density[i] < curve.density[arg]) arg = i;
            }
            valley = curve.grid[arg];
        }
    }
    return std::min(valley, q);
}

namespace {

TasResult run_pipeline(const Matrix& z, const DetectConfig& cfg) {
    const KnnGraph graph = build_knn_graph(z, cfg.k);
    TasResult result;
    result.tas = compute_tas(graph, cfg.tas);
    result.curve = kde(result.tas.scores);
    result.threshold = adaptive_threshold(result.tas.scores, result.curve, cfg.rho);
    result.poison_mask.resize(result.tas.scores.size());
    for (std::size_t i = 0; i < result.tas.scores.size(); ++i) {
        result.poison_mask[i] = result.tas.scores[i] < result.threshold;
    }
    return result;
}

}  // namespace

Detection detect(const std::vector<SmashedRecord>& records, const DetectConfig& cfg) {
    if (records.size() < static_cast<std::size_t>(cfg.k) + 1) {
        throw DomainError("detect: need at least k+1 records");
    }
    const std::size_t dim = records.front().z.size();
    Detection det;
    det.scores.assign(records.size(), 0.0);
    det.mask.assign(records.size(), false);

    if (!cfg.per_class) {
        Matrix z(records.size(), dim);
        for (std::size_t i = 0; i < records.size(); ++i) {
            std::copy(records[i].z.begin(), records[i].z.end(), z.row(i));
        }
        det.detail = run_pipeline(z, cfg);
        det.scores = det.detail.tas.scores;
        det.mask = det.detail.poison_mask;
    } else {
        std::map<int, std::vector<std::size_t>> by_class;
        for (std::size_t i = 0; i < records.size(); ++i) by_class[records[i].label].push_back(i);
        std::size_t largest = 0;
        for (const auto& [label, idx] : by_class) {
            if (idx.size() < static_cast<std::size_t>(cfg.k) + 1) continue;  // too small to judge
            Matrix z(idx.size(), dim);
            for (std::size_t i = 0; i < idx.size(); ++i) {
                std::copy(records[idx[i]].z.begin(), records[idx[i]].z.end(), z.row(i));
            }
            TasResult sub = run_pipeline(z, cfg);
            for (std::size_t i = 0; i < idx.size(); ++i) {
                det.scores[idx[i]] = sub.tas.scores[i];
                det.mask[idx[i]] = sub.poison_mask[i];
            }
            if (idx.size() > largest) {
                largest = idx.size();
                det.detail = std::move(sub);
            }
        }
    }

    for (std::size_t i = 0; i < records.size(); ++i) {
        (det.mask[i] ? det.poisoned_indices : det.clean_indices).push_back(i);
    }
    return det;
}

DetectionStats score_detection(const std::vector<bool>& mask,
                               const std::vector<SmashedRecord>& records) {
    if (mask.size() != records.size()) throw ShapeError("score_detection: mask size mismatch");
    DetectionStats s;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        const bool truth = records[i].poison_truth;
        if (mask[i] && truth) ++s.tp;
        else if (mask[i] && !truth) ++s.fp;
        else if (!mask[i] && truth) ++s.fn;
        else ++s.tn;
    }
    s.precision = (s.tp + s.fp) ? static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fp) : 1.0;
    s.recall = (s.tp + s.fn) ? static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fn) : 1.0;
    s.f1 = (s.precision + s.recall) > 0.0
               ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
               : 0.0;
    return s;
}

}  // namespace splitguard::topo
