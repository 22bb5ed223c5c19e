#pragma once
// Dataset synthesis, IDX file loading and non-IID client partitioning.

#include <cstdint>
#include <string>
#include <vector>

#include "splitguard/linalg.hpp"

namespace splitguard::data {

struct Dataset {
    Matrix features;          // [n × d]
    std::vector<int> labels;  // [n], values in [0, num_classes)
    int num_classes = 0;

    std::size_t size() const { return labels.size(); }
    std::size_t dim() const { return features.cols(); }
};

// Gaussian clusters with class means on a scaled simplex (requires dim >= classes).
Dataset make_synthetic(int classes, std::size_t dim, std::size_t per_class, double spread,
                       std::uint64_t seed);

// IDX-format image/label pair (big-endian magics 0x803 / 0x801). Pixels are
// scaled to [0,1]; when downsample_8x8 is set, images are average-pooled to
// 8×8 before flattening.
Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 bool downsample_8x8 = true);

// Disjoint covering split across clients. Fraction q of each client's quota is
// drawn from its dominant class (assigned round-robin); the rest is dealt
// uniformly. q=0 is an IID shuffle.
std::vector<std::vector<std::size_t>> partition(const Dataset& dataset, std::size_t n_clients,
                                                double q, std::uint64_t seed);

// Deterministic train/test split of one index set.
struct TrainTest {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};
TrainTest split_train_test(std::vector<std::size_t> indices, double test_fraction,
                           std::uint64_t seed);

// Per-feature standard deviation over the given rows (population form).
std::vector<double> feature_std(const Matrix& features, const std::vector<std::size_t>& rows);

}  // namespace splitguard::data
