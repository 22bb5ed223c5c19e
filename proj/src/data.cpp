#include "splitguard/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>

#include "splitguard/errors.hpp"
#include "splitguard/rng.hpp"

namespace splitguard::data {

Dataset make_synthetic(int classes, std::size_t dim, std::size_t per_class, double spread,
                       std::uint64_t seed) {
    if (classes < 2) throw ConfigError("make_synthetic: need at least 2 classes");
    if (dim < static_cast<std::size_t>(classes)) {
        throw ConfigError("make_synthetic: dim must be >= classes for simplex means");
    }
    if (per_class == 0) throw ConfigError("make_synthetic: per_class must be positive");
    if (spread < 0.0) throw ConfigError("make_synthetic: spread must be non-negative");

    const std::size_t n = static_cast<std::size_t>(classes) * per_class;
    Dataset ds;
    ds.num_classes = classes;
    ds.features = Matrix(n, dim);
    ds.labels.resize(n);

    Rng rng = Rng::stream(seed, {0xda7a});
    std::size_t row = 0;
    for (int c = 0; c < classes; ++c) {
        for (std::size_t j = 0; j < per_class; ++j, ++row) {
            double* x = ds.features.row(row);
            for (std::size_t d = 0; d < dim; ++d) x[d] = spread * rng.normal();
            x[static_cast<std::size_t>(c)] += 1.0;  // simplex vertex e_c
            ds.labels[row] = c;
        }
    }
    return ds;
}

namespace {

std::uint32_t read_be_u32(std::ifstream& f, const std::string& path, std::size_t& offset) {
    unsigned char buf[4];
    f.read(reinterpret_cast<char*>(buf), 4);
    if (f.gcount() != 4) throw FormatError(path + ": truncated at byte " + std::to_string(offset));
    offset += 4;
    return (std::uint32_t(buf[0]) << 24) | (std::uint32_t(buf[1]) << 16) |
           (std::uint32_t(buf[2]) << 8) | std::uint32_t(buf[3]);
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 bool downsample_8x8) {
    std::ifstream imgf(images_path, std::ios::binary);
    if (!imgf) throw FormatError("cannot open " + images_path);
    std::size_t off = 0;
    const std::uint32_t img_magic = read_be_u32(imgf, images_path, off);
    if (img_magic != 0x00000803u) {
        throw FormatError(images_path + ": bad magic at byte 0 (expected 0x00000803)");
    }
    const std::uint32_t n_images = read_be_u32(imgf, images_path, off);
    const std::uint32_t rows = read_be_u32(imgf, images_path, off);
    const std::uint32_t cols = read_be_u32(imgf, images_path, off);
    std::vector<unsigned char> pixels(static_cast<std::size_t>(n_images) * rows * cols);
    imgf.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
    if (imgf.gcount() != static_cast<std::streamsize>(pixels.size())) {
        throw FormatError(images_path + ": truncated at byte " +
                          std::to_string(off + static_cast<std::size_t>(imgf.gcount())));
    }

    std::ifstream labf(labels_path, std::ios::binary);
    if (!labf) throw FormatError("cannot open " + labels_path);
    std::size_t loff = 0;
    const std::uint32_t lab_magic = read_be_u32(labf, labels_path, loff);
    if (lab_magic != 0x00000801u) {
        throw FormatError(labels_path + ": bad magic at byte 0 (expected 0x00000801)");
    }
    const std::uint32_t n_labels = read_be_u32(labf, labels_path, loff);
    if (n_labels != n_images) {
        throw FormatError("image/label count mismatch: " + std::to_string(n_images) + " vs " +
                          std::to_string(n_labels));
    }
    std::vector<unsigned char> raw_labels(n_labels);
    labf.read(reinterpret_cast<char*>(raw_labels.data()), static_cast<std::streamsize>(n_labels));
    if (labf.gcount() != static_cast<std::streamsize>(n_labels)) {
        throw FormatError(labels_path + ": truncated at byte " +
                          std::to_string(loff + static_cast<std::size_t>(labf.gcount())));
    }

    const bool pool = downsample_8x8 && (rows > 8 || cols > 8);
    const std::size_t out_r = pool ? 8 : rows;
    const std::size_t out_c = pool ? 8 : cols;

    Dataset ds;
    ds.features = Matrix(n_images, out_r * out_c);
    ds.labels.resize(n_images);
    int max_label = 0;
    for (std::uint32_t i = 0; i < n_images; ++i) {
        ds.labels[i] = raw_labels[i];
        max_label = std::max(max_label, static_cast<int>(raw_labels[i]));
        const unsigned char* src = pixels.data() + static_cast<std::size_t>(i) * rows * cols;
        double* dst = ds.features.row(i);
        for (std::size_t r = 0; r < out_r; ++r) {
            // Adaptive pooling bins: [floor(r·H/8), floor((r+1)·H/8)).
            const std::size_t r0 = r * rows / out_r;
            const std::size_t r1 = (r + 1) * rows / out_r;
            for (std::size_t c = 0; c < out_c; ++c) {
                const std::size_t c0 = c * cols / out_c;
                const std::size_t c1 = (c + 1) * cols / out_c;
                double acc = 0.0;
                for (std::size_t rr = r0; rr < r1; ++rr) {
                    for (std::size_t cc = c0; cc < c1; ++cc) acc += src[rr * cols + cc];
                }
                dst[r * out_c + c] = acc / (255.0 * static_cast<double>((r1 - r0) * (c1 - c0)));
            }
        }
    }
    ds.num_classes = max_label + 1;
    return ds;
}

std::vector<std::vector<std::size_t>> partition(const Dataset& dataset, std::size_t n_clients,
                                                double q, std::uint64_t seed) {
    if (q < 0.0 || q > 1.0) throw ConfigError("partition: q outside [0,1]");
    if (n_clients == 0) throw ConfigError("partition: need at least one client");
    if (dataset.size() < n_clients) throw ConfigError("partition: fewer samples than clients");

    const std::size_t total = dataset.size();
    std::vector<std::size_t> quota(n_clients, total / n_clients);
    for (std::size_t i = 0; i < total % n_clients; ++i) ++quota[i];

    // Shuffled per-class pools.
    std::vector<std::vector<std::size_t>> pools(static_cast<std::size_t>(dataset.num_classes));
    for (std::size_t i = 0; i < total; ++i) {
        pools[static_cast<std::size_t>(dataset.labels[i])].push_back(i);
    }
    for (std::size_t c = 0; c < pools.size(); ++c) {
        Rng r = Rng::stream(seed, {0x9a11, c});
        r.shuffle(pools[c]);
    }

    std::vector<std::vector<std::size_t>> clients(n_clients);
    // Dominant-class draws.
    for (std::size_t i = 0; i < n_clients; ++i) {
        auto& pool = pools[i % pools.size()];
        std::size_t want = static_cast<std::size_t>(std::llround(q * static_cast<double>(quota[i])));
        want = std::min(want, pool.size());
        clients[i].insert(clients[i].end(), pool.end() - static_cast<std::ptrdiff_t>(want), pool.end());
        pool.resize(pool.size() - want);
    }
    // Deal the remainder uniformly.
    std::vector<std::size_t> rest;
    for (auto& pool : pools) rest.insert(rest.end(), pool.begin(), pool.end());
    Rng r = Rng::stream(seed, {0x9a12});
    r.shuffle(rest);
    std::size_t cursor = 0;
    for (std::size_t i = 0; i < n_clients; ++i) {
        while (clients[i].size() < quota[i]) {
            if (cursor >= rest.size()) throw ConfigError("partition: insufficient samples");
            clients[i].push_back(rest[cursor++]);
        }
        std::sort(clients[i].begin(), clients[i].end());
    }
    return clients;
}

TrainTest split_train_test(std::vector<std::size_t> indices, double test_fraction,
                           std::uint64_t seed) {
    if (test_fraction < 0.0 || test_fraction >= 1.0) {
        throw ConfigError("split_train_test: fraction outside [0,1)");
    }
    Rng r = Rng::stream(seed, {0x7e57});
    r.shuffle(indices);
    const std::size_t n_test = static_cast<std::size_t>(test_fraction * static_cast<double>(indices.size()));
    TrainTest tt;
    tt.test.assign(indices.begin(), indices.begin() + static_cast<std::ptrdiff_t>(n_test));
    tt.train.assign(indices.begin() + static_cast<std::ptrdiff_t>(n_test), indices.end());
    std::sort(tt.test.begin(), tt.test.end());
    std::sort(tt.train.begin(), tt.train.end());
    return tt;
}

std::vector<double> feature_std(const Matrix& features, const std::vector<std::size_t>& rows) {
    if (rows.empty()) throw DomainError("feature_std: empty row set");
    const std::size_t d = features.cols();
    std::vector<double> mean(d, 0.0), var(d, 0.0);
    for (std::size_t r : rows) {
        const double* x = features.row(r);
        for (std::size_t j = 0; j < d; ++j) mean[j] += x[j];
    }
    const double inv_n = 1.0 / static_cast<double>(rows.size());
    for (double& m : mean) m *= inv_n;
    for (std::size_t r : rows) {
        const double* x = features.row(r);
        for (std::size_t j = 0; j < d; ++j) {
            const double dlt = x[j] - mean[j];
            var[j] += dlt * dlt;
        }
    }
    std::vector<double> sd(d);
    for (std::size_t j = 0; j < d; ++j) sd[j] = std::sqrt(var[j] * inv_n);
    return sd;
}

}  // namespace splitguard::data
