#pragma once
// Row-major dense matrix plus the handful of operations the simulator needs.
// The hot loops route through the dispatched kernels.

#include <cstddef>
#include <vector>

#include "splitguard/errors.hpp"

namespace splitguard {

class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* row(std::size_t r) { return data_.data() + r * cols_; }
    const double* row(std::size_t r) const { return data_.data() + r * cols_; }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

namespace linalg {

// C[m×n] = A[m×k] · B[n×k]^T
Matrix matmul_nt(const Matrix& a, const Matrix& b);

// C[m×n] = A[m×k] · B[k×n]
Matrix matmul_nn(const Matrix& a, const Matrix& b);

// C[k×n] = A[m×k]^T · B[m×n]
Matrix matmul_tn(const Matrix& a, const Matrix& b);

// Solve (A)·X = B for X with partial-pivot LU; A is square [n×n], B is [n×m].
// If a pivot collapses, retries once with `jitter` added to the diagonal and
// sets *jittered (when given).
Matrix solve(const Matrix& a, const Matrix& b, double jitter = 1e-10, bool* jittered = nullptr);

// Linear-interpolated percentile of a sample, p in [0, 100].
double percentile(std::vector<double> values, double p);

double median(std::vector<double> values);

}  // namespace linalg
}  // namespace splitguard
