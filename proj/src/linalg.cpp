#include "splitguard/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "splitguard/kernels.hpp"

namespace splitguard::linalg {

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) throw ShapeError("matmul_nt: inner dimensions differ");
    Matrix c(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double* ci = c.row(i);
        const double* ai = a.row(i);
        for (std::size_t j = 0; j < b.rows(); ++j) {
            ci[j] = kernels::dot(ai, b.row(j), a.cols());
        }
    }
    return c;
}

Matrix matmul_nn(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) throw ShapeError("matmul_nn: inner dimensions differ");
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* ai = a.row(i);
        double* ci = c.row(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            kernels::axpy(ai[k], b.row(k), ci, b.cols());
        }
    }
    return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) throw ShapeError("matmul_tn: shared dimension differs");
    Matrix c(a.cols(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* ai = a.row(i);
        const double* bi = b.row(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            kernels::axpy(ai[k], bi, c.row(k), b.cols());
        }
    }
    return c;
}

namespace {

// In-place LU factorization with partial pivoting; returns false on a
// vanishing pivot.
bool lu_solve_inplace(Matrix& a, Matrix& x) {
    const std::size_t n = a.rows();
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t pivot = col;
        double best = std::fabs(a(col, col));
        for (std::size_t r = col + 1; r < n; ++r) {
            const double v = std::fabs(a(r, col));
            if (v > best) {
                best = v;
                pivot = r;
            }
        }
        if (best < 1e-300) return false;
        if (pivot != col) {
            for (std::size_t c = 0; c < n; ++c) std::swap(a(col, c), a(pivot, c));
            for (std::size_t c = 0; c < x.cols(); ++c) std::swap(x(col, c), x(pivot, c));
        }
        const double inv = 1.0 / a(col, col);
        for (std::size_t r = col + 1; r < n; ++r) {
            const double f = a(r, col) * inv;
            if (f == 0.0) continue;
            a(r, col) = 0.0;
            kernels::axpy(-f, a.row(col) + col + 1, a.row(r) + col + 1, n - col - 1);
            kernels::axpy(-f, x.row(col), x.row(r), x.cols());
        }
    }
    // Back substitution.
    for (std::size_t col = n; col-- > 0;) {
        const double inv = 1.0 / a(col, col);
        kernels::scale(x.row(col), inv, x.cols());
        for (std::size_t r = 0; r < col; ++r) {
            kernels::axpy(-a(r, col), x.row(col), x.row(r), x.cols());
        }
    }
    return true;
}

}  // namespace

Matrix solve(const Matrix& a, const Matrix& b, double jitter, bool* jittered) {
    if (a.rows() != a.cols()) throw ShapeError("solve: matrix not square");
    if (a.rows() != b.rows()) throw ShapeError("solve: rhs row count mismatch");
    if (jittered) *jittered = false;
    Matrix lu = a;
    Matrix x = b;
    if (lu_solve_inplace(lu, x)) return x;
    lu = a;
    for (std::size_t i = 0; i < lu.rows(); ++i) lu(i, i) += jitter;
    x = b;
    if (!lu_solve_inplace(lu, x)) throw DomainError("solve: singular system even with jitter");
    if (jittered) *jittered = true;
    return x;
}

double percentile(std::vector<double> values, double p) {
    if (values.empty()) throw DomainError("percentile of empty sample");
    if (p < 0.0 || p > 100.0) throw DomainError("percentile p outside [0,100]");
    std::sort(values.begin(), values.end());
    if (values.size() == 1) return values[0];
    const double pos = p / 100.0 * static_cast<double>(values.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    if (lo + 1 >= values.size()) return values.back();
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[lo + 1] - values[lo]);
}

double median(std::vector<double> values) { return percentile(std::move(values), 50.0); }

}  // namespace splitguard::linalg
