#pragma once
// Data-parallel inner-loop kernels with runtime ISA selection.
//
// Every kernel has a scalar reference implementation and, on x86-64, an
// AVX2/FMA variant. The active variant is chosen once at startup from CPU
// capabilities and can be overridden with the SPLITGUARD_BACKEND environment
// variable ("scalar" or "avx2") or force_backend(). Variants are equivalence
// tested against the scalar reference; results may differ by rounding only.

#include <cstddef>
#include <string>

namespace splitguard::kernels {

enum class Backend { scalar, avx2 };

// Function table for one ISA variant.
struct Ops {
    // sum_i a[i]*b[i]
    double (*dot)(const double* a, const double* b, std::size_t n);
    // y[i] += alpha * x[i]
    void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
    // sum_i (a[i]-b[i])^2
    double (*squared_distance)(const double* a, const double* b, std::size_t n);
    // x[i] *= alpha
    void (*scale)(double* x, double alpha, std::size_t n);
    // sum_i x[i]
    double (*sum)(const double* x, std::size_t n);
};

// Table for a specific backend. Throws std::runtime_error if the backend is
// not compiled in or not supported by this CPU.
const Ops& ops(Backend b);

// Currently active table.
const Ops& ops();

Backend active_backend();
bool backend_supported(Backend b);

// Override the startup selection (used by tests and benchmarks).
void force_backend(Backend b);

std::string backend_name(Backend b);

// Convenience wrappers through the active table.
inline double dot(const double* a, const double* b, std::size_t n) { return ops().dot(a, b, n); }
inline void axpy(double alpha, const double* x, double* y, std::size_t n) { ops().axpy(alpha, x, y, n); }
inline double squared_distance(const double* a, const double* b, std::size_t n) {
    return ops().squared_distance(a, b, n);
}
inline void scale(double* x, double alpha, std::size_t n) { ops().scale(x, alpha, n); }
inline double sum(const double* x, std::size_t n) { return ops().sum(x, n); }

}  // namespace splitguard::kernels
