#include "splitguard/kernels.hpp"

#include <cstdlib>
#include <stdexcept>

namespace splitguard::kernels {

namespace detail {
extern const Ops scalar_ops;
#ifdef SPLITGUARD_BUILD_AVX2
extern const Ops avx2_ops;
#endif
}  // namespace detail

namespace {

bool cpu_has_avx2() {
#if defined(SPLITGUARD_BUILD_AVX2) && defined(__GNUC__)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

Backend pick_startup_backend() {
    if (const char* env = std::getenv("SPLITGUARD_BACKEND")) {
        const std::string want(env);
        if (want == "scalar") return Backend::scalar;
        if (want == "avx2") {
            if (!cpu_has_avx2()) throw std::runtime_error("SPLITGUARD_BACKEND=avx2 but CPU/build lacks AVX2");
            return Backend::avx2;
        }
        throw std::runtime_error("unknown SPLITGUARD_BACKEND value: " + want);
    }
    return cpu_has_avx2() ? Backend::avx2 : Backend::scalar;
}

Backend& active_slot() {
    static Backend b = pick_startup_backend();
    return b;
}

}  // namespace

bool backend_supported(Backend b) {
    switch (b) {
        case Backend::scalar: return true;
        case Backend::avx2: return cpu_has_avx2();
    }
    return false;
}

const Ops& ops(Backend b) {
    switch (b) {
        case Backend::scalar: return detail::scalar_ops;
        case Backend::avx2:
#ifdef SPLITGUARD_BUILD_AVX2
            if (cpu_has_avx2()) return detail::avx2_ops;
#endif
            throw std::runtime_error("avx2 backend unavailable");
    }
    throw std::runtime_error("unknown backend");
}

const Ops& ops() { return ops(active_slot()); }

Backend active_backend() { return active_slot(); }

void force_backend(Backend b) {
    if (!backend_supported(b)) throw std::runtime_error("backend not supported: " + backend_name(b));
    active_slot() = b;
}

std::string backend_name(Backend b) {
    switch (b) {
        case Backend::scalar: return "scalar";
        case Backend::avx2: return "avx2";
    }
    return "?";
}

}  // namespace splitguard::kernels
