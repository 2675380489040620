#include "fedlora/kernels.hpp"

#include <atomic>

#include "fedlora/errors.hpp"

namespace fedlora::kernels {

namespace scalar {

double dot(const double* a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

double squared_distance(const double* a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return acc;
}

void axpy(double a, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void scale_assign(double a, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = a * x[i];
}

}  // namespace scalar

namespace {

struct Dispatch {
    double (*dot)(const double*, const double*, std::size_t);
    double (*squared_distance)(const double*, const double*, std::size_t);
    void (*axpy)(double, const double*, double*, std::size_t);
    void (*scale_assign)(double, const double*, double*, std::size_t);
};

constexpr Dispatch kScalar{scalar::dot, scalar::squared_distance, scalar::axpy,
                           scalar::scale_assign};
#if defined(FEDLORA_HAVE_AVX2)
constexpr Dispatch kAvx2{avx2::dot, avx2::squared_distance, avx2::axpy,
                         avx2::scale_assign};
#endif
#if defined(FEDLORA_HAVE_NEON)
constexpr Dispatch kNeon{neon::dot, neon::squared_distance, neon::axpy,
                         neon::scale_assign};
#endif

bool backend_supported(Backend b) {
    switch (b) {
        case Backend::scalar:
            return true;
        case Backend::avx2:
#if defined(FEDLORA_HAVE_AVX2)
            return __builtin_cpu_supports("avx2") != 0;
#else
            return false;
#endif
        case Backend::neon:
#if defined(FEDLORA_HAVE_NEON)
            return true;  // mandatory on aarch64
#else
            return false;
#endif
    }
    return false;
}

const Dispatch& table_for(Backend b) {
    switch (b) {
#if defined(FEDLORA_HAVE_AVX2)
        case Backend::avx2:
            return kAvx2;
#endif
#if defined(FEDLORA_HAVE_NEON)
        case Backend::neon:
            return kNeon;
#endif
        default:
            return kScalar;
    }
}

std::atomic<Backend> g_backend{Backend::scalar};
std::atomic<bool> g_initialized{false};

Backend ensure_backend() {
    if (!g_initialized.load(std::memory_order_acquire)) {
        g_backend.store(detect_backend(), std::memory_order_relaxed);
        g_initialized.store(true, std::memory_order_release);
    }
    return g_backend.load(std::memory_order_relaxed);
}

}  // namespace

Backend detect_backend() {
#if defined(FEDLORA_HAVE_AVX2)
    if (__builtin_cpu_supports("avx2")) return Backend::avx2;
#endif
#if defined(FEDLORA_HAVE_NEON)
    return Backend::neon;
#endif
    return Backend::scalar;
}

Backend active_backend() { return ensure_backend(); }

void set_backend(Backend b) {
    if (!backend_supported(b)) {
        throw ConfigError("kernel backend '" + std::string(backend_name(b)) +
                          "' is not supported on this host");
    }
    g_backend.store(b, std::memory_order_relaxed);
    g_initialized.store(true, std::memory_order_release);
}

std::string_view backend_name(Backend b) {
    switch (b) {
        case Backend::scalar:
            return "scalar";
        case Backend::avx2:
            return "avx2";
        case Backend::neon:
            return "neon";
    }
    return "unknown";
}

double dot(const double* a, const double* b, std::size_t n) {
    return table_for(ensure_backend()).dot(a, b, n);
}

double squared_distance(const double* a, const double* b, std::size_t n) {
    return table_for(ensure_backend()).squared_distance(a, b, n);
}

void axpy(double a, const double* x, double* y, std::size_t n) {
    table_for(ensure_backend()).axpy(a, x, y, n);
}

void scale_assign(double a, const double* x, double* y, std::size_t n) {
    table_for(ensure_backend()).scale_assign(a, x, y, n);
}

}  // namespace fedlora::kernels
