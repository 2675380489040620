#pragma once

#include <cstddef>
#include <string_view>

// Inner-loop arithmetic kernels. Scalar versions are the reference
// semantics; AVX2/NEON variants are selected once at startup from CPU
// capabilities and must stay equivalent to scalar:
//   - axpy / scale_assign: bit-identical (elementwise, no re-association,
//     no FMA contraction anywhere in the build),
//   - dot / squared_distance: equal up to reduction-order rounding.
// Within one process a single backend is used throughout, so repeated runs
// of the same configuration stay byte-identical.

namespace fedlora::kernels {

enum class Backend { scalar, avx2, neon };

// Best backend this CPU supports.
Backend detect_backend();

// Backend used by the dispatched entry points below. Defaults to
// detect_backend() on first use.
Backend active_backend();

// Force a backend (tests, troubleshooting). Throws ConfigError if the
// host cannot run it.
void set_backend(Backend b);

std::string_view backend_name(Backend b);

// Dispatched entry points.
double dot(const double* a, const double* b, std::size_t n);
double squared_distance(const double* a, const double* b, std::size_t n);
void axpy(double a, const double* x, double* y, std::size_t n);          // y += a*x
void scale_assign(double a, const double* x, double* y, std::size_t n);  // y  = a*x

namespace scalar {
double dot(const double* a, const double* b, std::size_t n);
double squared_distance(const double* a, const double* b, std::size_t n);
void axpy(double a, const double* x, double* y, std::size_t n);
void scale_assign(double a, const double* x, double* y, std::size_t n);
}  // namespace scalar

#if defined(FEDLORA_HAVE_AVX2)
namespace avx2 {
double dot(const double* a, const double* b, std::size_t n);
double squared_distance(const double* a, const double* b, std::size_t n);
void axpy(double a, const double* x, double* y, std::size_t n);
void scale_assign(double a, const double* x, double* y, std::size_t n);
}  // namespace avx2
#endif

#if defined(FEDLORA_HAVE_NEON)
namespace neon {
double dot(const double* a, const double* b, std::size_t n);
double squared_distance(const double* a, const double* b, std::size_t n);
void axpy(double a, const double* x, double* y, std::size_t n);
void scale_assign(double a, const double* x, double* y, std::size_t n);
}  // namespace neon
#endif

}  // namespace fedlora::kernels
