#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "fedlora/errors.hpp"
#include "fedlora/kernels.hpp"
#include "fedlora/rng.hpp"

using namespace fedlora;

namespace {

std::vector<double> random_vector(std::size_t n, RngStream& rng, double scale = 1.0) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.normal(0.0, scale);
    return v;
}

bool bit_equal(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

struct Variant {
    const char* name;
    double (*dot)(const double*, const double*, std::size_t);
    double (*sqdist)(const double*, const double*, std::size_t);
    void (*axpy)(double, const double*, double*, std::size_t);
    void (*scale_assign)(double, const double*, double*, std::size_t);
};

std::vector<Variant> available_variants() {
    std::vector<Variant> variants;
#if defined(FEDLORA_HAVE_AVX2)
    if (kernels::detect_backend() == kernels::Backend::avx2) {
        variants.push_back({"avx2", kernels::avx2::dot, kernels::avx2::squared_distance,
                            kernels::avx2::axpy, kernels::avx2::scale_assign});
    }
#endif
#if defined(FEDLORA_HAVE_NEON)
    variants.push_back({"neon", kernels::neon::dot, kernels::neon::squared_distance,
                        kernels::neon::axpy, kernels::neon::scale_assign});
#endif
    return variants;
}

}  // namespace

TEST_CASE("scalar dot and squared_distance match straight-line arithmetic") {
    const std::vector<double> a{1.0, 2.0, 3.0};
    const std::vector<double> b{4.0, -5.0, 6.0};
    CHECK(kernels::scalar::dot(a.data(), b.data(), 3) == doctest::Approx(12.0));
    CHECK(kernels::scalar::squared_distance(a.data(), b.data(), 3) ==
          doctest::Approx(9.0 + 49.0 + 9.0));
    CHECK(kernels::scalar::dot(a.data(), b.data(), 0) == 0.0);
}

TEST_CASE("simd variants match scalar reference across sizes and tails") {
    const auto variants = available_variants();
    if (variants.empty()) return;  // scalar-only host

    RngStream rng(99, "kernel-equivalence");
    for (const Variant& v : variants) {
        INFO("variant ", v.name);
        for (std::size_t n = 0; n <= 70; ++n) {
            std::vector<double> a = random_vector(n, rng, 2.0);
            std::vector<double> b = random_vector(n, rng, 2.0);

            const double ds = kernels::scalar::dot(a.data(), b.data(), n);
            const double dv = v.dot(a.data(), b.data(), n);
            CHECK(std::abs(ds - dv) <= 1e-13 * (1.0 + std::abs(ds)));

            const double ss = kernels::scalar::squared_distance(a.data(), b.data(), n);
            const double sv = v.sqdist(a.data(), b.data(), n);
            CHECK(std::abs(ss - sv) <= 1e-13 * (1.0 + std::abs(ss)));

            // elementwise kernels must agree bit for bit
            const double factor = rng.normal();
            std::vector<double> y_scalar = b;
            std::vector<double> y_simd = b;
            kernels::scalar::axpy(factor, a.data(), y_scalar.data(), n);
            v.axpy(factor, a.data(), y_simd.data(), n);
            CHECK(bit_equal(y_scalar, y_simd));

            kernels::scalar::scale_assign(factor, a.data(), y_scalar.data(), n);
            v.scale_assign(factor, a.data(), y_simd.data(), n);
            CHECK(bit_equal(y_scalar, y_simd));
        }
    }
}

TEST_CASE("dispatch selects a supported backend and can be forced to scalar") {
    const kernels::Backend detected = kernels::detect_backend();
    CHECK(kernels::backend_name(detected) != std::string_view("unknown"));

    kernels::set_backend(kernels::Backend::scalar);
    CHECK(kernels::active_backend() == kernels::Backend::scalar);
    const std::vector<double> a{1.0, 2.0, 3.0, 4.0, 5.0};
    CHECK(kernels::dot(a.data(), a.data(), 5) == doctest::Approx(55.0));

    kernels::set_backend(detected);
    CHECK(kernels::active_backend() == detected);

#if defined(FEDLORA_HAVE_AVX2)
    CHECK_THROWS_AS(kernels::set_backend(kernels::Backend::neon), ConfigError);
#endif
#if defined(FEDLORA_HAVE_NEON)
    CHECK_THROWS_AS(kernels::set_backend(kernels::Backend::avx2), ConfigError);
#endif
}
