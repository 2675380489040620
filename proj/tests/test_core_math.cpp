#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "fedlora/errors.hpp"
#include "fedlora/loss.hpp"
#include "fedlora/matrix.hpp"
#include "fedlora/rng.hpp"

using namespace fedlora;

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, RngStream& rng) {
    Matrix m(rows, cols);
    for (double& v : m.data) v = rng.normal(0.0, 2.0);
    return m;
}

}  // namespace

TEST_CASE("frob_distance hand cases") {
    Matrix a(2, 2);
    Matrix b(2, 2);
    CHECK(frob_distance(a, b) == 0.0);

    // difference [[3,4],[0,0]] -> sqrt(9+16) = 5
    a.at(0, 0) = 3.0;
    a.at(0, 1) = 4.0;
    CHECK(frob_distance(a, b) == doctest::Approx(5.0).epsilon(1e-15));

    Matrix c(1, 1);
    Matrix d(1, 1);
    c.at(0, 0) = 2.0;
    d.at(0, 0) = -1.0;
    CHECK(frob_distance(c, d) == doctest::Approx(3.0).epsilon(1e-15));

    Matrix e(2, 3);
    CHECK_THROWS_AS(frob_distance(a, e), ShapeError);
}

TEST_CASE("frob_distance is symmetric and satisfies the triangle inequality") {
    RngStream rng(7, "frob-props");
    for (int trial = 0; trial < 50; ++trial) {
        const Matrix a = random_matrix(3, 4, rng);
        const Matrix b = random_matrix(3, 4, rng);
        const Matrix c = random_matrix(3, 4, rng);
        const double ab = frob_distance(a, b);
        const double ba = frob_distance(b, a);
        CHECK(std::abs(ab - ba) <= 1e-12);
        CHECK(ab >= 0.0);
        CHECK(frob_distance(a, c) <= ab + frob_distance(b, c) + 1e-12);
    }
    const Matrix a = random_matrix(5, 5, rng);
    CHECK(frob_distance(a, a) == 0.0);
}

TEST_CASE("softmax_cross_entropy analytic cases") {
    {
        const std::vector<double> logits(5, 0.7);
        const LossGrad lg = softmax_cross_entropy(logits, 2);
        CHECK(lg.loss == doctest::Approx(std::log(5.0)).epsilon(1e-12));
    }
    {
        const LossGrad lg = softmax_cross_entropy({0.0, 0.0}, 0);
        CHECK(lg.loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
        CHECK(lg.grad[0] == doctest::Approx(-0.5).epsilon(1e-12));
        CHECK(lg.grad[1] == doctest::Approx(0.5).epsilon(1e-12));
    }
    {
        // high-margin correct prediction: loss = log(1 + e^-10)
        const LossGrad lg = softmax_cross_entropy({10.0, 0.0}, 0);
        CHECK(lg.loss == doctest::Approx(std::log1p(std::exp(-10.0))).epsilon(1e-12));
    }
    CHECK_THROWS_AS(softmax_cross_entropy({1.0, 2.0}, 2), DataError);
    CHECK_THROWS_AS(softmax_cross_entropy({1.0}, 0), ShapeError);
}

TEST_CASE("softmax_cross_entropy gradient sums to zero and loss is shift invariant") {
    RngStream rng(11, "ce-props");
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t classes = 2 + rng.uniform_below(6);
        std::vector<double> logits(classes);
        for (double& v : logits) v = rng.normal(0.0, 3.0);
        const std::size_t label = rng.uniform_below(classes);

        const LossGrad lg = softmax_cross_entropy(logits, label);
        const double grad_sum = std::accumulate(lg.grad.begin(), lg.grad.end(), 0.0);
        CHECK(std::abs(grad_sum) <= 1e-12);
        CHECK(lg.loss >= 0.0);

        const double shift = rng.normal(0.0, 10.0);
        std::vector<double> shifted = logits;
        for (double& v : shifted) v += shift;
        const LossGrad lg2 = softmax_cross_entropy(shifted, label);
        CHECK(std::abs(lg.loss - lg2.loss) <= 1e-9 * (1.0 + std::abs(lg.loss)));
    }
}

TEST_CASE("rng streams are reproducible and distinct") {
    RngStream a(123, "unit", 4, 9);
    RngStream b(123, "unit", 4, 9);
    for (int i = 0; i < 10000; ++i) {
        CHECK(a.next_u64() == b.next_u64());
    }

    RngStream c(123, "unit", 4, 10);
    RngStream d(123, "unit", 5, 9);
    RngStream e(124, "unit", 4, 9);
    RngStream f(123, "other", 4, 9);
    RngStream base(123, "unit", 4, 9);
    const std::uint64_t first = base.next_u64();
    CHECK(c.next_u64() != first);
    CHECK(d.next_u64() != first);
    CHECK(e.next_u64() != first);
    CHECK(f.next_u64() != first);
}

TEST_CASE("rng fork gives an independent child without disturbing the parent") {
    RngStream parent(5, "fork-test");
    (void)parent.next_u64();
    RngStream child = parent.fork("child");

    RngStream replay(5, "fork-test");
    (void)replay.next_u64();
    CHECK(parent.next_u64() == replay.next_u64());
    CHECK(child.next_u64() != parent.next_u64());
}

TEST_CASE("rng distributions are sane") {
    RngStream rng(17, "dist");
    double sum = 0.0;
    double sum_sq = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double x = rng.normal();
        sum += x;
        sum_sq += x * x;
    }
    CHECK(std::abs(sum / n) < 0.05);
    CHECK(std::abs(sum_sq / n - 1.0) < 0.05);

    for (int i = 0; i < 1000; ++i) {
        const double u = rng.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }

    const std::vector<double> p = rng.dirichlet(0.5, 8);
    double total = 0.0;
    for (double v : p) {
        CHECK(v >= 0.0);
        total += v;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));

    std::vector<std::size_t> counts(5, 0);
    for (int i = 0; i < 5000; ++i) ++counts[rng.uniform_below(5)];
    for (std::size_t c : counts) CHECK(c > 800);
}

TEST_CASE("matvec helpers agree with naive loops") {
    RngStream rng(3, "matvec");
    const Matrix w = random_matrix(4, 6, rng);
    std::vector<double> x(6);
    for (double& v : x) v = rng.normal();

    std::vector<double> y;
    matvec(w, x, y);
    for (std::size_t r = 0; r < 4; ++r) {
        double expect = 0.0;
        for (std::size_t c = 0; c < 6; ++c) expect += w.at(r, c) * x[c];
        CHECK(y[r] == doctest::Approx(expect).epsilon(1e-12));
    }

    std::vector<double> z(6, 0.0);
    std::vector<double> up(4);
    for (double& v : up) v = rng.normal();
    matvec_transposed_add(w, up, z);
    for (std::size_t c = 0; c < 6; ++c) {
        double expect = 0.0;
        for (std::size_t r = 0; r < 4; ++r) expect += w.at(r, c) * up[r];
        CHECK(z[c] == doctest::Approx(expect).epsilon(1e-12));
    }

    CHECK_THROWS_AS(matvec(w, std::vector<double>(5), y), ShapeError);
}
