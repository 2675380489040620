#include "fedlora/matrix.hpp"

#include <cmath>

#include "fedlora/errors.hpp"
#include "fedlora/kernels.hpp"

namespace fedlora {

double frob_distance(const Matrix& m1, const Matrix& m2) {
    if (!m1.same_shape(m2)) {
        throw ShapeError("frob_distance: shape mismatch (" +
                         std::to_string(m1.rows) + "x" + std::to_string(m1.cols) +
                         " vs " + std::to_string(m2.rows) + "x" +
                         std::to_string(m2.cols) + ")");
    }
    return std::sqrt(kernels::squared_distance(m1.data.data(), m2.data.data(),
                                               m1.data.size()));
}

bool all_finite(const Matrix& m) { return all_finite(m.data); }

bool all_finite(const std::vector<double>& v) {
    for (double x : v) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

void matvec(const Matrix& w, const std::vector<double>& x, std::vector<double>& y) {
    if (x.size() != w.cols) {
        throw ShapeError("matvec: vector length " + std::to_string(x.size()) +
                         " does not match " + std::to_string(w.rows) + "x" +
                         std::to_string(w.cols) + " matrix");
    }
    y.assign(w.rows, 0.0);
    for (std::size_t r = 0; r < w.rows; ++r) {
        y[r] = kernels::dot(w.row_ptr(r), x.data(), w.cols);
    }
}

void matvec_transposed_add(const Matrix& w, const std::vector<double>& x,
                           std::vector<double>& y) {
    if (x.size() != w.rows || y.size() != w.cols) {
        throw ShapeError("matvec_transposed_add: shape mismatch");
    }
    for (std::size_t r = 0; r < w.rows; ++r) {
        kernels::axpy(x[r], w.row_ptr(r), y.data(), w.cols);
    }
}

void add_outer(Matrix& m, const std::vector<double>& s, const std::vector<double>& v) {
    if (s.size() != m.rows || v.size() != m.cols) {
        throw ShapeError("add_outer: shape mismatch");
    }
    for (std::size_t r = 0; r < m.rows; ++r) {
        kernels::axpy(s[r], v.data(), m.row_ptr(r), m.cols);
    }
}

}  // namespace fedlora
