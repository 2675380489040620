#pragma once

#include <cstddef>
#include <vector>

namespace fedlora {

// Dense row-major matrix of doubles. Carrier for base weights, low-rank
// factors, activations, and distance/weight matrices.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;  // rows * cols, row-major

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    static Matrix zeros(std::size_t r, std::size_t c) { return Matrix(r, c); }

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    double* row_ptr(std::size_t r) { return data.data() + r * cols; }
    const double* row_ptr(std::size_t r) const { return data.data() + r * cols; }

    std::size_t size() const { return data.size(); }

    bool same_shape(const Matrix& other) const {
        return rows == other.rows && cols == other.cols;
    }

    bool operator==(const Matrix& other) const = default;
};

// sqrt(sum of squared entrywise differences). Throws ShapeError on shape
// mismatch. Zero iff the matrices are elementwise equal.
double frob_distance(const Matrix& m1, const Matrix& m2);

bool all_finite(const Matrix& m);
bool all_finite(const std::vector<double>& v);

// y = W x  (W.rows results, each a dot over a contiguous row)
void matvec(const Matrix& w, const std::vector<double>& x, std::vector<double>& y);

// y += W^T x  (accumulated row by row so every pass is a contiguous axpy)
void matvec_transposed_add(const Matrix& w, const std::vector<double>& x,
                           std::vector<double>& y);

// m.row(i) += s[i] * v for every row: rank-1 accumulate m += s v^T.
void add_outer(Matrix& m, const std::vector<double>& s, const std::vector<double>& v);

}  // namespace fedlora
