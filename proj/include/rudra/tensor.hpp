#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "rudra/errors.hpp"

namespace rudra {

using Vector = std::vector<double>;

/// Dense row-major matrix of 64-bit floats. Plain value type; all
/// operations on it are free functions returning fresh values.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    Vector data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}
    Matrix(std::size_t r, std::size_t c, Vector values)
        : rows(r), cols(c), data(std::move(values)) {
        if (data.size() != rows * cols)
            throw ShapeError("Matrix: data length " + std::to_string(data.size()) +
                             " != " + std::to_string(rows) + "x" + std::to_string(cols));
    }

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
        return m;
    }
};

/// Matrix product with a fixed i-k-j loop order. For each output element the
/// partial sums accumulate over k in ascending order, which is the same
/// per-element summation order as the naive i-j-k triple loop, so results are
/// bit-identical to that oracle.
inline Matrix gemm(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows)
        throw ShapeError("gemm: inner dimensions " + std::to_string(a.cols) +
                         " and " + std::to_string(b.rows) + " differ");
    Matrix c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* arow = &a.data[i * a.cols];
        double* crow = &c.data[i * b.cols];
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = arow[k];
            const double* brow = &b.data[k * b.cols];
            for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
        }
    }
    return c;
}

/// y + alpha * x, elementwise.
inline Vector saxpy(double alpha, const Vector& x, const Vector& y) {
    if (x.size() != y.size())
        throw ShapeError("saxpy: lengths " + std::to_string(x.size()) + " and " +
                         std::to_string(y.size()) + " differ");
    Vector out(y);
    for (std::size_t i = 0; i < x.size(); ++i) out[i] += alpha * x[i];
    return out;
}

inline bool all_finite(const Vector& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

}  // namespace rudra
