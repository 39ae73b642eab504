#pragma once

#include <cstddef>
#include <vector>

namespace roda {

// Dense row-major matrix of doubles. Deliberately minimal: the numerics in
// this library are explicit loops, not matrix algebra.
struct Matrix {
    size_t rows = 0;
    size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(size_t r, size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& at(size_t i, size_t j) { return data[i * cols + j]; }
    double at(size_t i, size_t j) const { return data[i * cols + j]; }

    double* row(size_t i) { return data.data() + i * cols; }
    const double* row(size_t i) const { return data.data() + i * cols; }

    bool empty() const { return rows == 0 || cols == 0; }
};

}  // namespace roda
