#pragma once

#include <cstddef>
#include <vector>

#include "roda/matrix.hpp"

namespace roda::alignment {

// Per-channel affine transform on patch features: out = scale * x + shift.
// Stand-in for batchnorm affine parameters; same shape (2 x D), same role.
struct AffineAdapter {
    std::vector<double> scale;  // init 1
    std::vector<double> shift;  // init 0

    AffineAdapter() = default;
    explicit AffineAdapter(size_t dim)
        : scale(dim, 1.0), shift(dim, 0.0) {}

    static AffineAdapter identity(size_t dim) { return AffineAdapter(dim); }

    size_t dim() const { return scale.size(); }

    void apply_row(const double* in, double* out) const {
        for (size_t c = 0; c < scale.size(); ++c) out[c] = scale[c] * in[c] + shift[c];
    }
};

// out[i] = scale * patches[i] + shift, elementwise per channel.
Matrix apply_adapter(const AffineAdapter& adapter, const Matrix& patches);

}  // namespace roda::alignment
