#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace fcdd {

// Rank-4 dense tensor, row-major (n, c, h, w). The single carrier for image
// batches, feature maps and parameter grids. Values are double in all builds;
// stated tolerances assume 64-bit.
struct Tensor4 {
    std::int64_t n = 0, c = 0, h = 0, w = 0;
    std::vector<double> values;

    Tensor4() = default;
    Tensor4(std::int64_t n_, std::int64_t c_, std::int64_t h_, std::int64_t w_,
            double fill = 0.0);

    std::int64_t size() const { return n * c * h * w; }

    std::int64_t index(std::int64_t in, std::int64_t ic, std::int64_t iy, std::int64_t ix) const {
        return ((in * c + ic) * h + iy) * w + ix;
    }

    double& at(std::int64_t in, std::int64_t ic, std::int64_t iy, std::int64_t ix) {
        return values[static_cast<std::size_t>(index(in, ic, iy, ix))];
    }
    double at(std::int64_t in, std::int64_t ic, std::int64_t iy, std::int64_t ix) const {
        return values[static_cast<std::size_t>(index(in, ic, iy, ix))];
    }

    bool same_dims(const Tensor4& other) const {
        return n == other.n && c == other.c && h == other.h && w == other.w;
    }

    std::string dims_str() const;

    bool all_finite() const;

    // Throws std::invalid_argument naming `what` when a value is NaN/Inf.
    void require_finite(const std::string& what) const;
};

// Fixed-order pairwise tree reduction. Used wherever a reproducible sum is
// required (image scores, loss means, gradient reductions).
double pairwise_sum(std::span<const double> values);

}  // namespace fcdd
