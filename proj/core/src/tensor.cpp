#include "fcdd/tensor.hpp"

#include <cmath>
#include <stdexcept>

namespace fcdd {

Tensor4::Tensor4(std::int64_t n_, std::int64_t c_, std::int64_t h_, std::int64_t w_, double fill)
    : n(n_), c(c_), h(h_), w(w_) {
    if (n < 0 || c < 0 || h < 0 || w < 0) {
        throw std::invalid_argument("Tensor4: negative dimension in " + dims_str());
    }
    values.assign(static_cast<std::size_t>(size()), fill);
}

std::string Tensor4::dims_str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
}

bool Tensor4::all_finite() const {
    for (double v : values) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void Tensor4::require_finite(const std::string& what) const {
    if (!all_finite()) {
        throw std::invalid_argument(what + ": tensor " + dims_str() + " contains NaN/Inf");
    }
}

double pairwise_sum(std::span<const double> values) {
    const std::size_t n = values.size();
    if (n == 0) return 0.0;
    if (n <= 8) {
        double acc = 0.0;
        for (double v : values) acc += v;
        return acc;
    }
    const std::size_t half = n / 2;
    return pairwise_sum(values.subspan(0, half)) + pairwise_sum(values.subspan(half));
}

}  // namespace fcdd
