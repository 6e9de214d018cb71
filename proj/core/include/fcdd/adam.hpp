#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace fcdd {

// Adam with bias correction. One state per parameter blob; m/v always match
// the blob length and step strictly increases by one per update.
struct AdamState {
    std::int64_t step = 0;
    std::vector<double> m;
    std::vector<double> v;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.99;
    double epsilon = 1e-8;

    static AdamState make(std::size_t n, double lr, double beta1, double beta2,
                          double epsilon = 1e-8);
};

// In-place update. Throws std::invalid_argument on shape mismatch.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state);

}  // namespace fcdd
