#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fcdd/tensor.hpp"

namespace fcdd {

enum class LayerKind { conv2d, leaky_relu, max_pool2d };

std::string to_string(LayerKind kind);

// One layer of the fixed zoo {conv2d, leaky_relu, max_pool2d}.
// conv2d weights are (out_c, in_c, k, k); bias has out_c entries.
struct LayerParams {
    LayerKind kind = LayerKind::conv2d;
    std::int64_t kernel = 1;
    std::int64_t stride = 1;
    std::int64_t padding = 0;
    double alpha = 0.01;  // leaky_relu slope, in [0, 1)
    Tensor4 weights;
    std::vector<double> bias;

    std::int64_t out_channels() const { return weights.n; }
    std::int64_t in_channels() const { return weights.c; }
};

inline std::int64_t conv_out_dim(std::int64_t in, std::int64_t kernel, std::int64_t stride,
                                 std::int64_t padding) {
    return (in + 2 * padding - kernel) / stride + 1;
}

// Cross-correlation with bias. Throws std::invalid_argument on channel or
// geometry mismatch, naming the offending dims.
Tensor4 conv2d_forward(const Tensor4& input, const LayerParams& params);

// Elementwise x >= 0 ? x : alpha*x. alpha must be in [0, 1).
Tensor4 leaky_relu_forward(const Tensor4& input, double alpha);

struct PoolResult {
    Tensor4 output;
    // Flat index into the input values of each window maximum; ties go to the
    // lowest flat index so backward routing is deterministic.
    std::vector<std::int64_t> argmax;
};

PoolResult max_pool2d_forward(const Tensor4& input, std::int64_t kernel, std::int64_t stride);

struct ConvGrads {
    Tensor4 input_grad;
    Tensor4 weight_grad;
    std::vector<double> bias_grad;
};

// Exact vector-Jacobian products. `input` is the tensor given to the matching
// forward call; upstream dims must equal that call's output dims.
ConvGrads conv2d_backward(const Tensor4& input, const LayerParams& params,
                          const Tensor4& upstream);

Tensor4 leaky_relu_backward(const Tensor4& input, double alpha, const Tensor4& upstream);

Tensor4 max_pool2d_backward(const Tensor4& input, const std::vector<std::int64_t>& argmax,
                            const Tensor4& upstream);

}  // namespace fcdd
