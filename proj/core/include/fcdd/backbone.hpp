#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fcdd/layers.hpp"
#include "fcdd/tensor.hpp"

namespace fcdd {

// Layer descriptor before parameters exist. conv2d derives its input channel
// count from the chain; kernels are square.
struct LayerSpec {
    LayerKind kind = LayerKind::conv2d;
    std::int64_t out_channels = 0;
    std::int64_t kernel = 1;
    std::int64_t stride = 1;
    std::int64_t padding = 0;
    double alpha = 0.01;
};

struct BackboneSpec {
    std::string name;
    std::vector<LayerSpec> layers;
    std::int64_t in_channels = 3;
    std::int64_t input_h = 224;
    std::int64_t input_w = 224;

    // Built-in stacks. "cnn-desk" is the default 16/32/64 three-block net
    // (28x28 map from 224x224 input); "cnn-desk-s" halves the widths for
    // desk-scale runs.
    static BackboneSpec preset(const std::string& name);
    static std::vector<std::string> preset_names();
};

// Receptive-field geometry of one output cell, identical on both axes since
// all layers are square. center(i, j) = start + (i, j) * jump in input pixels.
struct FieldGeometry {
    std::int64_t jump = 1;
    std::int64_t extent = 1;
    double start = 0.0;
    std::int64_t out_h = 0;
    std::int64_t out_w = 0;
    std::int64_t in_h = 0;
    std::int64_t in_w = 0;

    double center_y(std::int64_t cell_y) const { return start + static_cast<double>(cell_y * jump); }
    double center_x(std::int64_t cell_x) const { return start + static_cast<double>(cell_x * jump); }
};

// Shape-checks the whole chain symbolically. Throws config_error naming the
// offending layer; returns the score-map dims (u, v).
std::pair<std::int64_t, std::int64_t> validate(const BackboneSpec& spec);

// Stride/kernel/padding composition for the geometry of the final map.
FieldGeometry receptive_field(const BackboneSpec& spec);

struct ForwardCache {
    // acts[i] is the input of layer i; acts.back() is the score map.
    std::vector<Tensor4> acts;
    // argmax per layer; empty unless the layer is a max_pool2d.
    std::vector<std::vector<std::int64_t>> argmax;
};

struct BackwardResult {
    Tensor4 input_grad;
    // Aligned with Backbone::params() ordering.
    std::vector<std::vector<double>> param_grads;
};

class Backbone {
public:
    // Parameters are He-uniform from the seed; same (spec, seed) gives
    // bit-identical blobs.
    static Backbone build(const BackboneSpec& spec, std::uint64_t seed);

    Tensor4 forward(const Tensor4& batch) const;
    Tensor4 forward(const Tensor4& batch, ForwardCache& cache) const;

    // Exact VJP through the whole chain. The cache must come from a forward
    // call on this instance; a mismatching cache is a contract violation.
    BackwardResult backward(const ForwardCache& cache, const Tensor4& upstream) const;

    struct ParamView {
        std::string name;
        std::vector<double>* data;
    };
    struct ConstParamView {
        std::string name;
        const std::vector<double>* data;
    };
    std::vector<ParamView> params();
    std::vector<ConstParamView> params() const;

    const BackboneSpec& spec() const { return spec_; }
    FieldGeometry geometry() const { return geometry_; }
    std::int64_t out_channels() const;

private:
    Backbone() = default;
    BackboneSpec spec_;
    std::vector<LayerParams> layers_;
    FieldGeometry geometry_;
};

}  // namespace fcdd
