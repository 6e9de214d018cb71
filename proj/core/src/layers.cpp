#include "fcdd/layers.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace fcdd {

namespace {

// Valid output range [begin, end) for which iy = oy*stride - padding + k_off
// stays inside [0, in_dim).
struct OutRange {
    std::int64_t begin, end;
};

OutRange valid_out_range(std::int64_t out_dim, std::int64_t in_dim, std::int64_t stride,
                         std::int64_t padding, std::int64_t k_off) {
    const std::int64_t shift = k_off - padding;
    // oy*stride + shift >= 0  ->  oy >= ceil(-shift / stride)
    std::int64_t begin = shift >= 0 ? 0 : (-shift + stride - 1) / stride;
    // oy*stride + shift <= in_dim-1  ->  oy <= floor((in_dim-1-shift) / stride)
    std::int64_t last = in_dim - 1 - shift;
    std::int64_t end = last < 0 ? 0 : last / stride + 1;
    begin = std::min(begin, out_dim);
    end = std::clamp(end, begin, out_dim);
    return {begin, end};
}

void check_conv_args(const Tensor4& input, const LayerParams& params) {
    if (params.kind != LayerKind::conv2d) {
        throw std::invalid_argument("conv2d: layer kind is " + to_string(params.kind));
    }
    if (params.kernel < 1 || params.stride < 1 || params.padding < 0) {
        throw std::invalid_argument("conv2d: bad hyper k=" + std::to_string(params.kernel) +
                                    " s=" + std::to_string(params.stride) +
                                    " p=" + std::to_string(params.padding));
    }
    const Tensor4& w = params.weights;
    if (w.h != params.kernel || w.w != params.kernel) {
        throw std::invalid_argument("conv2d: weight dims " + w.dims_str() + " disagree with k=" +
                                    std::to_string(params.kernel));
    }
    if (input.c != w.c) {
        throw std::invalid_argument("conv2d: input channels " + input.dims_str() +
                                    " vs weights " + w.dims_str());
    }
    if (static_cast<std::int64_t>(params.bias.size()) != w.n) {
        throw std::invalid_argument("conv2d: bias size " + std::to_string(params.bias.size()) +
                                    " vs out channels " + std::to_string(w.n));
    }
    if (conv_out_dim(input.h, params.kernel, params.stride, params.padding) < 1 ||
        conv_out_dim(input.w, params.kernel, params.stride, params.padding) < 1) {
        throw std::invalid_argument("conv2d: empty output for input " + input.dims_str() +
                                    " with k=" + std::to_string(params.kernel));
    }
}

}  // namespace

std::string to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::conv2d: return "conv2d";
        case LayerKind::leaky_relu: return "leaky_relu";
        case LayerKind::max_pool2d: return "max_pool2d";
    }
    return "?";
}

Tensor4 conv2d_forward(const Tensor4& input, const LayerParams& params) {
    check_conv_args(input, params);
    const std::int64_t k = params.kernel, s = params.stride, p = params.padding;
    const std::int64_t oc_n = params.weights.n, ic_n = input.c;
    const std::int64_t oh = conv_out_dim(input.h, k, s, p);
    const std::int64_t ow = conv_out_dim(input.w, k, s, p);
    Tensor4 out(input.n, oc_n, oh, ow);

    for (std::int64_t in = 0; in < input.n; ++in) {
        for (std::int64_t oc = 0; oc < oc_n; ++oc) {
            double* out_plane = out.values.data() + out.index(in, oc, 0, 0);
            const double b = params.bias[static_cast<std::size_t>(oc)];
            std::fill(out_plane, out_plane + oh * ow, b);
            for (std::int64_t ic = 0; ic < ic_n; ++ic) {
                const double* in_plane = input.values.data() + input.index(in, ic, 0, 0);
                const double* w_plane =
                    params.weights.values.data() + params.weights.index(oc, ic, 0, 0);
                for (std::int64_t ky = 0; ky < k; ++ky) {
                    const auto ry = valid_out_range(oh, input.h, s, p, ky);
                    for (std::int64_t kx = 0; kx < k; ++kx) {
                        const double wv = w_plane[ky * k + kx];
                        if (wv == 0.0) continue;
                        const auto rx = valid_out_range(ow, input.w, s, p, kx);
                        for (std::int64_t oy = ry.begin; oy < ry.end; ++oy) {
                            const std::int64_t iy = oy * s - p + ky;
                            const double* in_row = in_plane + iy * input.w - p + kx;
                            double* out_row = out_plane + oy * ow;
                            for (std::int64_t ox = rx.begin; ox < rx.end; ++ox) {
                                out_row[ox] += wv * in_row[ox * s];
                            }
                        }
                    }
                }
            }
        }
    }
    return out;
}

Tensor4 leaky_relu_forward(const Tensor4& input, double alpha) {
    if (alpha < 0.0 || alpha >= 1.0) {
        throw std::invalid_argument("leaky_relu: alpha " + std::to_string(alpha) +
                                    " outside [0, 1)");
    }
    Tensor4 out = input;
    for (double& v : out.values) {
        if (v < 0.0) v *= alpha;
    }
    return out;
}

PoolResult max_pool2d_forward(const Tensor4& input, std::int64_t kernel, std::int64_t stride) {
    if (kernel < 1 || stride < 1) {
        throw std::invalid_argument("max_pool2d: bad hyper k=" + std::to_string(kernel) +
                                    " s=" + std::to_string(stride));
    }
    if (kernel > input.h || kernel > input.w) {
        throw std::invalid_argument("max_pool2d: window " + std::to_string(kernel) +
                                    " larger than input " + input.dims_str());
    }
    const std::int64_t oh = (input.h - kernel) / stride + 1;
    const std::int64_t ow = (input.w - kernel) / stride + 1;
    PoolResult res{Tensor4(input.n, input.c, oh, ow), {}};
    res.argmax.assign(static_cast<std::size_t>(res.output.size()), -1);

    std::int64_t out_idx = 0;
    for (std::int64_t in = 0; in < input.n; ++in) {
        for (std::int64_t ic = 0; ic < input.c; ++ic) {
            const double* plane = input.values.data() + input.index(in, ic, 0, 0);
            const std::int64_t plane_off = input.index(in, ic, 0, 0);
            for (std::int64_t oy = 0; oy < oh; ++oy) {
                for (std::int64_t ox = 0; ox < ow; ++ox, ++out_idx) {
                    double best = -std::numeric_limits<double>::infinity();
                    std::int64_t best_idx = -1;
                    for (std::int64_t ky = 0; ky < kernel; ++ky) {
                        const std::int64_t iy = oy * stride + ky;
                        for (std::int64_t kx = 0; kx < kernel; ++kx) {
                            const std::int64_t ix = ox * stride + kx;
                            const double v = plane[iy * input.w + ix];
                            if (v > best) {  // strict: ties keep the lowest flat index
                                best = v;
                                best_idx = plane_off + iy * input.w + ix;
                            }
                        }
                    }
                    res.output.values[static_cast<std::size_t>(out_idx)] = best;
                    res.argmax[static_cast<std::size_t>(out_idx)] = best_idx;
                }
            }
        }
    }
    return res;
}

ConvGrads conv2d_backward(const Tensor4& input, const LayerParams& params,
                          const Tensor4& upstream) {
    check_conv_args(input, params);
    const std::int64_t k = params.kernel, s = params.stride, p = params.padding;
    const std::int64_t oh = conv_out_dim(input.h, k, s, p);
    const std::int64_t ow = conv_out_dim(input.w, k, s, p);
    if (upstream.n != input.n || upstream.c != params.weights.n || upstream.h != oh ||
        upstream.w != ow) {
        throw std::invalid_argument("conv2d backward: upstream " + upstream.dims_str() +
                                    " does not match forward output");
    }

    ConvGrads g{Tensor4(input.n, input.c, input.h, input.w),
                Tensor4(params.weights.n, params.weights.c, k, k),
                std::vector<double>(params.bias.size(), 0.0)};

    for (std::int64_t in = 0; in < input.n; ++in) {
        for (std::int64_t oc = 0; oc < params.weights.n; ++oc) {
            const double* up_plane = upstream.values.data() + upstream.index(in, oc, 0, 0);
            double acc = 0.0;
            for (std::int64_t i = 0; i < oh * ow; ++i) acc += up_plane[i];
            g.bias_grad[static_cast<std::size_t>(oc)] += acc;

            for (std::int64_t ic = 0; ic < input.c; ++ic) {
                const double* in_plane = input.values.data() + input.index(in, ic, 0, 0);
                double* gin_plane = g.input_grad.values.data() + g.input_grad.index(in, ic, 0, 0);
                const double* w_plane =
                    params.weights.values.data() + params.weights.index(oc, ic, 0, 0);
                double* gw_plane =
                    g.weight_grad.values.data() + g.weight_grad.index(oc, ic, 0, 0);
                for (std::int64_t ky = 0; ky < k; ++ky) {
                    const auto ry = valid_out_range(oh, input.h, s, p, ky);
                    for (std::int64_t kx = 0; kx < k; ++kx) {
                        const auto rx = valid_out_range(ow, input.w, s, p, kx);
                        const double wv = w_plane[ky * k + kx];
                        double gw = 0.0;
                        for (std::int64_t oy = ry.begin; oy < ry.end; ++oy) {
                            const std::int64_t iy = oy * s - p + ky;
                            const double* in_row = in_plane + iy * input.w - p + kx;
                            double* gin_row = gin_plane + iy * input.w - p + kx;
                            const double* up_row = up_plane + oy * ow;
                            for (std::int64_t ox = rx.begin; ox < rx.end; ++ox) {
                                const double u = up_row[ox];
                                gw += u * in_row[ox * s];
                                gin_row[ox * s] += u * wv;
                            }
                        }
                        gw_plane[ky * k + kx] += gw;
                    }
                }
            }
        }
    }
    return g;
}

Tensor4 leaky_relu_backward(const Tensor4& input, double alpha, const Tensor4& upstream) {
    if (!input.same_dims(upstream)) {
        throw std::invalid_argument("leaky_relu backward: upstream " + upstream.dims_str() +
                                    " vs input " + input.dims_str());
    }
    Tensor4 grad = upstream;
    for (std::size_t i = 0; i < grad.values.size(); ++i) {
        if (input.values[i] < 0.0) grad.values[i] *= alpha;
    }
    return grad;
}

Tensor4 max_pool2d_backward(const Tensor4& input, const std::vector<std::int64_t>& argmax,
                            const Tensor4& upstream) {
    if (argmax.size() != upstream.values.size()) {
        throw std::invalid_argument("max_pool2d backward: argmax size " +
                                    std::to_string(argmax.size()) + " vs upstream " +
                                    upstream.dims_str());
    }
    Tensor4 grad(input.n, input.c, input.h, input.w);
    for (std::size_t i = 0; i < argmax.size(); ++i) {
        grad.values[static_cast<std::size_t>(argmax[i])] += upstream.values[i];
    }
    return grad;
}

}  // namespace fcdd
