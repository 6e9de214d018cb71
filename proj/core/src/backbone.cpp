#include "fcdd/backbone.hpp"

#include <cmath>
#include <stdexcept>

#include "fcdd/errors.hpp"
#include "fcdd/rng.hpp"

namespace fcdd {

namespace {

struct ChainShape {
    std::int64_t c, h, w;
};

ChainShape step_shape(const ChainShape& in, const LayerSpec& layer, std::size_t idx,
                      const std::string& name) {
    auto fail = [&](const std::string& why) {
        throw config_error("backbone '" + name + "' layer " + std::to_string(idx) + " (" +
                           to_string(layer.kind) + "): " + why);
    };
    switch (layer.kind) {
        case LayerKind::conv2d: {
            if (layer.out_channels < 1) fail("out_channels must be >= 1");
            if (layer.kernel < 1 || layer.stride < 1 || layer.padding < 0) fail("bad k/s/p");
            const std::int64_t oh = conv_out_dim(in.h, layer.kernel, layer.stride, layer.padding);
            const std::int64_t ow = conv_out_dim(in.w, layer.kernel, layer.stride, layer.padding);
            if (oh < 1 || ow < 1) {
                fail("output collapses to " + std::to_string(oh) + "x" + std::to_string(ow));
            }
            return {layer.out_channels, oh, ow};
        }
        case LayerKind::leaky_relu: {
            if (layer.alpha < 0.0 || layer.alpha >= 1.0) fail("alpha outside [0, 1)");
            return in;
        }
        case LayerKind::max_pool2d: {
            if (layer.kernel < 1 || layer.stride < 1) fail("bad k/s");
            if (layer.kernel > in.h || layer.kernel > in.w) {
                fail("window " + std::to_string(layer.kernel) + " larger than input " +
                     std::to_string(in.h) + "x" + std::to_string(in.w));
            }
            const std::int64_t oh = (in.h - layer.kernel) / layer.stride + 1;
            const std::int64_t ow = (in.w - layer.kernel) / layer.stride + 1;
            if (oh < 1 || ow < 1) fail("output collapses");
            return {in.c, oh, ow};
        }
    }
    fail("unknown layer kind");
    return in;  // unreachable
}

}  // namespace

BackboneSpec BackboneSpec::preset(const std::string& name) {
    auto conv = [](std::int64_t ch, std::int64_t k, std::int64_t s, std::int64_t p) {
        LayerSpec l;
        l.kind = LayerKind::conv2d;
        l.out_channels = ch;
        l.kernel = k;
        l.stride = s;
        l.padding = p;
        return l;
    };
    auto lrelu = [](double a) {
        LayerSpec l;
        l.kind = LayerKind::leaky_relu;
        l.alpha = a;
        return l;
    };
    auto pool = [](std::int64_t k, std::int64_t s) {
        LayerSpec l;
        l.kind = LayerKind::max_pool2d;
        l.kernel = k;
        l.stride = s;
        return l;
    };

    BackboneSpec spec;
    spec.name = name;
    if (name == "cnn-desk" || name == "cnn-desk-s") {
        const std::int64_t base = (name == "cnn-desk") ? 16 : 8;
        spec.layers = {conv(base, 3, 1, 1),     lrelu(0.01), pool(2, 2),
                       conv(base * 2, 3, 1, 1), lrelu(0.01), pool(2, 2),
                       conv(base * 4, 3, 1, 1), lrelu(0.01), pool(2, 2),
                       conv(1, 1, 1, 0)};
        return spec;
    }
    throw config_error("unknown backbone preset '" + name + "'");
}

std::vector<std::string> BackboneSpec::preset_names() { return {"cnn-desk", "cnn-desk-s"}; }

std::pair<std::int64_t, std::int64_t> validate(const BackboneSpec& spec) {
    if (spec.layers.empty()) throw config_error("backbone '" + spec.name + "': no layers");
    if (spec.in_channels < 1 || spec.input_h < 1 || spec.input_w < 1) {
        throw config_error("backbone '" + spec.name + "': bad input dims");
    }
    ChainShape shape{spec.in_channels, spec.input_h, spec.input_w};
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        shape = step_shape(shape, spec.layers[i], i, spec.name);
    }
    const LayerSpec& last = spec.layers.back();
    if (last.kind != LayerKind::conv2d || last.kernel != 1) {
        throw config_error("backbone '" + spec.name +
                           "': final layer must be a 1x1 conv score projection");
    }
    return {shape.h, shape.w};
}

FieldGeometry receptive_field(const BackboneSpec& spec) {
    const auto [u, v] = validate(spec);
    FieldGeometry g;
    g.out_h = u;
    g.out_w = v;
    g.in_h = spec.input_h;
    g.in_w = spec.input_w;
    double start = 0.0;
    std::int64_t jump = 1, extent = 1;
    for (const LayerSpec& layer : spec.layers) {
        if (layer.kind == LayerKind::leaky_relu) continue;
        const std::int64_t k = layer.kernel;
        const std::int64_t s = layer.stride;
        const std::int64_t p = (layer.kind == LayerKind::conv2d) ? layer.padding : 0;
        extent += (k - 1) * jump;
        start += (static_cast<double>(k - 1) / 2.0 - static_cast<double>(p)) *
                 static_cast<double>(jump);
        jump *= s;
    }
    g.jump = jump;
    g.extent = extent;
    g.start = start;
    return g;
}

Backbone Backbone::build(const BackboneSpec& spec, std::uint64_t seed) {
    validate(spec);
    Backbone net;
    net.spec_ = spec;
    net.geometry_ = receptive_field(spec);

    Rng rng(derive_seed(seed, 0x62616B6BULL));  // independent init stream
    std::int64_t in_c = spec.in_channels;
    for (const LayerSpec& ls : spec.layers) {
        LayerParams lp;
        lp.kind = ls.kind;
        lp.kernel = ls.kernel;
        lp.stride = ls.stride;
        lp.padding = ls.padding;
        lp.alpha = ls.alpha;
        if (ls.kind == LayerKind::conv2d) {
            lp.weights = Tensor4(ls.out_channels, in_c, ls.kernel, ls.kernel);
            const double fan_in = static_cast<double>(in_c * ls.kernel * ls.kernel);
            const double limit = std::sqrt(6.0 / fan_in);
            for (double& w : lp.weights.values) w = rng.uniform(-limit, limit);
            lp.bias.assign(static_cast<std::size_t>(ls.out_channels), 0.0);
            in_c = ls.out_channels;
        }
        net.layers_.push_back(std::move(lp));
    }
    return net;
}

std::int64_t Backbone::out_channels() const { return layers_.back().out_channels(); }

Tensor4 Backbone::forward(const Tensor4& batch) const {
    ForwardCache cache;
    return forward(batch, cache);
}

Tensor4 Backbone::forward(const Tensor4& batch, ForwardCache& cache) const {
    if (batch.h != spec_.input_h || batch.w != spec_.input_w || batch.c != spec_.in_channels) {
        throw std::invalid_argument("backbone forward: batch " + batch.dims_str() +
                                    " does not match spec input " +
                                    std::to_string(spec_.in_channels) + "x" +
                                    std::to_string(spec_.input_h) + "x" +
                                    std::to_string(spec_.input_w));
    }
    cache.acts.clear();
    cache.argmax.assign(layers_.size(), {});
    cache.acts.push_back(batch);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const LayerParams& lp = layers_[i];
        const Tensor4& x = cache.acts.back();
        switch (lp.kind) {
            case LayerKind::conv2d:
                cache.acts.push_back(conv2d_forward(x, lp));
                break;
            case LayerKind::leaky_relu:
                cache.acts.push_back(leaky_relu_forward(x, lp.alpha));
                break;
            case LayerKind::max_pool2d: {
                PoolResult pr = max_pool2d_forward(x, lp.kernel, lp.stride);
                cache.argmax[i] = std::move(pr.argmax);
                cache.acts.push_back(std::move(pr.output));
                break;
            }
        }
    }
    return cache.acts.back();
}

BackwardResult Backbone::backward(const ForwardCache& cache, const Tensor4& upstream) const {
    if (cache.acts.size() != layers_.size() + 1) {
        throw std::logic_error("backbone backward: forward cache missing or stale");
    }
    if (!upstream.same_dims(cache.acts.back())) {
        throw std::invalid_argument("backbone backward: upstream " + upstream.dims_str() +
                                    " vs score map " + cache.acts.back().dims_str());
    }

    BackwardResult result;
    // Two grad blobs (weight, bias) per conv layer, in params() order.
    std::vector<std::vector<double>> conv_wgrads(layers_.size());
    std::vector<std::vector<double>> conv_bgrads(layers_.size());

    Tensor4 grad = upstream;
    for (std::size_t ri = layers_.size(); ri-- > 0;) {
        const LayerParams& lp = layers_[ri];
        const Tensor4& x = cache.acts[ri];
        switch (lp.kind) {
            case LayerKind::conv2d: {
                ConvGrads g = conv2d_backward(x, lp, grad);
                conv_wgrads[ri] = std::move(g.weight_grad.values);
                conv_bgrads[ri] = std::move(g.bias_grad);
                grad = std::move(g.input_grad);
                break;
            }
            case LayerKind::leaky_relu:
                grad = leaky_relu_backward(x, lp.alpha, grad);
                break;
            case LayerKind::max_pool2d:
                grad = max_pool2d_backward(x, cache.argmax[ri], grad);
                break;
        }
    }
    result.input_grad = std::move(grad);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        if (layers_[i].kind == LayerKind::conv2d) {
            result.param_grads.push_back(std::move(conv_wgrads[i]));
            result.param_grads.push_back(std::move(conv_bgrads[i]));
        }
    }
    return result;
}

std::vector<Backbone::ParamView> Backbone::params() {
    std::vector<ParamView> views;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        if (layers_[i].kind != LayerKind::conv2d) continue;
        const std::string base = "layer" + std::to_string(i);
        views.push_back({base + ".weight", &layers_[i].weights.values});
        views.push_back({base + ".bias", &layers_[i].bias});
    }
    return views;
}

std::vector<Backbone::ConstParamView> Backbone::params() const {
    std::vector<ConstParamView> views;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        if (layers_[i].kind != LayerKind::conv2d) continue;
        const std::string base = "layer" + std::to_string(i);
        views.push_back({base + ".weight", &layers_[i].weights.values});
        views.push_back({base + ".bias", &layers_[i].bias});
    }
    return views;
}

}  // namespace fcdd
