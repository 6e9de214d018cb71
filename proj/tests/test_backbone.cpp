#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "fcdd/backbone.hpp"
#include "fcdd/errors.hpp"
#include "fcdd/rng.hpp"

using namespace fcdd;

namespace {

LayerSpec conv(std::int64_t out_c, std::int64_t k, std::int64_t s, std::int64_t p) {
    LayerSpec l;
    l.kind = LayerKind::conv2d;
    l.out_channels = out_c;
    l.kernel = k;
    l.stride = s;
    l.padding = p;
    return l;
}

LayerSpec lrelu(double alpha) {
    LayerSpec l;
    l.kind = LayerKind::leaky_relu;
    l.alpha = alpha;
    return l;
}

LayerSpec pool(std::int64_t k, std::int64_t s) {
    LayerSpec l;
    l.kind = LayerKind::max_pool2d;
    l.kernel = k;
    l.stride = s;
    return l;
}

BackboneSpec tiny_spec(std::int64_t in_h, std::int64_t in_w) {
    BackboneSpec spec;
    spec.name = "tiny";
    spec.in_channels = 3;
    spec.input_h = in_h;
    spec.input_w = in_w;
    spec.layers = {conv(4, 3, 1, 1), lrelu(0.01), pool(2, 2), conv(1, 1, 1, 0)};
    return spec;
}

Tensor4 random_batch(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w,
                     Rng& rng) {
    Tensor4 t(n, c, h, w);
    for (double& v : t.values) v = rng.uniform(0.0, 1.0);
    return t;
}

// Output cells whose value moves when one input pixel is bumped, collected
// over every channel of a single-image batch.
std::vector<std::pair<std::int64_t, std::int64_t>> changed_cells(
    const Backbone& net, const Tensor4& base_out, Tensor4 image, std::int64_t py,
    std::int64_t px, double bump) {
    for (std::int64_t ic = 0; ic < image.c; ++ic) image.at(0, ic, py, px) += bump;
    const Tensor4 out = net.forward(image);
    std::vector<std::pair<std::int64_t, std::int64_t>> cells;
    for (std::int64_t y = 0; y < out.h; ++y)
        for (std::int64_t x = 0; x < out.w; ++x) {
            bool moved = false;
            for (std::int64_t oc = 0; oc < out.c; ++oc) {
                if (std::abs(out.at(0, oc, y, x) - base_out.at(0, oc, y, x)) > 1e-9) {
                    moved = true;
                }
            }
            if (moved) cells.emplace_back(y, x);
        }
    return cells;
}

}  // namespace

TEST_CASE("single 1x1 conv keeps the spatial grid and identity geometry") {
    BackboneSpec spec;
    spec.name = "one";
    spec.in_channels = 3;
    spec.input_h = 8;
    spec.input_w = 8;
    spec.layers = {conv(1, 1, 1, 0)};
    const auto [u, v] = validate(spec);
    CHECK(u == 8);
    CHECK(v == 8);
    const FieldGeometry g = receptive_field(spec);
    CHECK(g.jump == 1);
    CHECK(g.extent == 1);
    CHECK(g.start == 0.0);
    CHECK(g.in_h == 8);
    CHECK(g.in_w == 8);
}

TEST_CASE("3x3 stride-1 pad-1 conv is center-aligned") {
    BackboneSpec spec;
    spec.name = "centered";
    spec.in_channels = 1;
    spec.input_h = 10;
    spec.input_w = 10;
    spec.layers = {conv(2, 3, 1, 1), conv(1, 1, 1, 0)};
    const FieldGeometry g = receptive_field(spec);
    CHECK(g.jump == 1);
    CHECK(g.extent == 3);
    CHECK(g.start == 0.0);
    CHECK(g.center_y(4) == 4.0);
}

TEST_CASE("cnn-desk maps 224x224 to a 28x28 grid") {
    BackboneSpec spec = BackboneSpec::preset("cnn-desk");
    const auto [u, v] = validate(spec);
    CHECK(u == 28);
    CHECK(v == 28);
    const FieldGeometry g = receptive_field(spec);
    CHECK(g.jump == 8);
    CHECK(g.extent == 22);
    CHECK(g.start == doctest::Approx(3.5));
    // Every field center stays inside the input.
    CHECK(g.center_y(0) >= 0.0);
    CHECK(g.center_y(27) < 224.0);
}

TEST_CASE("cnn-desk-s shares the geometry at half the width") {
    BackboneSpec spec = BackboneSpec::preset("cnn-desk-s");
    spec.input_h = 64;
    spec.input_w = 64;
    const auto [u, v] = validate(spec);
    CHECK(u == 8);
    CHECK(v == 8);
    CHECK(receptive_field(spec).jump == 8);
}

TEST_CASE("unknown preset and inadmissible chains are config errors") {
    CHECK_THROWS_AS(BackboneSpec::preset("vgg16"), config_error);

    BackboneSpec shrunk;
    shrunk.name = "shrunk";
    shrunk.input_h = 4;
    shrunk.input_w = 4;
    // Two stride-4 pools annihilate a 4x4 input; the error names the layer.
    shrunk.layers = {pool(4, 4), pool(4, 4), conv(1, 1, 1, 0)};
    CHECK_THROWS_WITH_AS(validate(shrunk), doctest::Contains("layer 1"), config_error);

    BackboneSpec no_proj = tiny_spec(8, 8);
    no_proj.layers.pop_back();
    CHECK_THROWS_AS(validate(no_proj), config_error);
}

TEST_CASE("build is deterministic per seed") {
    const BackboneSpec spec = tiny_spec(8, 8);
    Backbone a = Backbone::build(spec, 42);
    Backbone b = Backbone::build(spec, 42);
    Backbone c = Backbone::build(spec, 43);

    const auto pa = a.params();
    const auto pb = b.params();
    const auto pc = c.params();
    REQUIRE(pa.size() == pb.size());
    bool any_diff_seed43 = false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].name == pb[i].name);
        CHECK(*pa[i].data == *pb[i].data);
        if (*pa[i].data != *pc[i].data) any_diff_seed43 = true;
    }
    CHECK(any_diff_seed43);
}

TEST_CASE("zeroed final projection gives an all-zero score map") {
    Backbone net = Backbone::build(tiny_spec(8, 8), 7);
    auto views = net.params();
    // The projection is the last conv; its blobs sit at the tail of params().
    views[views.size() - 2].data->assign(views[views.size() - 2].data->size(), 0.0);
    views[views.size() - 1].data->assign(views[views.size() - 1].data->size(), 0.0);
    Rng rng(71);
    const Tensor4 out = net.forward(random_batch(2, 3, 8, 8, rng));
    for (double v : out.values) CHECK(v == 0.0);
}

TEST_CASE("forward is batch-independent") {
    Backbone net = Backbone::build(tiny_spec(8, 8), 9);
    Rng rng(91);
    const Tensor4 single = random_batch(1, 3, 8, 8, rng);
    Tensor4 batch(2, 3, 8, 8);
    for (std::int64_t i = 0; i < single.size(); ++i) {
        batch.values[static_cast<std::size_t>(i)] = single.values[static_cast<std::size_t>(i)];
        batch.values[static_cast<std::size_t>(single.size() + i)] = rng.uniform(0.0, 1.0);
    }
    const Tensor4 one = net.forward(single);
    const Tensor4 two = net.forward(batch);
    for (std::int64_t i = 0; i < one.size(); ++i) {
        CHECK(one.values[static_cast<std::size_t>(i)] ==
              doctest::Approx(two.values[static_cast<std::size_t>(i)]).epsilon(1e-12));
    }
}

TEST_CASE("identical images in a batch produce identical maps") {
    Backbone net = Backbone::build(tiny_spec(8, 8), 10);
    Rng rng(101);
    const Tensor4 single = random_batch(1, 3, 8, 8, rng);
    Tensor4 batch(2, 3, 8, 8);
    for (std::int64_t i = 0; i < single.size(); ++i) {
        batch.values[static_cast<std::size_t>(i)] = single.values[static_cast<std::size_t>(i)];
        batch.values[static_cast<std::size_t>(single.size() + i)] =
            single.values[static_cast<std::size_t>(i)];
    }
    const Tensor4 out = net.forward(batch);
    const std::size_t per = out.values.size() / 2;
    for (std::size_t i = 0; i < per; ++i) {
        CHECK(out.values[i] == out.values[per + i]);
    }
}

TEST_CASE("forward rejects wrong input size") {
    Backbone net = Backbone::build(tiny_spec(8, 8), 11);
    Tensor4 wrong(1, 3, 9, 9, 0.0);
    CHECK_THROWS_AS(net.forward(wrong), std::invalid_argument);
}

// Monotone construction: all-positive conv weights and a positive leaky slope
// make a big positive pixel bump propagate to exactly the cells whose
// receptive-field box contains the pixel, including through max pooling.
TEST_CASE("conv+pool field centers match the perturbation oracle exactly") {
    BackboneSpec spec;
    spec.name = "probe";
    spec.in_channels = 3;
    spec.input_h = 16;
    spec.input_w = 16;
    spec.layers = {conv(2, 3, 2, 1), lrelu(0.5), pool(2, 2), conv(1, 1, 1, 0)};
    const FieldGeometry g = receptive_field(spec);
    CHECK(g.jump == 4);
    CHECK(g.extent == 5);
    CHECK(g.start == doctest::Approx(1.0));

    Backbone net = Backbone::build(spec, 5);
    for (auto& view : net.params()) {
        for (double& w : *view.data) w = std::abs(w) + 0.1;
    }
    Rng rng(55);
    const Tensor4 image = random_batch(1, 3, 16, 16, rng);
    const Tensor4 base = net.forward(image);

    const double half = static_cast<double>(g.extent - 1) / 2.0;
    for (const auto [py, px] : {std::pair<std::int64_t, std::int64_t>{0, 0},
                                {3, 7},
                                {8, 8},
                                {15, 15},
                                {5, 12}}) {
        const auto cells = changed_cells(net, base, image, py, px, 1e3);
        std::vector<std::pair<std::int64_t, std::int64_t>> expected;
        for (std::int64_t y = 0; y < g.out_h; ++y)
            for (std::int64_t x = 0; x < g.out_w; ++x) {
                if (std::abs(static_cast<double>(py) - g.center_y(y)) <= half &&
                    std::abs(static_cast<double>(px) - g.center_x(x)) <= half) {
                    expected.emplace_back(y, x);
                }
            }
        CHECK(cells == expected);
    }
}

// With ordinary signed weights cancellation can hide in-box influence, but a
// change outside the analytic box is impossible.
TEST_CASE("random specs never leak influence outside the field box") {
    Rng rng(66);
    int tried = 0;
    for (int attempt = 0; attempt < 200 && tried < 10; ++attempt) {
        BackboneSpec spec;
        spec.name = "rand";
        spec.in_channels = 1 + rng.uniform_int(0, 2);
        spec.input_h = 12 + 2 * rng.uniform_int(0, 10);
        spec.input_w = 12 + 2 * rng.uniform_int(0, 10);
        const auto n_mid = rng.uniform_int(0, 3);
        for (std::int64_t i = 0; i < n_mid; ++i) {
            switch (rng.uniform_int(0, 2)) {
                case 0: {
                    const std::int64_t k = 1 + 2 * rng.uniform_int(0, 2);
                    spec.layers.push_back(conv(1 + rng.uniform_int(0, 3), k,
                                               1 + rng.uniform_int(0, 1),
                                               rng.uniform_int(0, (k - 1) / 2)));
                    break;
                }
                case 1:
                    spec.layers.push_back(lrelu(0.1));
                    break;
                default:
                    spec.layers.push_back(pool(2, 2));
            }
        }
        spec.layers.push_back(conv(1, 1, 1, 0));
        try {
            validate(spec);
        } catch (const config_error&) {
            continue;
        }
        ++tried;

        const FieldGeometry g = receptive_field(spec);
        Backbone net = Backbone::build(spec, static_cast<std::uint64_t>(attempt));
        Tensor4 image(1, spec.in_channels, spec.input_h, spec.input_w);
        for (double& v : image.values) v = rng.uniform(0.0, 1.0);
        const Tensor4 base = net.forward(image);

        const double half = static_cast<double>(g.extent - 1) / 2.0;
        for (int probe = 0; probe < 4; ++probe) {
            const std::int64_t py = rng.uniform_int(0, spec.input_h - 1);
            const std::int64_t px = rng.uniform_int(0, spec.input_w - 1);
            for (const auto [y, x] : changed_cells(net, base, image, py, px, 100.0)) {
                CHECK(std::abs(static_cast<double>(py) - g.center_y(y)) <= half);
                CHECK(std::abs(static_cast<double>(px) - g.center_x(x)) <= half);
            }
        }
    }
    CHECK(tried == 10);
}

TEST_CASE("padding-free stacks are translation covariant at the jump scale") {
    BackboneSpec spec;
    spec.name = "shift";
    spec.in_channels = 1;
    spec.input_h = 17;
    spec.input_w = 17;
    spec.layers = {conv(2, 3, 2, 0), lrelu(0.01), conv(1, 1, 1, 0)};
    const FieldGeometry g = receptive_field(spec);
    REQUIRE(g.jump == 2);

    Backbone net = Backbone::build(spec, 3);
    Rng rng(33);
    Tensor4 image(1, 1, 17, 17);
    for (double& v : image.values) v = rng.uniform(0.0, 1.0);

    Tensor4 shifted(1, 1, 17, 17, 0.0);
    for (std::int64_t y = 0; y + g.jump < 17; ++y)
        for (std::int64_t x = 0; x < 17; ++x) {
            shifted.at(0, 0, y + g.jump, x) = image.at(0, 0, y, x);
        }

    const Tensor4 a = net.forward(image);
    const Tensor4 b = net.forward(shifted);
    for (std::int64_t y = 0; y + 1 < a.h; ++y)
        for (std::int64_t x = 0; x < a.w; ++x) {
            CHECK(b.at(0, 0, y + 1, x) == doctest::Approx(a.at(0, 0, y, x)).epsilon(1e-10));
        }
}
