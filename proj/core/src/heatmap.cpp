#include "fcdd/heatmap.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "fcdd/errors.hpp"

namespace fcdd {

double gaussian2d(double a1, double a2, double delta, double x, double y) {
    if (!(delta > 0.0)) throw std::invalid_argument("gaussian2d: delta must be > 0");
    const double dx = x - a1;
    const double dy = y - a2;
    const double two_d2 = 2.0 * delta * delta;
    return std::exp(-(dx * dx + dy * dy) / two_d2) / (std::numbers::pi * two_d2);
}

Heatmap upsample(const AnomalyMap& map, const FieldGeometry& geom, double delta,
                 bool fast) {
    if (!(delta > 0.0)) throw std::invalid_argument("upsample: delta must be > 0");
    if (map.h != geom.out_h || map.w != geom.out_w) {
        throw std::invalid_argument("upsample: map dims " + std::to_string(map.h) + "x" +
                                    std::to_string(map.w) + " do not match field grid " +
                                    std::to_string(geom.out_h) + "x" +
                                    std::to_string(geom.out_w));
    }
    if (geom.in_h <= 0 || geom.in_w <= 0) {
        throw std::invalid_argument("upsample: field geometry lacks input dimensions");
    }
    Heatmap out;
    out.image_id = map.image_id;
    out.h = geom.in_h;
    out.w = geom.in_w;
    out.delta = delta;
    out.values.assign(static_cast<std::size_t>(out.h * out.w), 0.0);

    const double norm = 1.0 / (2.0 * std::numbers::pi * delta * delta);
    const double inv_two_d2 = 1.0 / (2.0 * delta * delta);
    // exp(-18) ~ 1.5e-8 per truncated tail keeps the fast path within the
    // 1e-6-of-max agreement bound even when bumps are isolated.
    const double radius = 6.0 * delta;

    for (std::int64_t cy = 0; cy < map.h; ++cy) {
        const double c1 = geom.center_y(cy);
        for (std::int64_t cx = 0; cx < map.w; ++cx) {
            const double q = map.at(cy, cx);
            if (q == 0.0) continue;
            const double c2 = geom.center_x(cx);
            std::int64_t y_lo = 0, y_hi = out.h, x_lo = 0, x_hi = out.w;
            if (fast) {
                y_lo = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::ceil(c1 - radius)));
                y_hi = std::min<std::int64_t>(out.h, static_cast<std::int64_t>(std::floor(c1 + radius)) + 1);
                x_lo = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::ceil(c2 - radius)));
                x_hi = std::min<std::int64_t>(out.w, static_cast<std::int64_t>(std::floor(c2 + radius)) + 1);
            }
            for (std::int64_t y = y_lo; y < y_hi; ++y) {
                const double dy = static_cast<double>(y) - c1;
                double* row = out.values.data() + y * out.w;
                for (std::int64_t x = x_lo; x < x_hi; ++x) {
                    const double dx = static_cast<double>(x) - c2;
                    row[x] += q * norm * std::exp(-(dy * dy + dx * dx) * inv_two_d2);
                }
            }
        }
    }
    return out;
}

DisplayRange display_range(std::span<const double> values, double quartile) {
    if (values.empty()) throw std::invalid_argument("display_range: empty collection");
    if (!(quartile > 0.0) || quartile > 1.0) {
        throw std::invalid_argument("display_range: quartile must lie in (0, 1]");
    }
    const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
    DisplayRange r;
    r.quartile = quartile;
    r.lo = *mn;
    r.hi = *mx * quartile;
    if (r.hi <= r.lo) r.hi = *mx;
    // Degenerate all-equal collections still need a positive window so the
    // linear map below stays finite; everything lands on the low color.
    if (r.hi <= r.lo) r.hi = r.lo + 1.0;
    return r;
}

const std::array<std::array<std::uint8_t, 3>, 256>& heat_colormap() {
    static const auto table = [] {
        std::array<std::array<std::uint8_t, 3>, 256> t{};
        const auto lerp = [](double a, double b, double s) {
            return static_cast<std::uint8_t>(std::floor(a + (b - a) * s + 0.5));
        };
        for (int i = 0; i < 256; ++i) {
            const double pos = static_cast<double>(i) / 255.0;
            if (pos <= 0.5) {
                const double s = pos / 0.5;  // blue (0,0,255) to yellow (255,255,0)
                t[i] = {lerp(0, 255, s), lerp(0, 255, s), lerp(255, 0, s)};
            } else {
                const double s = (pos - 0.5) / 0.5;  // yellow to red (255,0,0)
                t[i] = {255, lerp(255, 0, s), 0};
            }
        }
        return t;
    }();
    return table;
}

ImageU8 render(const Heatmap& map, const DisplayRange& range) {
    if (!(range.lo < range.hi)) throw std::invalid_argument("render: range.lo must be < range.hi");
    const auto& cmap = heat_colormap();
    ImageU8 out;
    out.width = static_cast<int>(map.w);
    out.height = static_cast<int>(map.h);
    out.channels = 3;
    out.pixels.resize(out.size());
    const double scale = 1.0 / (range.hi - range.lo);
    for (std::size_t i = 0; i < map.values.size(); ++i) {
        const double v = std::clamp(map.values[i], range.lo, range.hi);
        const double pos = (v - range.lo) * scale;
        const int idx = static_cast<int>(std::lround(pos * 255.0));
        const auto& rgb = cmap[static_cast<std::size_t>(idx)];
        out.pixels[i * 3 + 0] = rgb[0];
        out.pixels[i * 3 + 1] = rgb[1];
        out.pixels[i * 3 + 2] = rgb[2];
    }
    return out;
}

ImageU8 overlay(const ImageU8& raw, const ImageU8& rendered, double alpha) {
    if (raw.width != rendered.width || raw.height != rendered.height ||
        raw.channels != 3 || rendered.channels != 3) {
        throw std::invalid_argument("overlay: images must be RGB with equal dims");
    }
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
        throw std::invalid_argument("overlay: alpha must lie in [0, 1]");
    }
    ImageU8 out = raw;
    for (std::size_t i = 0; i < out.pixels.size(); ++i) {
        const double v = (1.0 - alpha) * raw.pixels[i] + alpha * rendered.pixels[i];
        out.pixels[i] = static_cast<std::uint8_t>(std::floor(v + 0.5));
    }
    return out;
}

Histogram histogram(std::span<const double> scores, std::span<const int> labels,
                    int bins) {
    if (scores.empty()) throw std::invalid_argument("histogram: empty scores");
    if (scores.size() != labels.size()) {
        throw std::invalid_argument("histogram: scores/labels length mismatch");
    }
    if (bins < 1) throw std::invalid_argument("histogram: bins must be >= 1");
    const auto [mn_it, mx_it] = std::minmax_element(scores.begin(), scores.end());
    const double lo = *mn_it;
    const double hi = *mx_it;
    const double width = (hi - lo) / static_cast<double>(bins);

    Histogram h;
    h.edges.resize(static_cast<std::size_t>(bins) + 1);
    for (int b = 0; b <= bins; ++b) h.edges[b] = lo + width * b;
    h.edges[bins] = hi;
    h.normal_counts.assign(static_cast<std::size_t>(bins), 0);
    h.anomalous_counts.assign(static_cast<std::size_t>(bins), 0);
    for (std::size_t i = 0; i < scores.size(); ++i) {
        std::int64_t b = 0;
        if (width > 0.0) {
            b = static_cast<std::int64_t>(std::floor((scores[i] - lo) / width));
            b = std::clamp<std::int64_t>(b, 0, bins - 1);
        }
        if (labels[i] == 1) {
            ++h.anomalous_counts[static_cast<std::size_t>(b)];
        } else {
            ++h.normal_counts[static_cast<std::size_t>(b)];
        }
    }
    return h;
}

}  // namespace fcdd
