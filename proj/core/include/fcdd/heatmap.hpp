#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fcdd/backbone.hpp"
#include "fcdd/image_io.hpp"
#include "fcdd/objective.hpp"

namespace fcdd {

// Full-resolution explanation map produced by Gaussian upsampling.
struct Heatmap {
    std::string image_id;
    std::int64_t h = 0;
    std::int64_t w = 0;
    double delta = 0.0;
    std::vector<double> values;  // row-major h×w

    double at(std::int64_t y, std::int64_t x) const {
        return values[static_cast<std::size_t>(y * w + x)];
    }
};

struct DisplayRange {
    double lo = 0.0;
    double hi = 1.0;
    double quartile = 0.25;
};

// Isotropic 2-D Gaussian density centered at (a1, a2) evaluated at (x, y).
double gaussian2d(double a1, double a2, double delta, double x, double y);

// Deposits one Gaussian bump per output cell at its receptive-field center,
// weighted by the cell's anomaly value. The reference path accumulates over
// the full grid; the fast path truncates each bump where its tail is
// negligible (radius 6*delta) and stays within 1e-6 relative of the map
// maximum.
Heatmap upsample(const AnomalyMap& map, const FieldGeometry& geom, double delta,
                 bool fast = false);

// Unified display window over every pixel of the rendered set:
// [min, max*quartile], falling back to [min, max] when the clipped top
// does not exceed the bottom.
DisplayRange display_range(std::span<const double> values, double quartile = 0.25);

// 256-entry blue -> yellow -> red lookup table (low to high).
const std::array<std::array<std::uint8_t, 3>, 256>& heat_colormap();

// Clips to [range.lo, range.hi] and maps linearly through heat_colormap().
ImageU8 render(const Heatmap& map, const DisplayRange& range);

// Per-pixel blend (1-alpha)*raw + alpha*rendered, rounded half-up.
ImageU8 overlay(const ImageU8& raw, const ImageU8& rendered, double alpha);

struct Histogram {
    std::vector<double> edges;                // bins + 1 ascending edges
    std::vector<std::int64_t> normal_counts;  // label 0
    std::vector<std::int64_t> anomalous_counts;  // label 1
};

// Shared edges over [min, max] of all scores; the top edge is inclusive.
Histogram histogram(std::span<const double> scores, std::span<const int> labels,
                    int bins);

}  // namespace fcdd
