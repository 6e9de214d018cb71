#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fcdd/tensor.hpp"

namespace fcdd {

// Non-negative u x v anomaly map of one image: the pseudo-Huber transform of
// the backbone score map.
struct AnomalyMap {
    std::string image_id;
    std::int64_t h = 0;
    std::int64_t w = 0;
    std::vector<double> values;

    std::int64_t cells() const { return h * w; }
    double at(std::int64_t y, std::int64_t x) const {
        return values[static_cast<std::size_t>(y * w + x)];
    }
};

enum class ScoreReduction { sum, mean };

ScoreReduction score_reduction_from_string(const std::string& s);
std::string to_string(ScoreReduction r);

// Per spatial cell, z is the channel vector of the score map and the output
// value is sqrt(|z|^2 + 1) - 1. With one channel this is sqrt(z^2+1)-1.
std::vector<AnomalyMap> pseudo_huber_map(const Tensor4& score_map,
                                         const std::vector<std::string>& image_ids = {});

struct LabeledBatch {
    std::vector<AnomalyMap> maps;
    std::vector<int> labels;        // x_i in {0, 1}, 1 = anomalous
    std::vector<double> weights;    // h_i > 0; carried for scoring, never in the loss
};

struct LossValue {
    double value = 0.0;
    // Number of anomalous images whose log argument hit the 1e-12 clamp
    // (degenerate anomalous maps). Surfaced as a training warning counter.
    std::int64_t clamp_events = 0;
};

// Labeled one-class objective over a batch of anomaly maps:
//   m_i = mean of map i, loss = (1/n) sum_i [(1-x_i) m_i - x_i log(1 - exp(-m_i))]
// with the log argument clamped below at 1e-12.
LossValue fcdd_loss(const LabeledBatch& batch);

struct LossGrad {
    double value = 0.0;
    std::int64_t clamp_events = 0;
    Tensor4 score_grad;  // dLoss/dScoreMap, same dims as the score map
};

// Loss plus its exact gradient straight back to the raw score map; the
// training path, fused so the pseudo-Huber chain rule is applied in place.
LossGrad fcdd_loss_grad(const Tensor4& score_map, const std::vector<int>& labels);

inline constexpr double kLossLogClamp = 1e-12;

// Plain anomaly score: the sum over all map cells (pairwise reduction), or the
// cell mean when reduction is mean.
double image_score(const AnomalyMap& map, ScoreReduction reduction = ScoreReduction::sum);

// h * image_score(map). h must be strictly positive.
double hazard_weighted_score(const AnomalyMap& map, double h,
                             ScoreReduction reduction = ScoreReduction::sum);

}  // namespace fcdd
