#include "fcdd/objective.hpp"

#include <cmath>
#include <stdexcept>

#include "fcdd/errors.hpp"

namespace fcdd {

ScoreReduction score_reduction_from_string(const std::string& s) {
    if (s == "sum") return ScoreReduction::sum;
    if (s == "mean") return ScoreReduction::mean;
    throw config_error("score_reduction must be 'sum' or 'mean', got '" + s + "'");
}

std::string to_string(ScoreReduction r) {
    return r == ScoreReduction::sum ? "sum" : "mean";
}

std::vector<AnomalyMap> pseudo_huber_map(const Tensor4& score_map,
                                         const std::vector<std::string>& image_ids) {
    if (!image_ids.empty() && static_cast<std::int64_t>(image_ids.size()) != score_map.n) {
        throw std::invalid_argument("pseudo_huber_map: " + std::to_string(image_ids.size()) +
                                    " ids for " + std::to_string(score_map.n) + " images");
    }
    std::vector<AnomalyMap> maps;
    maps.reserve(static_cast<std::size_t>(score_map.n));
    const std::int64_t cells = score_map.h * score_map.w;
    for (std::int64_t i = 0; i < score_map.n; ++i) {
        AnomalyMap map;
        map.image_id = image_ids.empty() ? std::string() : image_ids[static_cast<std::size_t>(i)];
        map.h = score_map.h;
        map.w = score_map.w;
        map.values.resize(static_cast<std::size_t>(cells));
        for (std::int64_t cell = 0; cell < cells; ++cell) {
            double sq = 0.0;
            for (std::int64_t ch = 0; ch < score_map.c; ++ch) {
                const double z =
                    score_map.values[static_cast<std::size_t>((i * score_map.c + ch) * cells + cell)];
                sq += z * z;
            }
            map.values[static_cast<std::size_t>(cell)] = std::sqrt(sq + 1.0) - 1.0;
        }
        maps.push_back(std::move(map));
    }
    return maps;
}

namespace {

struct PerImageLoss {
    double loss;
    // d(loss_i)/dm_i before the 1/n batch factor; zero when clamped.
    double dmean;
    bool clamped;
};

PerImageLoss image_term(double mean, int label) {
    if (label == 0) return {mean, 1.0, false};
    const double one_minus_exp = -std::expm1(-mean);  // 1 - e^{-m}, stable near 0
    if (one_minus_exp < kLossLogClamp) {
        return {-std::log(kLossLogClamp), 0.0, true};
    }
    return {-std::log(one_minus_exp), -std::exp(-mean) / one_minus_exp, false};
}

void check_labels(const std::vector<int>& labels) {
    for (int x : labels) {
        if (x != 0 && x != 1) {
            throw std::invalid_argument("fcdd_loss: labels must be 0/1, got " + std::to_string(x));
        }
    }
}

}  // namespace

LossValue fcdd_loss(const LabeledBatch& batch) {
    const std::size_t n = batch.maps.size();
    if (n == 0) throw std::invalid_argument("fcdd_loss: empty batch");
    if (batch.labels.size() != n || (!batch.weights.empty() && batch.weights.size() != n)) {
        throw std::invalid_argument("fcdd_loss: maps/labels/weights lengths disagree");
    }
    check_labels(batch.labels);
    for (double h : batch.weights) {
        if (!(h > 0.0)) throw std::invalid_argument("fcdd_loss: hazard weights must be > 0");
    }

    LossValue out;
    std::vector<double> terms(n);
    for (std::size_t i = 0; i < n; ++i) {
        const AnomalyMap& map = batch.maps[i];
        if (map.cells() <= 0) throw std::invalid_argument("fcdd_loss: empty anomaly map");
        const double mean = pairwise_sum(map.values) / static_cast<double>(map.cells());
        const PerImageLoss term = image_term(mean, batch.labels[i]);
        terms[i] = term.loss;
        if (term.clamped) ++out.clamp_events;
    }
    out.value = pairwise_sum(terms) / static_cast<double>(n);
    return out;
}

LossGrad fcdd_loss_grad(const Tensor4& score_map, const std::vector<int>& labels) {
    if (score_map.n == 0) throw std::invalid_argument("fcdd_loss_grad: empty batch");
    if (static_cast<std::int64_t>(labels.size()) != score_map.n) {
        throw std::invalid_argument("fcdd_loss_grad: " + std::to_string(labels.size()) +
                                    " labels for " + std::to_string(score_map.n) + " images");
    }
    check_labels(labels);

    const std::int64_t n = score_map.n;
    const std::int64_t cells = score_map.h * score_map.w;
    const double inv_cells = 1.0 / static_cast<double>(cells);
    const double inv_n = 1.0 / static_cast<double>(n);

    LossGrad out;
    out.score_grad = Tensor4(score_map.n, score_map.c, score_map.h, score_map.w);

    std::vector<double> roots(static_cast<std::size_t>(cells));
    std::vector<double> hub(static_cast<std::size_t>(cells));
    std::vector<double> terms(static_cast<std::size_t>(n));

    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t cell = 0; cell < cells; ++cell) {
            double sq = 0.0;
            for (std::int64_t ch = 0; ch < score_map.c; ++ch) {
                const double z =
                    score_map.values[static_cast<std::size_t>((i * score_map.c + ch) * cells + cell)];
                sq += z * z;
            }
            const double root = std::sqrt(sq + 1.0);
            roots[static_cast<std::size_t>(cell)] = root;
            hub[static_cast<std::size_t>(cell)] = root - 1.0;
        }
        const double mean = pairwise_sum(hub) * inv_cells;
        const PerImageLoss term = image_term(mean, labels[static_cast<std::size_t>(i)]);
        terms[static_cast<std::size_t>(i)] = term.loss;
        if (term.clamped) ++out.clamp_events;

        // dL/dz_c = (1/n) * dterm/dm * (1/uv) * z_c / sqrt(|z|^2+1)
        const double cell_coeff = inv_n * term.dmean * inv_cells;
        if (cell_coeff != 0.0) {
            for (std::int64_t cell = 0; cell < cells; ++cell) {
                const double scale = cell_coeff / roots[static_cast<std::size_t>(cell)];
                for (std::int64_t ch = 0; ch < score_map.c; ++ch) {
                    const std::size_t idx =
                        static_cast<std::size_t>((i * score_map.c + ch) * cells + cell);
                    out.score_grad.values[idx] = scale * score_map.values[idx];
                }
            }
        }
    }
    out.value = pairwise_sum(terms) * inv_n;
    return out;
}

double image_score(const AnomalyMap& map, ScoreReduction reduction) {
    if (map.cells() <= 0 || map.values.size() != static_cast<std::size_t>(map.cells())) {
        throw std::invalid_argument("image_score: malformed map");
    }
    const double total = pairwise_sum(map.values);
    return reduction == ScoreReduction::sum ? total : total / static_cast<double>(map.cells());
}

double hazard_weighted_score(const AnomalyMap& map, double h, ScoreReduction reduction) {
    if (!(h > 0.0)) {
        throw std::invalid_argument("hazard_weighted_score: weight must be > 0, got " +
                                    std::to_string(h));
    }
    return h * image_score(map, reduction);
}

}  // namespace fcdd
