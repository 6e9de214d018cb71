#include "fcdd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "fcdd/data.hpp"
#include "fcdd/errors.hpp"

namespace fcdd {

namespace {

struct ClassCounts {
    std::int64_t positives = 0;
    std::int64_t negatives = 0;
};

ClassCounts check_binary(std::span<const double> scores, std::span<const int> labels,
                         const char* who, bool require_both) {
    if (scores.size() != labels.size()) {
        throw std::invalid_argument(std::string(who) + ": scores/labels length mismatch");
    }
    if (scores.empty()) throw std::invalid_argument(std::string(who) + ": empty input");
    ClassCounts c;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == 1) {
            ++c.positives;
        } else if (labels[i] == 0) {
            ++c.negatives;
        } else {
            throw std::invalid_argument(std::string(who) + ": labels must be 0 or 1");
        }
        if (std::isnan(scores[i])) {
            throw std::invalid_argument(std::string(who) + ": NaN score");
        }
    }
    if (require_both && (c.positives == 0 || c.negatives == 0)) {
        throw std::invalid_argument(std::string(who) +
                                    ": undefined for single-class input (" +
                                    std::to_string(c.positives) + " anomalous, " +
                                    std::to_string(c.negatives) + " normal)");
    }
    return c;
}

double auc_pair_counting(std::span<const double> scores, std::span<const int> labels,
                         const ClassCounts& c) {
    std::vector<double> pos, neg;
    pos.reserve(static_cast<std::size_t>(c.positives));
    neg.reserve(static_cast<std::size_t>(c.negatives));
    for (std::size_t i = 0; i < scores.size(); ++i) {
        (labels[i] == 1 ? pos : neg).push_back(scores[i]);
    }
    // Sorting both sides turns the quadratic scan into a merge-style walk:
    // for each anomalous score, count normals strictly below and tied.
    std::sort(pos.begin(), pos.end());
    std::sort(neg.begin(), neg.end());
    double credit = 0.0;
    for (const double p : pos) {
        const auto below = std::lower_bound(neg.begin(), neg.end(), p) - neg.begin();
        const auto below_or_tied = std::upper_bound(neg.begin(), neg.end(), p) - neg.begin();
        credit += static_cast<double>(below) +
                  0.5 * static_cast<double>(below_or_tied - below);
    }
    return credit / (static_cast<double>(c.positives) * static_cast<double>(c.negatives));
}

double auc_trapezoid(std::span<const double> scores, std::span<const int> labels,
                     const ClassCounts& c) {
    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    double auc = 0.0;
    double tp = 0.0, fp = 0.0, prev_tp = 0.0, prev_fp = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        const double v = scores[order[i]];
        while (i < order.size() && scores[order[i]] == v) {
            if (labels[order[i]] == 1) {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            ++i;
        }
        auc += (fp - prev_fp) * (tp + prev_tp) * 0.5;
        prev_tp = tp;
        prev_fp = fp;
    }
    return auc / (static_cast<double>(c.positives) * static_cast<double>(c.negatives));
}

}  // namespace

Calibration calibration_from_string(const std::string& name) {
    if (name == "max_f1") return Calibration::max_f1;
    if (name == "max_youden") return Calibration::max_youden;
    throw config_error("unknown calibration rule '" + name + "' (max_f1, max_youden)");
}

std::string to_string(Calibration rule) {
    return rule == Calibration::max_f1 ? "max_f1" : "max_youden";
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
    const ClassCounts c = check_binary(scores, labels, "roc_auc", true);
    if (scores.size() <= 10000) return auc_pair_counting(scores, labels, c);
    return auc_trapezoid(scores, labels, c);
}

double roc_auc_pair_counting(std::span<const double> scores, std::span<const int> labels) {
    const ClassCounts c = check_binary(scores, labels, "roc_auc", true);
    return auc_pair_counting(scores, labels, c);
}

double roc_auc_trapezoid(std::span<const double> scores, std::span<const int> labels) {
    const ClassCounts c = check_binary(scores, labels, "roc_auc", true);
    return auc_trapezoid(scores, labels, c);
}

double calibrate_threshold(std::span<const double> scores, std::span<const int> labels,
                           Calibration rule) {
    const ClassCounts c = check_binary(scores, labels, "calibrate_threshold", true);

    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    const double inf = std::numeric_limits<double>::infinity();
    const auto metric = [&](std::int64_t tp, std::int64_t fp) {
        if (rule == Calibration::max_f1) {
            const std::int64_t fn = c.positives - tp;
            const std::int64_t denom = 2 * tp + fp + fn;
            return denom > 0 ? 2.0 * static_cast<double>(tp) / static_cast<double>(denom)
                             : 0.0;
        }
        return static_cast<double>(tp) / static_cast<double>(c.positives) -
               static_cast<double>(fp) / static_cast<double>(c.negatives);
    };

    // Scan candidates in ascending threshold order. TP only drops along the
    // scan, so keeping the first maximum realizes both tie-breaks (higher
    // recall, then lower threshold).
    std::int64_t tp = c.positives, fp = c.negatives;
    double best_threshold = -inf;
    double best_metric = metric(tp, fp);
    std::size_t i = 0;
    while (i < order.size()) {
        const double v = scores[order[i]];
        while (i < order.size() && scores[order[i]] == v) {
            if (labels[order[i]] == 1) {
                --tp;
            } else {
                --fp;
            }
            ++i;
        }
        const double cand =
            (i < order.size()) ? (v + scores[order[i]]) / 2.0 : inf;
        const double m = metric(tp, fp);
        if (m > best_metric) {
            best_metric = m;
            best_threshold = cand;
        }
    }
    return best_threshold;
}

MetricsReport confusion_metrics(std::span<const double> scores,
                                std::span<const int> labels, double threshold) {
    check_binary(scores, labels, "confusion_metrics", false);
    MetricsReport r;
    r.threshold = threshold;
    r.n_test = static_cast<std::int64_t>(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool predicted = scores[i] >= threshold;
        if (labels[i] == 1) {
            predicted ? ++r.tp : ++r.fn;
        } else {
            predicted ? ++r.fp : ++r.tn;
        }
    }
    if (r.tp + r.fp > 0) {
        r.precision = static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fp);
    } else {
        r.flags.push_back("precision_zero_denominator");
    }
    if (r.tp + r.fn > 0) {
        r.recall = static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fn);
    } else {
        r.flags.push_back("recall_zero_denominator");
    }
    if (r.precision + r.recall > 0.0) {
        r.f1 = 2.0 * r.precision * r.recall / (r.precision + r.recall);
    } else {
        r.flags.push_back("f1_zero_denominator");
    }
    return r;
}

namespace {

nlohmann::json threshold_json(double threshold) {
    if (std::isinf(threshold)) return threshold > 0 ? "inf" : "-inf";
    return threshold;
}

}  // namespace

std::string metrics_json(const MetricsReport& report) {
    nlohmann::json j;
    j["auc"] = std::isnan(report.auc) ? nlohmann::json() : nlohmann::json(report.auc);
    j["f1"] = report.f1;
    j["precision"] = report.precision;
    j["recall"] = report.recall;
    j["threshold"] = threshold_json(report.threshold);
    j["counts"] = {{"tp", report.tp}, {"fp", report.fp}, {"tn", report.tn}, {"fn", report.fn}};
    j["n_test"] = report.n_test;
    j["config_digest"] = report.config_digest;
    j["flags"] = report.flags;
    return j.dump(2) + "\n";
}

std::string metrics_csv_header() {
    return "auc,f1,precision,recall,threshold,tp,fp,tn,fn,n_test,config_digest";
}

std::string metrics_csv_row(const MetricsReport& r) {
    std::string row;
    row += std::isnan(r.auc) ? "" : format_double(r.auc);
    row += ',';
    row += format_double(r.f1);
    row += ',';
    row += format_double(r.precision);
    row += ',';
    row += format_double(r.recall);
    row += ',';
    row += format_double(r.threshold);
    row += ',';
    row += std::to_string(r.tp) + ',' + std::to_string(r.fp) + ',' + std::to_string(r.tn) +
           ',' + std::to_string(r.fn) + ',' + std::to_string(r.n_test) + ',' +
           r.config_digest;
    return row;
}

}  // namespace fcdd
