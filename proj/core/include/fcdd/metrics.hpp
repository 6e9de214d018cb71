#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace fcdd {

enum class Calibration { max_f1, max_youden };

Calibration calibration_from_string(const std::string& name);
std::string to_string(Calibration rule);

// Probability that a random anomalous score exceeds a random normal score,
// ties counted 1/2. Exact pair counting up to 10^4 samples, trapezoidal ROC
// integration above (the two agree to rounding error).
double roc_auc(std::span<const double> scores, std::span<const int> labels);

// The two computation paths, exposed so they can be cross-checked directly.
double roc_auc_pair_counting(std::span<const double> scores, std::span<const int> labels);
double roc_auc_trapezoid(std::span<const double> scores, std::span<const int> labels);

// Threshold maximizing the calibration metric over every cut-point: the
// midpoints between adjacent distinct sorted scores plus -inf and +inf.
// Ties prefer higher recall, then the lower threshold. Decision rule
// everywhere: anomalous iff score >= threshold.
double calibrate_threshold(std::span<const double> scores, std::span<const int> labels,
                           Calibration rule = Calibration::max_f1);

struct MetricsReport {
    double auc = std::numeric_limits<double>::quiet_NaN();
    double f1 = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double threshold = 0.0;
    std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
    std::int64_t n_test = 0;
    std::string config_digest;
    std::vector<std::string> flags;  // zero-denominator markers
};

MetricsReport confusion_metrics(std::span<const double> scores,
                                std::span<const int> labels, double threshold);

// Serialization used by reports; infinite thresholds become the strings
// "inf"/"-inf" since JSON has no literal for them.
std::string metrics_json(const MetricsReport& report);
std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsReport& report);

}  // namespace fcdd
