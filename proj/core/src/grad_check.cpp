#include "fcdd/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fcdd {

GradCheckReport finite_diff_check(const std::function<double()>& loss,
                                  std::vector<GradCheckBlob> blobs, double h) {
    if (h <= 0.0) {
        throw std::invalid_argument("finite_diff_check: h must be positive");
    }
    GradCheckReport report;
    for (auto& blob : blobs) {
        if (blob.params.size() != blob.analytic.size()) {
            throw std::invalid_argument("finite_diff_check: blob '" + blob.name +
                                        "' grad size mismatch");
        }
        for (std::size_t i = 0; i < blob.params.size(); ++i) {
            const double saved = blob.params[i];
            blob.params[i] = saved + h;
            const double up = loss();
            blob.params[i] = saved - h;
            const double down = loss();
            blob.params[i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double analytic = blob.analytic[i];
            const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
            const double rel = std::abs(analytic - numeric) / denom;
            if (rel > report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst_blob = blob.name;
                report.worst_index = i;
                report.worst_analytic = analytic;
                report.worst_numeric = numeric;
            }
        }
    }
    return report;
}

}  // namespace fcdd
