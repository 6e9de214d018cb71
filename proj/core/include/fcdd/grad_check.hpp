#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace fcdd {

// One parameter blob under test: a live view into the model plus the analytic
// gradient claimed for it.
struct GradCheckBlob {
    std::string name;
    std::span<double> params;
    std::span<const double> analytic;
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_blob;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

// Central-difference check of analytic gradients. `loss` is re-evaluated after
// each in-place perturbation of h; parameters are restored afterwards. The
// relative error is |a-n| / max(|a|, |n|, 1e-8).
GradCheckReport finite_diff_check(const std::function<double()>& loss,
                                  std::vector<GradCheckBlob> blobs, double h);

}  // namespace fcdd
