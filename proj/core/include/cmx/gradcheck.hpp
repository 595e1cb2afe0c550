#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cmx/tensor.hpp"

namespace cmx {

/// One tensor probed by grad_check. `point` is perturbed in place, so the
/// objective must read through it (alias it) on every call.
struct GradProbe {
    std::string name;
    TensorD* point;
    TensorD analytic;  // same shape as *point
};

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::string worst_tensor;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t probes = 0;
    /// Coordinates where probing produced non-finite values ("tensor[index]").
    std::vector<std::string> non_finite;

    bool passed(double tol) const { return non_finite.empty() && max_rel_err <= tol; }
};

/// Central finite differences over every entry of every probe tensor:
///   n = (f(p+h) - f(p-h)) / 2h,   rel = |a-n| / max(1, |a|, |n|).
/// The objective runs in the f64 shadow path; analytic gradients come from the
/// f32 backward pass of the checked implementation.
GradCheckResult grad_check(std::vector<GradProbe>& probes,
                           const std::function<double()>& objective, double h = 1e-3);

}  // namespace cmx
