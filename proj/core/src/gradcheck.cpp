#include "cmx/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace cmx {

GradCheckResult grad_check(std::vector<GradProbe>& probes,
                           const std::function<double()>& objective, double h) {
    GradCheckResult res;
    for (auto& probe : probes) {
        TensorD& p = *probe.point;
        if (!same_shape(p, probe.analytic)) {
            throw ShapeError("grad_check: analytic gradient for " + probe.name + " has shape " +
                             shape_string(probe.analytic.shape()) + ", point has " +
                             shape_string(p.shape()));
        }
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double saved = p[i];
            p[i] = saved + h;
            const double f_plus = objective();
            p[i] = saved - h;
            const double f_minus = objective();
            p[i] = saved;

            const double numeric = (f_plus - f_minus) / (2.0 * h);
            const double analytic = probe.analytic[i];
            ++res.probes;
            if (!std::isfinite(f_plus) || !std::isfinite(f_minus) || !std::isfinite(analytic)) {
                res.non_finite.push_back(probe.name + "[" + std::to_string(i) + "]");
                continue;
            }
            const double rel =
                std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                res.worst_tensor = probe.name;
                res.worst_index = i;
                res.worst_analytic = analytic;
                res.worst_numeric = numeric;
            }
        }
    }
    return res;
}

}  // namespace cmx
