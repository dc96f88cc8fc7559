#include "fcdd/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace fcdd::nd {

double grad_check(const std::function<double()>& forward, std::span<double> values,
                  std::span<const double> analytic, double eps) {
    if (eps < 1e-7 || eps > 1e-3)
        throw std::invalid_argument("grad_check: eps must lie in [1e-7, 1e-3]");
    if (values.size() != analytic.size())
        throw std::invalid_argument("grad_check: gradient length mismatch");
    {
        const double f0 = forward();
        if (!std::isfinite(f0))
            throw std::invalid_argument("grad_check: forward value is not finite");
    }

    double max_rel = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double saved = values[i];
        values[i] = saved + eps;
        const double fp = forward();
        values[i] = saved - eps;
        const double fm = forward();
        values[i] = saved;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw std::invalid_argument("grad_check: perturbed forward value is not finite");
        const double numeric = (fp - fm) / (2.0 * eps);
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
        const double rel = std::abs(numeric - analytic[i]) / denom;
        if (rel > max_rel) max_rel = rel;
    }
    return max_rel;
}

}  // namespace fcdd::nd
