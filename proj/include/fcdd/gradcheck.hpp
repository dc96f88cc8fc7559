#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace fcdd::nd {

/// Central finite-difference check of an analytic gradient.
///
/// `forward` recomputes the scalar under test from the current contents of
/// `values`; `analytic` holds d(forward)/d(values[i]). Each entry is
/// perturbed by +/- eps in place (and restored). Returns the maximum
/// relative error, with denominator max(|analytic|, |numeric|, 1e-8).
double grad_check(const std::function<double()>& forward, std::span<double> values,
                  std::span<const double> analytic, double eps);

struct GradCheckCase {
    std::string name;
    double max_rel_err = 0.0;
    double tolerance = 1e-4;
    bool passed = false;
};

/// Runs the full finite-difference suite over every layer kind, every loss
/// and the composed network -> heatmap -> loss pipeline, `instances` random
/// instances each (seeded, deterministic). Used by tests and the CLI
/// `gradcheck` subcommand.
std::vector<GradCheckCase> run_gradcheck_suite(int instances = 20, std::uint64_t seed = 20240901);

}  // namespace fcdd::nd
