#pragma once

// Central-difference gradient verification. Runs at 64-bit only; tolerances
// are meaningless at float precision.

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mtkd/error.hpp"
#include "mtkd/tensor.hpp"

namespace mtkd {

struct GradCheckReport {
    struct PerParam {
        std::string name;
        double max_rel_err = 0;
        size_t worst_index = 0;
        double analytic = 0;
        double numeric = 0;
    };
    std::vector<PerParam> params;
    double max_rel_err = 0;
    double tolerance = 0;
    bool pass = false;
};

// builder: closes over `params` and returns a scalar loss tensor.
// `max_coords_per_param` limits how many coordinates are perturbed per
// parameter (0 = all), with a deterministic stride so large models stay
// checkable in bounded time.
inline GradCheckReport gradient_check(const std::function<Tensor<double>()>& builder,
                                      std::span<Tensor<double>> params, double step,
                                      double tolerance, size_t max_coords_per_param = 0) {
    if (!(step > 0)) fail("tensor", "gradient_check: step must be > 0");

    double loss0;
    {
        NoGradGuard ng;
        loss0 = builder().item();
        double loss1 = builder().item();
        if (loss0 != loss1)
            fail("tensor", "gradient_check: builder is non-deterministic (" +
                               std::to_string(loss0) + " vs " + std::to_string(loss1) + ")");
    }

    for (auto& p : params) p.drop_grad();
    Tensor<double> loss = builder();
    backward(loss);

    GradCheckReport rep;
    rep.tolerance = tolerance;
    for (auto& p : params) {
        GradCheckReport::PerParam pp;
        pp.name = p.name();
        const std::vector<double> analytic =
            p.has_grad() ? p.grad() : std::vector<double>(p.size(), 0.0);

        size_t n = p.size();
        size_t stride = 1;
        if (max_coords_per_param > 0 && n > max_coords_per_param)
            stride = (n + max_coords_per_param - 1) / max_coords_per_param;

        for (size_t i = 0; i < n; i += stride) {
            double saved = p.data()[i];
            double lp, lm;
            {
                NoGradGuard ng;
                p.data()[i] = saved + step;
                lp = builder().item();
                p.data()[i] = saved - step;
                lm = builder().item();
                p.data()[i] = saved;
            }
            double numeric = (lp - lm) / (2 * step);
            // Absolute floor keeps exact-zero gradients (e.g. dead relu
            // units) from registering as spurious relative error.
            double rel = std::abs(analytic[i] - numeric) /
                         std::max({std::abs(analytic[i]), std::abs(numeric), 1e-6});
            if (rel > pp.max_rel_err) {
                pp.max_rel_err = rel;
                pp.worst_index = i;
                pp.analytic = analytic[i];
                pp.numeric = numeric;
            }
        }
        rep.max_rel_err = std::max(rep.max_rel_err, pp.max_rel_err);
        rep.params.push_back(std::move(pp));
    }
    for (auto& p : params) p.drop_grad();
    rep.pass = rep.max_rel_err < tolerance;
    return rep;
}

} // namespace mtkd
