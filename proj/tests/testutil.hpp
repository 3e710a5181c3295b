#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "regionembed/rng.hpp"
#include "regionembed/tensor.hpp"

namespace testutil {

struct GradCheckOptions {
    double h = 1e-5;
    double rtol = 1e-4;
    // Relative-error denominator floor. Guards coordinates whose gradient is
    // so small that central-difference round-off dominates.
    double floor = 1e-3;
    // 0 checks every coordinate; otherwise this many seeded samples per tensor.
    int samples_per_tensor = 0;
};

// Max relative error between analytic gradients and central finite
// differences. loss_fn must rebuild its graph from the current parameter
// values on every call (the standard pattern: parameters are leaves, the
// forward pass is a pure function of them).
inline double max_grad_rel_err(const std::function<regionembed::Tensor()>& loss_fn,
                               std::vector<regionembed::Tensor> params,
                               GradCheckOptions opt = {}, regionembed::Rng* sample_rng = nullptr) {
    using regionembed::Tensor;
    for (Tensor& p : params) p.zero_grad();
    Tensor loss = loss_fn();
    regionembed::backward(loss);

    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (Tensor& p : params) analytic.push_back(p.grad());

    double worst = 0.0;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        auto& vals = params[pi].values();
        std::vector<size_t> coords;
        if (opt.samples_per_tensor <= 0 || static_cast<size_t>(opt.samples_per_tensor) >= vals.size()) {
            for (size_t i = 0; i < vals.size(); ++i) coords.push_back(i);
        } else {
            for (int s = 0; s < opt.samples_per_tensor; ++s) {
                coords.push_back(static_cast<size_t>(
                    sample_rng->uniform_int(static_cast<int>(vals.size()))));
            }
        }
        for (size_t i : coords) {
            const double orig = vals[i];
            vals[i] = orig + opt.h;
            const double lp = loss_fn().item();
            vals[i] = orig - opt.h;
            const double lm = loss_fn().item();
            vals[i] = orig;
            const double fd = (lp - lm) / (2.0 * opt.h);
            const double a = analytic[pi][i];
            const double denom = std::max({std::fabs(a), std::fabs(fd), opt.floor});
            worst = std::max(worst, std::fabs(a - fd) / denom);
        }
    }
    return worst;
}

inline regionembed::Tensor random_tensor(std::vector<int> shape, regionembed::Rng& rng,
                                         double lo = -2.0, double hi = 2.0,
                                         bool requires_grad = true) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    std::vector<double> vals(static_cast<size_t>(n));
    for (double& v : vals) v = rng.uniform(lo, hi);
    return regionembed::Tensor::from_values(std::move(shape), std::move(vals), requires_grad);
}

}  // namespace testutil
