#pragma once

#include <cmath>
#include <functional>

#include "wg/nn.hpp"
#include "wg/tensor.hpp"

// Central finite-difference oracle for reverse-mode gradients. The loss
// builder must be deterministic (fix all random draws outside the closure).
// Error is relative above `scale` and absolute below it, so near-zero
// gradients are not penalized by the division.
inline double gradient_check(wg::nn::ParamRegistry& params,
                             const std::function<wg::Tensor()>& loss_fn,
                             double eps = 1e-5, double scale = 1e-3) {
    using namespace wg;
    params.zero_grad();
    Tensor loss = loss_fn();
    backward(loss);

    std::map<std::string, std::vector<Real>> analytic;
    for (const auto& [name, t] : params.named())
        analytic[name] = std::vector<Real>(t.grad().begin(), t.grad().end());

    double worst = 0.0;
    for (auto& [name, t] : params.named()) {
        auto vals = t.mutable_value();
        const auto& a = analytic[name];
        for (size_t i = 0; i < vals.size(); ++i) {
            const Real orig = vals[i];
            vals[i] = orig + static_cast<Real>(eps);
            const double fp = loss_fn().item();
            vals[i] = orig - static_cast<Real>(eps);
            const double fm = loss_fn().item();
            vals[i] = orig;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double ga = (a.empty() ? 0.0 : static_cast<double>(a[i]));
            const double denom = std::max({std::fabs(ga), std::fabs(numeric), scale});
            worst = std::max(worst, std::fabs(ga - numeric) / denom);
        }
    }
    return worst;
}
