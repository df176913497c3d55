#include "wg/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace wg::nn {

void Adam::step(ParamRegistry& params) {
    ++step_count_;
    const Real bc1 = Real(1) - static_cast<Real>(std::pow(static_cast<double>(beta1_), static_cast<double>(step_count_)));
    const Real bc2 = Real(1) - static_cast<Real>(std::pow(static_cast<double>(beta2_), static_cast<double>(step_count_)));
    for (auto& [name, t] : params.named()) {
        auto* node = t.node();
        if (node->grad.size() != node->value.size()) node->grad.assign(node->value.size(), Real(0));
        for (Real g : node->grad)
            if (!std::isfinite(g))
                throw std::runtime_error("optimizer: non-finite gradient in parameter '" + name + "'");
        auto& mom = state_[name];
        if (mom.m.size() != node->value.size()) {
            mom.m.assign(node->value.size(), Real(0));
            mom.v.assign(node->value.size(), Real(0));
        }
        for (size_t i = 0; i < node->value.size(); ++i) {
            const Real g = node->grad[i];
            mom.m[i] = beta1_ * mom.m[i] + (Real(1) - beta1_) * g;
            mom.v[i] = beta2_ * mom.v[i] + (Real(1) - beta2_) * g * g;
            const Real mhat = mom.m[i] / bc1;
            const Real vhat = mom.v[i] / bc2;
            node->value[i] -= lr_ * mhat / (static_cast<Real>(std::sqrt(vhat)) + eps_);
        }
        node->grad.assign(node->value.size(), Real(0));
    }
}

} // namespace wg::nn
