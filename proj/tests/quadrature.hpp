#pragma once

#include <cmath>
#include <functional>

// Test-side numerical integration, independent of the library code paths it
// checks.

// Tanh-sinh (double-exponential) quadrature of f on (0,1). The integrand
// receives both x and 1-x so endpoint-singular factors keep full precision.
// With x(t) = 1/(1+exp(-pi*sinh t)), dx/dt = pi*cosh(t)*x*(1-x).
inline double tanh_sinh_01(const std::function<double(double, double)>& f,
                           double h = 1.0 / 64.0, double t_max = 4.0) {
    const double pi = 3.141592653589793;
    double total = 0.0;
    const int k_max = static_cast<int>(t_max / h);
    for (int k = -k_max; k <= k_max; ++k) {
        const double t = k * h;
        const double s = pi * std::sinh(t);
        const double x = 1.0 / (1.0 + std::exp(-s));
        const double omx = 1.0 / (1.0 + std::exp(s));
        const double w = h * pi * std::cosh(t) * x * omx;
        // Nodes whose coordinate rounds to an exact endpoint carry
        // double-exponentially small weight; skip them.
        if (x <= 0.0 || omx <= 0.0 || x >= 1.0 || omx >= 1.0) continue;
        const double fx = f(x, omx);
        if (std::isfinite(fx)) total += w * fx;
    }
    return total;
}

// Composite Simpson on [0,1] for bounded integrands.
inline double simpson_01(const std::function<double(double)>& f, int panels = 200000) {
    const double h = 1.0 / panels;
    double total = f(1e-15) + f(1.0 - 1e-15);
    for (int i = 1; i < panels; ++i) total += f(i * h) * (i % 2 ? 4.0 : 2.0);
    return total * h / 3.0;
}
