#pragma once

#include <span>
#include <vector>

#include "wg/tensor.hpp"

namespace wg::hk {

struct KumaParams {
    double a = 1.0; // first shape; posteriors keep the second shape at 1
    double b = 1.0;
};

// Support extension for stretch-and-rectify; defaults follow the usual
// (-0.1, 1.1) convention.
struct StretchInterval {
    double l = -0.1;
    double r = 1.1;
};

struct BetaParams {
    double alpha = 1.0;
    double beta = 1.0;
};

struct HardKumaDist {
    KumaParams params;
    StretchInterval stretch;
};

// F(x; a, b) = 1 - (1 - x^a)^b on [0,1]. Rejects x outside [0,1].
double kuma_cdf(double x, const KumaParams& p);
// Inverse CDF on (0,1): x = (1 - (1-u)^(1/b))^(1/a).
double kuma_icdf(double u, const KumaParams& p);
double kuma_pdf(double x, const KumaParams& p);
double beta_log_pdf(double x, double one_minus_x, const BetaParams& p);

// Inverse-CDF sample stretched to (l, r) and rectified onto [0,1]; exact
// point masses at 0 and 1.
double sample_hardkuma(const KumaParams& p, const StretchInterval& s, double u);

double prob_zero(const KumaParams& p, const StretchInterval& s);
double prob_one(const KumaParams& p, const StretchInterval& s);

// Series depth of the closed-form KL(Kuma(a,b) || Beta(alpha,beta)). Ten
// explicit terms; the remainder is closed under digamma for b = 1 and an
// asymptotic tail otherwise, which keeps the approximation inside the 5%
// quadrature bar across the supported parameter range.
inline constexpr int kKlSeriesTerms = 10;

double kl_kuma_beta(const KumaParams& q, const BetaParams& p);

// E[ ||Z||_0 ] = sum_t P(z_t != 0) under the factorized posterior.
double expected_l0(std::span<const HardKumaDist> seq);
// Expected count of on/off switches between consecutive steps, binarizing
// by the z=0 point mass (interior mass gates the decoder, so it counts as
// "on"). Requires at least two steps.
double expected_transitions(std::span<const HardKumaDist> seq);

double digamma(double x);

// --- differentiable versions over tensors (b fixed at 1) -----------------

// All take/return elementwise tensors of the posterior shape a (> 0).
Tensor prob_zero_t(const Tensor& a, const StretchInterval& s);
Tensor prob_one_t(const Tensor& a, const StretchInterval& s);
// One reparameterized sample per element of `a` with fixed uniform draws.
Tensor sample_t(const Tensor& a, const StretchInterval& s, const std::vector<double>& u);
// KL(Kuma(a,1) || Beta(alpha,beta)) elementwise, differentiable in all three.
Tensor kl_kuma_beta_t(const Tensor& a, const Tensor& alpha, const Tensor& beta);

// lgamma/digamma as primitive compositions (recurrence shift + Stirling).
Tensor lgamma_t(const Tensor& x);
Tensor digamma_t(const Tensor& x);

} // namespace wg::hk
