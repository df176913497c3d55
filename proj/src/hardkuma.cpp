#include "wg/hardkuma.hpp"

#include <cmath>
#include <stdexcept>

namespace wg::hk {

namespace {

constexpr double kEulerMascheroni = 0.57721566490153286060651209;

void validate(const KumaParams& p) {
    if (!(p.a > 0.0) || !(p.b > 0.0) || !std::isfinite(p.a) || !std::isfinite(p.b))
        throw std::invalid_argument("kuma shapes must be positive finite");
}

void validate(const BetaParams& p) {
    if (!(p.alpha > 0.0) || !(p.beta > 0.0) || !std::isfinite(p.alpha) || !std::isfinite(p.beta))
        throw std::invalid_argument("beta shapes must be positive finite");
}

void validate(const StretchInterval& s) {
    if (!(s.l < 0.0) || !(s.r > 1.0))
        throw std::invalid_argument("stretch interval must satisfy l < 0 < 1 < r");
}

} // namespace

double kuma_cdf(double x, const KumaParams& p) {
    validate(p);
    if (x < 0.0 || x > 1.0) throw std::invalid_argument("kuma_cdf: x outside [0,1]");
    if (x == 0.0) return 0.0;
    if (x == 1.0) return 1.0;
    // 1 - (1 - x^a)^b, with expm1/log1p keeping the tails accurate.
    const double xa = std::exp(p.a * std::log(x));
    if (xa >= 1.0) return 1.0;
    return -std::expm1(p.b * std::log1p(-xa));
}

double kuma_icdf(double u, const KumaParams& p) {
    validate(p);
    if (u <= 0.0 || u >= 1.0) throw std::invalid_argument("kuma_icdf: u outside (0,1)");
    const double inner = -std::expm1(std::log1p(-u) / p.b); // 1 - (1-u)^(1/b)
    return std::exp(std::log(inner) / p.a);
}

double kuma_pdf(double x, const KumaParams& p) {
    validate(p);
    if (x <= 0.0 || x >= 1.0) return 0.0;
    const double xa = std::exp(p.a * std::log(x));
    return p.a * p.b * std::exp((p.a - 1.0) * std::log(x) + (p.b - 1.0) * std::log1p(-xa));
}

double beta_log_pdf(double x, double one_minus_x, const BetaParams& p) {
    validate(p);
    const double log_b = std::lgamma(p.alpha) + std::lgamma(p.beta) - std::lgamma(p.alpha + p.beta);
    return (p.alpha - 1.0) * std::log(x) + (p.beta - 1.0) * std::log(one_minus_x) - log_b;
}

double sample_hardkuma(const KumaParams& p, const StretchInterval& s, double u) {
    validate(s);
    if (u <= 0.0 || u >= 1.0) throw std::invalid_argument("sample_hardkuma: u outside (0,1)");
    const double x = kuma_icdf(u, p);
    const double stretched = s.l + (s.r - s.l) * x;
    return std::min(1.0, std::max(0.0, stretched));
}

double prob_zero(const KumaParams& p, const StretchInterval& s) {
    validate(s);
    return kuma_cdf((0.0 - s.l) / (s.r - s.l), p);
}

double prob_one(const KumaParams& p, const StretchInterval& s) {
    validate(s);
    return 1.0 - kuma_cdf((1.0 - s.l) / (s.r - s.l), p);
}

double digamma(double x) {
    if (!(x > 0.0)) throw std::invalid_argument("digamma: x must be positive");
    double result = 0.0;
    while (x < 6.0) {
        result -= 1.0 / x;
        x += 1.0;
    }
    const double inv = 1.0 / x;
    const double inv2 = inv * inv;
    result += std::log(x) - 0.5 * inv -
              inv2 * (1.0 / 12.0 - inv2 * (1.0 / 120.0 - inv2 * (1.0 / 252.0 - inv2 / 240.0)));
    return result;
}

double kl_kuma_beta(const KumaParams& q, const BetaParams& p) {
    validate(q);
    validate(p);
    const double a = q.a, b = q.b, alpha = p.alpha, beta = p.beta;
    const double log_beta_fn = std::lgamma(alpha) + std::lgamma(beta) - std::lgamma(alpha + beta);
    double kl = (a - alpha) / a * (-kEulerMascheroni - digamma(b) - 1.0 / b) +
                std::log(a * b) + log_beta_fn - (b - 1.0) / b;

    // (beta-1) * b * sum_m B(m/a, b) / (m + a*b)
    double series = 0.0;
    for (int m = 1; m <= kKlSeriesTerms; ++m) {
        const double log_b_term =
            std::lgamma(m / a) + std::lgamma(b) - std::lgamma(m / a + b);
        series += std::exp(log_b_term) / (m + a * b);
    }
    if (b == 1.0) {
        // Remainder in closed form: sum_{m>M} (a/m)/(m+a) = psi(M+1+a) - psi(M+1).
        series += digamma(kKlSeriesTerms + 1 + a) - digamma(kKlSeriesTerms + 1.0);
    } else {
        // Asymptotic tail: B(m/a,b)/(m+ab) ~ Gamma(b) a^b m^-(b+1).
        series += std::tgamma(b) * std::pow(a, b) / (b * std::pow(kKlSeriesTerms + 0.5, b));
    }
    kl += (beta - 1.0) * b * series;
    return kl;
}

double expected_l0(std::span<const HardKumaDist> seq) {
    if (seq.empty()) throw std::invalid_argument("expected_l0: empty sequence");
    double total = 0.0;
    for (const auto& d : seq) total += 1.0 - prob_zero(d.params, d.stretch);
    return total;
}

double expected_transitions(std::span<const HardKumaDist> seq) {
    if (seq.size() < 2) throw std::invalid_argument("expected_transitions: need at least 2 steps");
    double total = 0.0;
    for (size_t t = 0; t + 1 < seq.size(); ++t) {
        const double p0 = prob_zero(seq[t].params, seq[t].stretch);
        const double p0n = prob_zero(seq[t + 1].params, seq[t + 1].stretch);
        total += p0 * (1.0 - p0n) + (1.0 - p0) * p0n;
    }
    return total;
}

// --- tensor versions ------------------------------------------------------

Tensor prob_zero_t(const Tensor& a, const StretchInterval& s) {
    // P(z=0) = F(c0; a, 1) = c0^a = exp(a * ln c0), c0 = -l/(r-l).
    const double c0 = (0.0 - s.l) / (s.r - s.l);
    return exp(mul_scalar(a, static_cast<Real>(std::log(c0))));
}

Tensor prob_one_t(const Tensor& a, const StretchInterval& s) {
    // P(z=1) = 1 - F(c1; a, 1) = 1 - c1^a, c1 = (1-l)/(r-l).
    const double c1 = (1.0 - s.l) / (s.r - s.l);
    return add_scalar(neg(exp(mul_scalar(a, static_cast<Real>(std::log(c1))))), Real(1));
}

Tensor sample_t(const Tensor& a, const StretchInterval& s, const std::vector<double>& u) {
    if (u.size() != a.size()) throw std::invalid_argument("sample_t: draw count mismatch");
    std::vector<Real> logu(u.size());
    for (size_t i = 0; i < u.size(); ++i) {
        if (u[i] <= 0.0 || u[i] >= 1.0) throw std::invalid_argument("sample_t: u outside (0,1)");
        logu[i] = static_cast<Real>(std::log(u[i]));
    }
    // b = 1: x = u^(1/a) = exp(log(u)/a); rectified affine stretch.
    Tensor lu = Tensor::from_vector(a.rows(), a.cols(), std::move(logu));
    Tensor x = exp(div(lu, a));
    Tensor stretched = add_scalar(mul_scalar(x, static_cast<Real>(s.r - s.l)), static_cast<Real>(s.l));
    return clamp(stretched, Real(0), Real(1));
}

Tensor lgamma_t(const Tensor& x) {
    // lgamma(x) = lgamma(x+8) - sum_{i=0..7} log(x+i); Stirling at y >= 8.
    Tensor acc = Tensor::zeros(x.rows(), x.cols());
    for (int i = 0; i < 8; ++i) acc = add(acc, log(add_scalar(x, static_cast<Real>(i))));
    Tensor y = add_scalar(x, Real(8));
    Tensor ly = log(y);
    Tensor inv = div(Tensor::filled(x.rows(), x.cols(), Real(1)), y);
    Tensor inv2 = mul(inv, inv);
    Tensor stirling = add(
        add(mul(sub(y, Tensor::filled(x.rows(), x.cols(), Real(0.5))), ly), neg(y)),
        Tensor::filled(x.rows(), x.cols(), static_cast<Real>(0.91893853320467274178))); // 0.5*ln(2*pi)
    Tensor corr = mul(inv, add_scalar(mul(inv2, add_scalar(mul(inv2, Tensor::filled(x.rows(), x.cols(), static_cast<Real>(1.0 / 1260.0))),
                                                           static_cast<Real>(-1.0 / 360.0))),
                                      static_cast<Real>(1.0 / 12.0)));
    return sub(add(stirling, corr), acc);
}

Tensor digamma_t(const Tensor& x) {
    Tensor acc = Tensor::zeros(x.rows(), x.cols());
    Tensor ones = Tensor::filled(x.rows(), x.cols(), Real(1));
    for (int i = 0; i < 8; ++i) acc = add(acc, div(ones, add_scalar(x, static_cast<Real>(i))));
    Tensor y = add_scalar(x, Real(8));
    Tensor inv = div(ones, y);
    Tensor inv2 = mul(inv, inv);
    // psi(y) ~= ln y - 1/(2y) - 1/(12 y^2) + 1/(120 y^4) - 1/(252 y^6)
    Tensor tail = mul(inv2, add_scalar(mul(inv2, add_scalar(mul(inv2, Tensor::filled(x.rows(), x.cols(), static_cast<Real>(-1.0 / 252.0))),
                                                            static_cast<Real>(1.0 / 120.0))),
                                       static_cast<Real>(-1.0 / 12.0)));
    return sub(add(add(log(y), mul_scalar(inv, Real(-0.5))), tail), acc);
}

Tensor kl_kuma_beta_t(const Tensor& a, const Tensor& alpha, const Tensor& beta) {
    // b = 1 closed form:
    //   alpha/a - 1 + log a + lgamma(alpha) + lgamma(beta) - lgamma(alpha+beta)
    //   + (beta-1) * (psi(a+1) + euler_gamma)
    Tensor log_beta_fn = sub(add(lgamma_t(alpha), lgamma_t(beta)), lgamma_t(add(alpha, beta)));
    Tensor head = add_scalar(div(alpha, a), Real(-1));
    Tensor series = add_scalar(digamma_t(add_scalar(a, Real(1))), static_cast<Real>(kEulerMascheroni));
    return add(add(add(head, log(a)), log_beta_fn),
               mul(add_scalar(beta, Real(-1)), series));
}

} // namespace wg::hk
