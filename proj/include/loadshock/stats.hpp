#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace loadshock::stats {

/// Regularized lower incomplete gamma P(a, x). Series for x < a+1,
/// Lentz continued fraction otherwise.
inline double gamma_p(double a, double x) {
    if (a <= 0 || x < 0) throw std::domain_error("gamma_p: a > 0 and x >= 0 required");
    if (x == 0) return 0.0;
    const double lg = std::lgamma(a);
    if (x < a + 1.0) {
        double term = 1.0 / a;
        double sum = term;
        double ap = a;
        for (int i = 0; i < 500; ++i) {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if (std::fabs(term) < std::fabs(sum) * 1e-16)
                return sum * std::exp(-x + a * std::log(x) - lg);
        }
        throw std::runtime_error("gamma_p: series failed to converge");
    }
    // continued fraction for Q(a,x), modified Lentz
    const double tiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i <= 500; ++i) {
        double an = -double(i) * (double(i) - a);
        b += 2.0;
        d = an * d + b;
        if (std::fabs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        double delta = d * c;
        h *= delta;
        if (std::fabs(delta - 1.0) < 1e-16) {
            double q = std::exp(-x + a * std::log(x) - lg) * h;
            return 1.0 - q;
        }
    }
    throw std::runtime_error("gamma_p: continued fraction failed to converge");
}

/// Chi-square upper tail probability with df degrees of freedom.
inline double chi_squared_sf(double x, int df) {
    if (df < 1) throw std::domain_error("chi_squared_sf: df >= 1 required");
    if (x <= 0) return 1.0;
    return 1.0 - gamma_p(0.5 * df, 0.5 * x);
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

/// Two-sided p-value of a standard normal statistic.
inline double normal_two_sided_p(double z) { return std::erfc(std::fabs(z) / std::sqrt(2.0)); }

// Standard normal quantiles used for interval construction and Wald cutoffs.
inline constexpr double kZ90 = 1.6448536269514722;   // Phi^{-1}(0.95)
inline constexpr double kZ95 = 1.9599639845400545;   // Phi^{-1}(0.975)
inline constexpr double kZ99 = 2.5758293035489004;   // Phi^{-1}(0.995)

/// Empirical quantile with linear interpolation (type 7), p in [0,1].
inline double quantile(std::vector<double> sorted_copy, double p) {
    auto& v = sorted_copy;
    if (v.empty()) throw std::invalid_argument("quantile of empty sample");
    std::sort(v.begin(), v.end());
    if (p <= 0) return v.front();
    if (p >= 1) return v.back();
    double h = p * double(v.size() - 1);
    size_t lo = size_t(std::floor(h));
    size_t hi = std::min(lo + 1, v.size() - 1);
    double frac = h - double(lo);
    return v[lo] * (1.0 - frac) + v[hi] * frac;
}

inline double mean(std::span<const double> v) {
    if (v.empty()) throw std::invalid_argument("mean of empty sample");
    double s = 0;
    for (double x : v) s += x;
    return s / double(v.size());
}

inline double sample_variance(std::span<const double> v) {
    if (v.size() < 2) throw std::invalid_argument("variance needs >= 2 points");
    double m = mean(v);
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return s / double(v.size() - 1);
}

inline double pearson_correlation(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2)
        throw std::invalid_argument("correlation needs two equal-length samples, n >= 2");
    double mx = mean(x), my = mean(y);
    double sxy = 0, sxx = 0, syy = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0 || syy == 0) throw std::invalid_argument("correlation undefined for constant sample");
    return sxy / std::sqrt(sxx * syy);
}

/// Welch two-sample t test p-value (two-sided, normal approximation on the
/// t statistic for the large samples this pipeline sees).
inline double welch_p_value(std::span<const double> a, std::span<const double> b) {
    double va = sample_variance(a) / double(a.size());
    double vb = sample_variance(b) / double(b.size());
    double t = (mean(a) - mean(b)) / std::sqrt(va + vb);
    return normal_two_sided_p(t);
}

}  // namespace loadshock::stats
