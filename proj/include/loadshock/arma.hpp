#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <span>
#include <vector>

#include "loadshock/core.hpp"
#include "loadshock/optim.hpp"
#include "loadshock/rng.hpp"

namespace loadshock::arma {

constexpr double kTwoPi = 6.283185307179586476925286766559;

/// Roots of 1 - sum a_i z^i lie outside the unit circle iff all companion
/// eigenvalues lie inside.
inline bool companion_roots_inside(std::span<const double> a) {
    int m = int(a.size());
    while (m > 0 && a[size_t(m - 1)] == 0.0) --m;  // trailing zeros don't move roots
    if (m == 0) return true;
    Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(m, m);
    for (int i = 0; i < m; ++i) companion(0, i) = a[size_t(i)];
    for (int i = 1; i < m; ++i) companion(i, i - 1) = 1.0;
    for (const auto& ev : companion.eigenvalues())
        if (std::abs(ev) >= 1.0 - 1e-10) return false;
    return true;
}

inline bool is_stationary(std::span<const double> phi) { return companion_roots_inside(phi); }

inline bool is_invertible(std::span<const double> theta) {
    std::vector<double> negated(theta.begin(), theta.end());
    for (double& v : negated) v = -v;
    return companion_roots_inside(negated);
}

/// Levinson-Durbin expansion: partial autocorrelations in (-1,1)^m to AR
/// coefficients of a stationary process.
inline std::vector<double> pacf_to_ar(std::span<const double> pacf) {
    std::vector<double> a;
    for (size_t j = 0; j < pacf.size(); ++j) {
        std::vector<double> next(j + 1);
        next[j] = pacf[j];
        for (size_t i = 0; i < j; ++i) next[i] = a[i] - pacf[j] * a[j - 1 - i];
        a = std::move(next);
    }
    return a;
}

inline std::vector<double> ar_to_pacf(std::span<const double> ar) {
    std::vector<double> a(ar.begin(), ar.end());
    std::vector<double> pacf(ar.size());
    for (size_t j = ar.size(); j-- > 0;) {
        const double pj = a[j];
        if (std::fabs(pj) >= 1.0)
            throw EstimationError("ar_to_pacf: coefficients outside the stationary region");
        pacf[j] = pj;
        const double denom = 1.0 - pj * pj;
        std::vector<double> prev(j);
        for (size_t i = 0; i < j; ++i) prev[i] = (a[i] + pj * a[j - 1 - i]) / denom;
        a = std::move(prev);
    }
    return pacf;
}

/// Unconstrained optimizer coordinates: z -> tanh(z) -> (phi, theta) with
/// stationarity and invertibility holding by construction. The MA block is
/// negated so the theta polynomial 1 + theta_1 z + ... keeps roots outside
/// the unit circle.
inline void z_to_coeffs(const Eigen::VectorXd& z, int p, int q,
                        std::vector<double>& phi, std::vector<double>& theta) {
    std::vector<double> pac(size_t(p), 0.0);
    for (int i = 0; i < p; ++i) pac[size_t(i)] = std::tanh(z[i]);
    phi = pacf_to_ar(pac);
    pac.resize(size_t(q));
    for (int i = 0; i < q; ++i) pac[size_t(i)] = std::tanh(z[p + i]);
    theta = pacf_to_ar(pac);
    for (double& t : theta) t = -t;
}

inline Eigen::VectorXd coeffs_to_z(std::span<const double> phi, std::span<const double> theta) {
    auto atanh_clamped = [](double x) {
        x = std::clamp(x, -1.0 + 1e-8, 1.0 - 1e-8);
        return 0.5 * std::log((1.0 + x) / (1.0 - x));
    };
    Eigen::VectorXd z(long(phi.size() + theta.size()));
    auto pac = ar_to_pacf(phi);
    for (size_t i = 0; i < pac.size(); ++i) z[long(i)] = atanh_clamped(pac[i]);
    std::vector<double> neg(theta.begin(), theta.end());
    for (double& v : neg) v = -v;
    pac = ar_to_pacf(neg);
    for (size_t i = 0; i < pac.size(); ++i) z[long(phi.size() + i)] = atanh_clamped(pac[i]);
    return z;
}

/// Exact innovations filter for a zero-mean ARMA(p, q) with unit innovation
/// variance, in the usual companion state-space form. The covariance pass is
/// run once at construction; whitening a series is then a cheap linear sweep,
/// identical for every series of the same length, which is what makes GLS on
/// a whitened design affordable.
class KalmanFilter {
public:
    KalmanFilter(std::span<const double> phi, std::span<const double> theta, int n)
        : n_(n), p_(int(phi.size())), q_(int(theta.size())),
          r_(std::max(p_, q_ + 1)), phi_(phi.begin(), phi.end()),
          theta_(theta.begin(), theta.end()) {
        if (n <= 0) throw ValidationError("KalmanFilter: series length must be positive");

        Eigen::MatrixXd F = Eigen::MatrixXd::Zero(r_, r_);
        for (int i = 0; i + 1 < r_; ++i) F(i, i + 1) = 1.0;
        for (int i = 0; i < p_; ++i) F(r_ - 1, r_ - 1 - i) = phi_[size_t(i)];
        Eigen::RowVectorXd G = Eigen::RowVectorXd::Zero(r_);
        G[r_ - 1] = 1.0;
        for (int i = 1; i <= q_; ++i) G[r_ - 1 - i] = theta_[size_t(i - 1)];
        Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(r_, r_);
        Q(r_ - 1, r_ - 1) = 1.0;

        // stationary state covariance: P = F P F' + Q via the vectorized solve
        const int rr = r_ * r_;
        Eigen::MatrixXd A = Eigen::MatrixXd::Identity(rr, rr);
        for (int c2 = 0; c2 < r_; ++c2)
            for (int c1 = 0; c1 < r_; ++c1)
                for (int r2 = 0; r2 < r_; ++r2)
                    for (int r1 = 0; r1 < r_; ++r1)
                        A(r2 * r_ + r1, c2 * r_ + c1) -= F(r1, c1) * F(r2, c2);
        Eigen::VectorXd vecQ = Eigen::Map<Eigen::VectorXd>(Q.data(), rr);
        Eigen::VectorXd vecP = A.partialPivLu().solve(vecQ);
        Eigen::MatrixXd P = Eigen::Map<Eigen::MatrixXd>(vecP.data(), r_, r_);
        P = 0.5 * (P + P.transpose()).eval();

        stationary_variance_ = (G * P * G.transpose())(0, 0);

        gains_.reserve(size_t(std::min(n_, 256)));
        rvar_.reserve(size_t(std::min(n_, 256)));
        log_det_ = 0;
        steady_from_ = n_ - 1;
        Eigen::MatrixXd P_next(r_, r_);
        for (int t = 0; t < n_; ++t) {
            const double rt = (G * P * G.transpose())(0, 0);
            if (!(rt > 0) || !std::isfinite(rt))
                throw EstimationError("KalmanFilter: nonpositive innovation variance");
            Eigen::VectorXd K = (F * P * G.transpose()) / rt;
            rvar_.push_back(rt);
            gains_.push_back(K);
            if (t + 1 < n_) {
                P_next = F * P * F.transpose() + Q - rt * (K * K.transpose());
                P_next = 0.5 * (P_next + P_next.transpose()).eval();
                if ((P_next - P).lpNorm<Eigen::Infinity>() <
                    1e-13 * (1.0 + P.lpNorm<Eigen::Infinity>())) {
                    steady_from_ = t;
                    break;
                }
                P = P_next;
            } else {
                steady_from_ = t;
            }
        }
        steady_from_ = int(rvar_.size()) - 1;
        for (int t = 0; t < n_; ++t) log_det_ += std::log(rvar_[size_t(std::min(t, steady_from_))]);
        sqrt_rvar_.resize(rvar_.size());
        for (size_t i = 0; i < rvar_.size(); ++i) sqrt_rvar_[i] = std::sqrt(rvar_[i]);
    }

    /// out_t = innovation_t / sqrt(r_t); the map is linear in the input.
    void whiten(std::span<const double> in, std::span<double> out) const {
        if (int(in.size()) != n_ || int(out.size()) != n_)
            throw ValidationError("KalmanFilter::whiten: length mismatch");
        Eigen::VectorXd a = Eigen::VectorXd::Zero(r_);
        Eigen::VectorXd a_next(r_);
        for (int t = 0; t < n_; ++t) {
            const int idx = std::min(t, steady_from_);
            // G a
            double pred = a[r_ - 1];
            for (int i = 1; i <= q_; ++i) pred += theta_[size_t(i - 1)] * a[r_ - 1 - i];
            const double e = in[size_t(t)] - pred;
            out[size_t(t)] = e / sqrt_rvar_[size_t(idx)];
            // a <- F a + K e, with F a computed through the companion structure
            for (int i = 0; i + 1 < r_; ++i) a_next[i] = a[i + 1];
            double last = 0;
            for (int i = 0; i < p_; ++i) last += phi_[size_t(i)] * a[r_ - 1 - i];
            a_next[r_ - 1] = last;
            a = a_next + gains_[size_t(idx)] * e;
        }
    }

    double log_det() const { return log_det_; }
    int length() const { return n_; }

    /// Var(u_t) for unit innovation variance (the psi-weight sum of squares).
    double stationary_variance_ratio() const { return stationary_variance_; }

private:
    int n_, p_, q_, r_;
    std::vector<double> phi_, theta_;
    std::vector<Eigen::VectorXd> gains_;
    std::vector<double> rvar_, sqrt_rvar_;
    double log_det_ = 0;
    double stationary_variance_ = 1;
    int steady_from_ = 0;
};

inline double unconditional_variance_ratio(std::span<const double> phi,
                                           std::span<const double> theta) {
    if (!is_stationary(phi))
        throw EstimationError("unconditional_variance_ratio: AR part not stationary");
    return KalmanFilter(phi, theta, 1).stationary_variance_ratio();
}

/// Autocovariances gamma(0..max_lag) for unit innovation variance, from the
/// psi-weight expansion truncated once the tail is negligible.
inline std::vector<double> autocovariances(std::span<const double> phi,
                                           std::span<const double> theta, int max_lag) {
    if (!is_stationary(phi))
        throw EstimationError("autocovariances: AR part not stationary");
    const int p = int(phi.size()), q = int(theta.size());
    std::vector<double> psi{1.0};
    int quiet = 0;  // oscillating weights need a run of small terms, not one
    for (int j = 1; j < max_lag + 100000 && (j <= std::max(p, q) || quiet < 30); ++j) {
        double v = j <= q ? theta[size_t(j - 1)] : 0.0;
        for (int i = 1; i <= std::min(j, p); ++i) v += phi[size_t(i - 1)] * psi[size_t(j - i)];
        psi.push_back(v);
        quiet = std::fabs(v) < 1e-15 ? quiet + 1 : 0;
    }
    std::vector<double> acvf(size_t(max_lag + 1), 0.0);
    for (int h = 0; h <= max_lag; ++h) {
        double s = 0;
        for (size_t j = 0; j + size_t(h) < psi.size(); ++j) s += psi[j] * psi[j + size_t(h)];
        acvf[size_t(h)] = s;
    }
    return acvf;
}

/// Gaussian log-likelihood of a zero-mean series with the innovation variance
/// profiled out: the returned sigma2 is the profile maximizer SS/n.
struct ProfileLik {
    double loglik;
    double sigma2;
};

inline ProfileLik profile_loglik(std::span<const double> series,
                                 std::span<const double> phi,
                                 std::span<const double> theta) {
    const int n = int(series.size());
    KalmanFilter kf(phi, theta, n);
    std::vector<double> w(size_t(n), 0.0);
    kf.whiten(series, w);
    double ss = 0;
    for (double v : w) ss += v * v;
    const double sigma2 = ss / n;
    if (!(sigma2 > 0)) return {std::numeric_limits<double>::infinity(), 0.0};
    const double ll = -0.5 * (n * std::log(kTwoPi * sigma2) + n + kf.log_det());
    return {ll, sigma2};
}

inline double exact_loglik(std::span<const double> series, std::span<const double> phi,
                           std::span<const double> theta, double sigma2) {
    const int n = int(series.size());
    KalmanFilter kf(phi, theta, n);
    std::vector<double> w(size_t(n), 0.0);
    kf.whiten(series, w);
    double ss = 0;
    for (double v : w) ss += v * v;
    return -0.5 * (n * std::log(kTwoPi * sigma2) + ss / sigma2 + kf.log_det());
}

/// Conditional sum of squares, zeros for pre-sample values. Used only to
/// start the exact-likelihood optimizer.
inline double conditional_ss(std::span<const double> u, std::span<const double> phi,
                             std::span<const double> theta) {
    const int n = int(u.size());
    const int p = int(phi.size()), q = int(theta.size());
    std::vector<double> e(size_t(n), 0.0);
    double ss = 0;
    for (int t = p; t < n; ++t) {
        double v = u[size_t(t)];
        for (int i = 1; i <= p; ++i) v -= phi[size_t(i - 1)] * u[size_t(t - i)];
        for (int j = 1; j <= q && t - j >= 0; ++j) v -= theta[size_t(j - 1)] * e[size_t(t - j)];
        e[size_t(t)] = v;
        ss += v * v;
    }
    return ss;
}

struct ArmaFit {
    std::vector<double> phi, theta;
    double sigma2 = 0;
    double loglik = 0;
    bool converged = false;
    double grad_norm = 0;
    Eigen::VectorXd z;  // optimizer coordinates at the optimum
};

/// Exact ML for a zero-mean ARMA(p, q): CSS start, BFGS in the transformed
/// space, then a few seeded restarts; the best likelihood wins.
inline ArmaFit fit_arma_ml(std::span<const double> series, int p, int q,
                           int n_restarts = 3, std::uint64_t restart_seed = 0x10adULL,
                           optim::Options opt_options = {}) {
    const int n = int(series.size());
    if (n <= p + q + 1)
        throw InsufficientDataError("fit_arma_ml: series too short for requested order");

    ArmaFit fit;
    if (p == 0 && q == 0) {
        double ss = 0;
        for (double v : series) ss += v * v;
        fit.sigma2 = ss / n;
        fit.loglik = fit.sigma2 > 0
                         ? -0.5 * (n * std::log(kTwoPi * fit.sigma2) + n)
                         : std::numeric_limits<double>::infinity();
        fit.converged = true;
        fit.z = Eigen::VectorXd();
        return fit;
    }

    std::vector<double> phi, theta;
    auto css_objective = [&](const Eigen::VectorXd& z) {
        z_to_coeffs(z, p, q, phi, theta);
        const double ss = conditional_ss(series, phi, theta);
        return ss > 0 ? 0.5 * n * std::log(ss / n) : -std::numeric_limits<double>::infinity();
    };
    auto ml_objective = [&](const Eigen::VectorXd& z) {
        z_to_coeffs(z, p, q, phi, theta);
        try {
            return -profile_loglik(series, phi, theta).loglik;
        } catch (const EstimationError&) {
            return std::numeric_limits<double>::infinity();
        }
    };

    auto css = optim::bfgs_minimize(css_objective, Eigen::VectorXd::Zero(p + q),
                                    {.max_iterations = 150});

    optim::Result best;
    rng::Engine engine(restart_seed);
    for (int attempt = 0; attempt <= n_restarts; ++attempt) {
        Eigen::VectorXd z0 = css.x;
        if (attempt > 0)
            for (long i = 0; i < z0.size(); ++i) z0[i] += 0.5 * engine.next_normal();
        auto res = optim::bfgs_minimize(ml_objective, z0, opt_options);
        if (res.value < best.value) best = res;
    }
    if (!std::isfinite(best.value))
        throw EstimationError("fit_arma_ml: likelihood not finite at any candidate");

    z_to_coeffs(best.x, p, q, phi, theta);
    auto prof = profile_loglik(series, phi, theta);
    fit.phi = phi;
    fit.theta = theta;
    fit.sigma2 = prof.sigma2;
    fit.loglik = prof.loglik;
    fit.converged = best.converged;
    fit.grad_norm = best.grad_norm;
    fit.z = best.x;
    return fit;
}

}  // namespace loadshock::arma
