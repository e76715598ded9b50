#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "loadshock/core.hpp"

namespace loadshock::linreg {

struct OlsFit {
    Eigen::VectorXd coef;        // per input column; dropped columns carry 0
    Eigen::VectorXd std_error;   // NaN for dropped columns
    Eigen::MatrixXd cov;         // kept-by-kept covariance, sigma2 * (X'X)^-1
    std::vector<int> kept;       // input-column indices retained, in order
    std::vector<std::string> dropped;
    Eigen::VectorXd residuals;
    Eigen::VectorXd fitted;
    double ssr = 0;
    double sigma2 = 0;           // ssr / (n - k)
    double r_squared = 0;
    long n = 0;

    bool is_kept(int col) const {
        for (int k : kept)
            if (k == col) return true;
        return false;
    }
};

/// Columns that are numerically dependent on earlier ones are dropped, so
/// earlier columns win ties (intercept first, then base effects, then
/// interactions). Detection is a modified Gram-Schmidt sweep with
/// reorthogonalization.
inline std::vector<int> independent_columns(const Eigen::MatrixXd& X, double rel_tol = 1e-9) {
    const long n = X.rows(), k = X.cols();
    Eigen::MatrixXd basis(n, k);
    std::vector<int> kept;
    for (long j = 0; j < k; ++j) {
        Eigen::VectorXd v = X.col(j);
        const double orig_norm = v.norm();
        if (orig_norm == 0) continue;
        for (int pass = 0; pass < 2; ++pass)
            for (size_t b = 0; b < kept.size(); ++b)
                v -= basis.col(long(b)).dot(v) * basis.col(long(b));
        if (v.norm() <= rel_tol * orig_norm) continue;
        basis.col(long(kept.size())) = v / v.norm();
        kept.push_back(int(j));
    }
    return kept;
}

inline OlsFit fit_ols(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                      const std::vector<std::string>& col_names = {}) {
    if (X.rows() != y.size())
        throw ValidationError("fit_ols: row count mismatch between X and y");
    if (X.rows() == 0)
        throw ValidationError("fit_ols: empty design");

    OlsFit fit;
    fit.n = X.rows();
    fit.kept = independent_columns(X);
    if (fit.kept.empty())
        throw EstimationError("fit_ols: design matrix has no independent columns");
    for (long j = 0; j < X.cols(); ++j) {
        if (!fit.is_kept(int(j)))
            fit.dropped.push_back(col_names.empty() ? "col" + std::to_string(j)
                                                    : col_names[size_t(j)]);
    }

    Eigen::MatrixXd Xk(X.rows(), long(fit.kept.size()));
    for (size_t j = 0; j < fit.kept.size(); ++j) Xk.col(long(j)) = X.col(fit.kept[j]);

    Eigen::HouseholderQR<Eigen::MatrixXd> qr(Xk);
    Eigen::VectorXd beta_k = qr.solve(y);
    fit.fitted = Xk * beta_k;
    fit.residuals = y - fit.fitted;
    fit.ssr = fit.residuals.squaredNorm();

    const long dof = fit.n - long(fit.kept.size());
    fit.sigma2 = dof > 0 ? fit.ssr / double(dof) : 0.0;

    // (X'X)^-1 = R^-1 R^-T from the same factorization
    Eigen::MatrixXd R = qr.matrixQR().topRows(long(fit.kept.size()))
                            .triangularView<Eigen::Upper>();
    Eigen::MatrixXd Rinv = R.triangularView<Eigen::Upper>().solve(
        Eigen::MatrixXd::Identity(long(fit.kept.size()), long(fit.kept.size())));
    fit.cov = fit.sigma2 * (Rinv * Rinv.transpose());

    fit.coef = Eigen::VectorXd::Zero(X.cols());
    fit.std_error = Eigen::VectorXd::Constant(X.cols(), std::numeric_limits<double>::quiet_NaN());
    for (size_t j = 0; j < fit.kept.size(); ++j) {
        fit.coef[fit.kept[j]] = beta_k[long(j)];
        fit.std_error[fit.kept[j]] = std::sqrt(std::max(0.0, fit.cov(long(j), long(j))));
    }

    const double mean_y = y.mean();
    const double sst = (y.array() - mean_y).square().sum();
    fit.r_squared = sst > 0 ? 1.0 - fit.ssr / sst : 1.0;
    return fit;
}

/// Simple regression of y on x with intercept; returns slope, intercept, R^2.
struct SimpleFit {
    double slope = 0, intercept = 0, r_squared = 0;
    double slope_se = 0;
};

inline SimpleFit fit_simple(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 3)
        throw ValidationError("fit_simple: need two equal-length samples, n >= 3");
    const auto n = long(x.size());
    Eigen::MatrixXd X(n, 2);
    Eigen::VectorXd Y(n);
    for (long i = 0; i < n; ++i) {
        X(i, 0) = 1.0;
        X(i, 1) = x[size_t(i)];
        Y[i] = y[size_t(i)];
    }
    auto fit = fit_ols(X, Y, {"intercept", "slope"});
    if (fit.kept.size() < 2)
        throw EstimationError("fit_simple: regressor is constant");
    return {fit.coef[1], fit.coef[0], fit.r_squared, fit.std_error[1]};
}

}  // namespace loadshock::linreg
