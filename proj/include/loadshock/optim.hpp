#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <limits>

namespace loadshock::optim {

struct Options {
    int max_iterations = 300;
    double gradient_tol = 1e-7;   // relative to max(1, |f|)
    double step_tol = 1e-12;
    double fd_step = 1e-6;
    double max_step = 2.0;        // cap on the trial step length per iteration
};

struct Result {
    Eigen::VectorXd x;
    double value = std::numeric_limits<double>::infinity();
    double grad_norm = std::numeric_limits<double>::infinity();
    int iterations = 0;
    bool converged = false;
};

using Objective = std::function<double(const Eigen::VectorXd&)>;

inline Eigen::VectorXd numerical_gradient(const Objective& f, const Eigen::VectorXd& x,
                                          double h) {
    Eigen::VectorXd g(x.size());
    Eigen::VectorXd xp = x;
    for (long i = 0; i < x.size(); ++i) {
        const double step = h * std::max(1.0, std::fabs(x[i]));
        xp[i] = x[i] + step;
        const double fp = f(xp);
        xp[i] = x[i] - step;
        const double fm = f(xp);
        xp[i] = x[i];
        g[i] = (fp - fm) / (2.0 * step);
    }
    return g;
}

/// BFGS with numerical central-difference gradients and Armijo backtracking.
/// Objectives may return +inf for out-of-domain points; the line search backs
/// away from them.
inline Result bfgs_minimize(const Objective& f, Eigen::VectorXd x0, Options opts = {}) {
    const long n = x0.size();
    Result res;
    res.x = std::move(x0);
    res.value = f(res.x);
    if (!std::isfinite(res.value)) return res;

    Eigen::MatrixXd H = Eigen::MatrixXd::Identity(n, n);  // inverse-Hessian estimate
    Eigen::VectorXd g = numerical_gradient(f, res.x, opts.fd_step);

    for (int iter = 0; iter < opts.max_iterations; ++iter) {
        res.iterations = iter;
        res.grad_norm = g.lpNorm<Eigen::Infinity>();
        if (res.grad_norm <= opts.gradient_tol * std::max(1.0, std::fabs(res.value))) {
            res.converged = true;
            return res;
        }

        Eigen::VectorXd direction = -(H * g);
        double slope = g.dot(direction);
        if (!(slope < 0)) {  // reset a corrupted inverse-Hessian
            H.setIdentity();
            direction = -g;
            slope = g.dot(direction);
            if (!(slope < 0)) return res;
        }

        const double dir_norm = direction.norm();
        double step = dir_norm > opts.max_step ? opts.max_step / dir_norm : 1.0;
        double f_new = std::numeric_limits<double>::infinity();
        Eigen::VectorXd x_new;
        bool accepted = false;
        for (int ls = 0; ls < 50; ++ls) {
            x_new = res.x + step * direction;
            f_new = f(x_new);
            if (std::isfinite(f_new) && f_new <= res.value + 1e-4 * step * slope) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {
            // gradient may be noisy near the optimum; treat as converged when flat
            res.converged = res.grad_norm <= 1e-3 * std::max(1.0, std::fabs(res.value));
            return res;
        }

        Eigen::VectorXd g_new = numerical_gradient(f, x_new, opts.fd_step);
        Eigen::VectorXd s = x_new - res.x;
        Eigen::VectorXd yv = g_new - g;
        const double ys = yv.dot(s);
        if (ys > 1e-12 * yv.norm() * s.norm()) {
            const double rho = 1.0 / ys;
            Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
            H = (I - rho * s * yv.transpose()) * H * (I - rho * yv * s.transpose()) +
                rho * s * s.transpose();
        }

        res.x = x_new;
        res.value = f_new;
        g = g_new;
        if (s.norm() <= opts.step_tol * std::max(1.0, res.x.norm())) {
            res.grad_norm = g.lpNorm<Eigen::Infinity>();
            res.converged = true;
            return res;
        }
    }
    res.grad_norm = g.lpNorm<Eigen::Infinity>();
    res.converged = res.grad_norm <= opts.gradient_tol * std::max(1.0, std::fabs(res.value));
    return res;
}

}  // namespace loadshock::optim
