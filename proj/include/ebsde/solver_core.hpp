#pragma once

// Shared nonlinear machinery for the discounted and ergodic vector equations,
// both written as
//     G(w, mu) = f(., w) + A* w - alpha w - mu 1 = 0,   nu^T w = 0
// where nu fixes the additive constant of w.

#include <algorithm>
#include <cmath>
#include <limits>

#include "ebsde/chain.hpp"
#include "ebsde/driver.hpp"

namespace ebsde::detail {

inline Vector equation_residual(const RateMatrix& A, const Driver& f, double alpha, const Vector& w, double mu) {
    // A* annihilates constants; centring first keeps the product well scaled.
    const Vector centred = w.array() - w.mean();
    return f.evaluate(w) + A.generator() * centred - alpha * w - Vector::Constant(w.size(), mu);
}

/// Central-difference Jacobian of v -> f(., v).
inline Matrix driver_jacobian(const Driver& f, const Vector& v) {
    const Eigen::Index n = v.size();
    const double h = 1e-6 * (1.0 + v.cwiseAbs().maxCoeff());
    Matrix jac(n, n);
    Vector probe = v;
    for (Eigen::Index j = 0; j < n; ++j) {
        probe(j) = v(j) + h;
        const Vector up = f.evaluate(probe);
        probe(j) = v(j) - h;
        const Vector down = f.evaluate(probe);
        probe(j) = v(j);
        jac.col(j) = (up - down) / (2.0 * h);
    }
    return jac;
}

struct NewtonResult {
    Vector w;
    double mu = 0.0;
    double residual = std::numeric_limits<double>::infinity();
    int iterations = 0;
    bool converged = false;
};

/// Newton's method with backtracking on the bordered system for (w, mu).
inline NewtonResult newton_bordered(const RateMatrix& A, const Driver& f, double alpha, const Vector& nu, Vector w,
                                    double mu, double tol, int max_iters) {
    const Eigen::Index n = A.size();
    const Matrix gen = A.generator();
    auto merit = [&](const Vector& ww, double m) {
        return std::max(equation_residual(A, f, alpha, ww, m).cwiseAbs().maxCoeff(), std::abs(nu.dot(ww)));
    };

    NewtonResult out;
    double current = merit(w, mu);
    int it = 0;
    for (; it < max_iters && !(current <= tol); ++it) {
        Matrix jac = Matrix::Zero(n + 1, n + 1);
        jac.topLeftCorner(n, n) = driver_jacobian(f, w) + gen - alpha * Matrix::Identity(n, n);
        jac.topRightCorner(n, 1).setConstant(-1.0);
        jac.bottomLeftCorner(1, n) = nu.transpose();

        Vector rhs(n + 1);
        rhs.head(n) = -equation_residual(A, f, alpha, w, mu);
        rhs(n) = -nu.dot(w);
        Eigen::FullPivLU<Matrix> lu(jac);
        if (!lu.isInvertible()) break;
        const Vector step = lu.solve(rhs);

        double t = 1.0;
        bool accepted = false;
        for (int ls = 0; ls < 30; ++ls, t *= 0.5) {
            const Vector w_try = w + t * step.head(n);
            const double mu_try = mu + t * step(n);
            const double m = merit(w_try, mu_try);
            if (m < current || (m <= tol)) {
                w = w_try;
                mu = mu_try;
                current = m;
                accepted = true;
                break;
            }
        }
        if (!accepted) break;
    }
    out.w = std::move(w);
    out.mu = mu;
    out.residual = current;
    out.iterations = it;
    out.converged = current <= tol;
    return out;
}

}  // namespace ebsde::detail
