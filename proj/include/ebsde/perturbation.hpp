#pragma once

#include <algorithm>
#include <limits>
#include <sstream>

#include "ebsde/chain.hpp"
#include "ebsde/driver.hpp"

namespace ebsde {

struct PerturbedRates {
    RateMatrix B;
    /// min over jumps (x -> i, a_ix > 0) of b_ix / a_ix, the gamma for which B - gamma A >= 0 off the diagonal.
    double balance_margin = 0.0;
    /// gamma * (min_x |a_xx| ^ 1) / 2: a strict-control constant for B, independent of Z and Z'.
    double gamma_star = 0.0;
};

/// Rate matrix of the chain under the change of measure generated by the
/// driver increment between Z and Z':
///   B x = A x + [f(x, Z) - f(x, Z')] / ||Z - Z'||^2_M * psi^x (Z - Z').
/// States where the seminorm vanishes keep their column of A.
inline PerturbedRates perturbed_rate_matrix(const RateMatrix& A, const Driver& f, const Vector& Z, const Vector& Zp) {
    const Eigen::Index n = A.size();
    if (f.size() != n || Z.size() != n || Zp.size() != n)
        throw Error(Errc::DimensionMismatch, "perturbation inputs differ in size");

    const Vector d = Z - Zp;
    Matrix b = A.rates();
    for (StateIndex x = 0; x < n; ++x) {
        const double norm2 = seminorm_sq(A, x, d);
        if (detail::negligible_seminorm(norm2, d, A)) continue;
        const double q = (f(x, Z) - f(x, Zp)) / norm2;
        double out = 0.0;
        for (StateIndex i = 0; i < n; ++i) {
            if (i == x) continue;
            const double rate = A(i, x) * (1.0 + q * (d(i) - d(x)));
            if (rate < 0.0) {
                std::ostringstream os;
                os << "perturbed rate " << x << " -> " << i << " is " << rate;
                throw Error(Errc::NotBalanced, os.str());
            }
            b(i, x) = rate;
            out += rate;
        }
        b(x, x) = -out;
    }

    double margin = std::numeric_limits<double>::infinity();
    double min_exit = std::numeric_limits<double>::infinity();
    for (StateIndex x = 0; x < n; ++x) {
        min_exit = std::min(min_exit, A.exit_rate(x));
        for (StateIndex i = 0; i < n; ++i)
            if (i != x && A(i, x) > 0.0) margin = std::min(margin, b(i, x) / A(i, x));
    }
    if (!std::isfinite(margin)) margin = 0.0;
    PerturbedRates out{RateMatrix::validate(b), margin, 0.0};
    out.gamma_star = margin * std::min(min_exit, 1.0) / 2.0;
    return out;
}

}  // namespace ebsde
