#pragma once

// Finite-state continuous-time Markov chains in column convention: entry (i, j)
// of a rate matrix is the jump rate from state j to state i, so columns sum to
// zero and the generator acting on functions is the transpose.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <sstream>
#include <vector>

#include "ebsde/error.hpp"

namespace ebsde {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using StateIndex = Eigen::Index;

inline constexpr double kColumnSumTolerance = 1e-12;
inline constexpr double kAutoProjectTolerance = 1e-9;
inline constexpr double kProbabilityTolerance = 1e-12;

namespace detail {

inline void require_state(Eigen::Index n, StateIndex x, const char* what) {
    if (x < 0 || x >= n) {
        std::ostringstream os;
        os << what << " index " << x << " outside [0, " << n << ")";
        throw Error(Errc::BadStateIndex, os.str());
    }
}

}  // namespace detail

class RateMatrix {
public:
    /// Validates `raw` and returns it as a rate matrix. Column sums off by at
    /// most 1e-9 are repaired on the diagonal and flagged through `was_projected()`.
    static RateMatrix validate(const Matrix& raw) {
        if (raw.rows() != raw.cols()) {
            std::ostringstream os;
            os << "rate matrix is " << raw.rows() << "x" << raw.cols();
            throw Error(Errc::NonSquare, os.str());
        }
        if (raw.rows() < 2) throw Error(Errc::InvalidArgument, "rate matrix needs at least 2 states");
        if (!raw.allFinite()) throw Error(Errc::NonFinite, "rate matrix has non-finite entries");

        const Eigen::Index n = raw.rows();
        for (Eigen::Index j = 0; j < n; ++j) {
            for (Eigen::Index i = 0; i < n; ++i) {
                if (i != j && raw(i, j) < 0.0) {
                    std::ostringstream os;
                    os << "entry (" << i << ", " << j << ") = " << raw(i, j);
                    throw Error(Errc::NegativeOffDiagonal, os.str());
                }
            }
        }

        Matrix rates = raw;
        bool projected = false;
        for (Eigen::Index j = 0; j < n; ++j) {
            const double scale = std::max(1.0, rates.col(j).cwiseAbs().maxCoeff());
            const double sum = rates.col(j).sum();
            if (std::abs(sum) <= kColumnSumTolerance * scale) continue;
            if (std::abs(sum) <= kAutoProjectTolerance * scale) {
                rates(j, j) -= sum;
                projected = true;
                continue;
            }
            std::ostringstream os;
            os << "column " << j << " sums to " << sum;
            throw Error(Errc::ColumnSumNonzero, os.str());
        }
        return RateMatrix(std::move(rates), projected);
    }

    Eigen::Index size() const { return rates_.rows(); }
    const Matrix& rates() const { return rates_; }
    double operator()(StateIndex i, StateIndex j) const { return rates_(i, j); }

    /// Transpose A*, the generator acting on functions of the state.
    Matrix generator() const { return rates_.transpose(); }

    double exit_rate(StateIndex x) const { return -rates_(x, x); }
    double max_exit_rate() const { return (-rates_.diagonal()).maxCoeff(); }

    bool was_projected() const { return projected_; }

private:
    RateMatrix(Matrix rates, bool projected) : rates_(std::move(rates)), projected_(projected) {}

    Matrix rates_;
    bool projected_ = false;
};

inline RateMatrix validate_rate_matrix(const Matrix& raw) { return RateMatrix::validate(raw); }

class ProbabilityVector {
public:
    static ProbabilityVector from(const Vector& weights) {
        if (!weights.allFinite()) throw Error(Errc::NonFinite, "probability vector has non-finite weights");
        if ((weights.array() < 0.0).any())
            throw Error(Errc::InvalidArgument, "probability vector has negative weights");
        if (std::abs(weights.sum() - 1.0) > kProbabilityTolerance) {
            std::ostringstream os;
            os << "probability weights sum to " << weights.sum();
            throw Error(Errc::InvalidArgument, os.str());
        }
        return ProbabilityVector(weights);
    }

    static ProbabilityVector point_mass(Eigen::Index n, StateIndex x) {
        detail::require_state(n, x, "point mass");
        Vector w = Vector::Zero(n);
        w(x) = 1.0;
        return ProbabilityVector(std::move(w));
    }

    static ProbabilityVector uniform(Eigen::Index n) {
        return ProbabilityVector(Vector::Constant(n, 1.0 / static_cast<double>(n)));
    }

    const Vector& weights() const { return weights_; }
    double operator()(StateIndex x) const { return weights_(x); }
    Eigen::Index size() const { return weights_.size(); }

private:
    explicit ProbabilityVector(Vector w) : weights_(std::move(w)) {}
    friend ProbabilityVector normalize_probability(Vector v);

    Vector weights_;
};

/// Clamps rounding-level negatives to zero and rescales to unit mass.
inline ProbabilityVector normalize_probability(Vector v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (v(i) < 0.0) {
            if (v(i) < -1e-9) throw Error(Errc::SolveFailure, "probability vector component below -1e-9");
            v(i) = 0.0;
        }
    }
    const double s = v.sum();
    if (!(s > 0.0)) throw Error(Errc::SolveFailure, "probability vector has zero mass");
    v /= s;
    return ProbabilityVector(std::move(v));
}

/// Strong connectivity of the jump graph (edge j -> i whenever A(i, j) > 0).
inline bool is_irreducible(const RateMatrix& A) {
    const Eigen::Index n = A.size();
    auto reach_all = [&](bool forward) {
        std::vector<char> seen(static_cast<std::size_t>(n), 0);
        std::vector<Eigen::Index> stack{0};
        seen[0] = 1;
        Eigen::Index count = 1;
        while (!stack.empty()) {
            const Eigen::Index j = stack.back();
            stack.pop_back();
            for (Eigen::Index i = 0; i < n; ++i) {
                const double rate = forward ? A(i, j) : A(j, i);
                if (i != j && rate > 0.0 && !seen[static_cast<std::size_t>(i)]) {
                    seen[static_cast<std::size_t>(i)] = 1;
                    ++count;
                    stack.push_back(i);
                }
            }
        }
        return count == n;
    };
    return reach_all(true) && reach_all(false);
}

inline void require_irreducible(const RateMatrix& A) {
    if (!is_irreducible(A)) throw Error(Errc::Reducible, "jump graph is not strongly connected");
}

/// Invariant law: A pi = 0, pi >= 0, sum(pi) = 1. Uses a column-pivoted QR
/// least-squares solve of the bordered system [A; 1^T] pi = [0; 1]; the
/// nullspace dimension is checked from the rank of A.
inline ProbabilityVector stationary_distribution(const RateMatrix& A) {
    require_irreducible(A);
    const Eigen::Index n = A.size();
    const Matrix& a = A.rates();

    Eigen::ColPivHouseholderQR<Matrix> rank_qr(a);
    rank_qr.setThreshold(1e-12);
    if (rank_qr.rank() != n - 1) {
        std::ostringstream os;
        os << "nullspace of the rate matrix has dimension " << n - rank_qr.rank();
        throw Error(Errc::Reducible, os.str());
    }

    Matrix bordered(n + 1, n);
    bordered.topRows(n) = a;
    bordered.row(n).setOnes();
    Vector rhs = Vector::Zero(n + 1);
    rhs(n) = 1.0;

    Eigen::ColPivHouseholderQR<Matrix> qr(bordered);
    Vector pi = qr.solve(rhs);
    // One step of iterative refinement.
    pi += qr.solve(Vector(rhs - bordered * pi));

    const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
    if ((a * pi).cwiseAbs().maxCoeff() > 1e-12 * scale)
        throw Error(Errc::SolveFailure, "stationary residual above 1e-12");
    return normalize_probability(std::move(pi));
}

namespace detail {

// exp(t A) * M by uniformization, splitting t so each chunk has q*dt <= 32.
inline Matrix propagate(const RateMatrix& A, Matrix m, double t) {
    if (!(t >= 0.0) || !std::isfinite(t)) throw Error(Errc::InvalidArgument, "time must be finite and >= 0");
    const double q = A.max_exit_rate();
    if (t == 0.0 || q == 0.0) return m;

    const Eigen::Index n = A.size();
    const Matrix jump = Matrix::Identity(n, n) + A.rates() / q;
    const double total = q * t;
    const auto chunks = static_cast<long>(std::ceil(total / 32.0));
    const double lambda = total / static_cast<double>(chunks);

    for (long c = 0; c < chunks; ++c) {
        double weight = std::exp(-lambda);
        double mass = weight;
        Matrix term = m;
        Matrix acc = weight * term;
        for (long k = 1;; ++k) {
            term = jump * term;
            weight *= lambda / static_cast<double>(k);
            acc += weight * term;
            mass += weight;
            if (static_cast<double>(k) > lambda && 1.0 - mass < 1e-17) break;
            if (k > 10000) break;
        }
        m = std::move(acc);
    }
    return m;
}

}  // namespace detail

/// Law of the chain at time t started from mu0, exp(tA) mu0.
inline ProbabilityVector law_at(const RateMatrix& A, const ProbabilityVector& mu0, double t) {
    if (mu0.size() != A.size()) throw Error(Errc::DimensionMismatch, "initial law and rate matrix differ in size");
    if (t == 0.0) return mu0;
    Matrix out = detail::propagate(A, mu0.weights(), t);
    return normalize_probability(out.col(0));
}

/// Transition matrix exp(tA); column x is the law at time t from state x.
inline Matrix transition_matrix(const RateMatrix& A, double t) {
    return detail::propagate(A, Matrix::Identity(A.size(), A.size()), t);
}

/// psi^x = diag(Ax) - A diag(x) - diag(x) A^T. Symmetric PSD with 1 in its kernel.
inline Matrix psi(const RateMatrix& A, StateIndex x) {
    const Eigen::Index n = A.size();
    detail::require_state(n, x, "state");
    Matrix out = Matrix::Zero(n, n);
    const Vector col = A.rates().col(x);
    out.diagonal() = col;
    out.col(x) -= col;
    out.row(x) -= col.transpose();
    return out;
}

/// ||z||^2_M at state x. Evaluated in the expanded form sum_{j != x} a_jx (z_j - z_x)^2,
/// which is the quadratic form of psi(A, x) without cancellation.
inline double seminorm_sq(const RateMatrix& A, StateIndex x, const Vector& z) {
    const Eigen::Index n = A.size();
    detail::require_state(n, x, "state");
    if (z.size() != n) throw Error(Errc::DimensionMismatch, "vector length differs from state count");
    double s = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
        if (j == x) continue;
        const double d = z(j) - z(x);
        s += A(j, x) * d * d;
    }
    return std::max(s, 0.0);
}

/// Total variation in the un-halved convention, sum_x |f(x)|.
inline double tv_norm(const Vector& v) { return v.cwiseAbs().sum(); }

/// Deviation matrix D = integral_0^inf (exp(tA) - pi 1^T) dt = (pi 1^T - A)^{-1} - pi 1^T.
/// Column x is the signed measure mu^x. (pi 1^T - A) inverts A on the complement
/// of span(pi) and is the identity on span(pi).
inline Matrix deviation_matrix(const RateMatrix& A) {
    const Vector pi = stationary_distribution(A).weights();
    const Eigen::Index n = A.size();
    const Matrix proj = pi * Vector::Ones(n).transpose();
    Eigen::PartialPivLU<Matrix> lu(proj - A.rates());
    Matrix d = lu.solve(Matrix::Identity(n, n)) - proj;
    // Exact column sums are zero; remove rounding drift.
    for (Eigen::Index j = 0; j < n; ++j) d.col(j) -= pi * d.col(j).sum();
    return d;
}

inline Vector deviation_measure(const RateMatrix& A, StateIndex x) {
    detail::require_state(A.size(), x, "state");
    return deviation_matrix(A).col(x);
}

struct QuadratureConfig {
    double integrand_tol = 1e-12;
    double max_time = 1e7;
};

/// mu^x by Gauss-Legendre quadrature of exp(tA) delta_x - pi on panels of
/// length 1/q, stopped once the integrand falls below `integrand_tol`.
inline Vector deviation_measure_quadrature(const RateMatrix& A, StateIndex x, const QuadratureConfig& cfg = {}) {
    const Eigen::Index n = A.size();
    detail::require_state(n, x, "state");
    const Vector pi = stationary_distribution(A).weights();

    static constexpr std::array<double, 8> nodes{-0.9602898564975363, -0.7966664774136267, -0.5255324099163290,
                                                 -0.1834346424956498, 0.1834346424956498,  0.5255324099163290,
                                                 0.7966664774136267,  0.9602898564975363};
    static constexpr std::array<double, 8> weights{0.1012285362903763, 0.2223810344533745, 0.3137066458778873,
                                                   0.3626837833783620, 0.3626837833783620, 0.3137066458778873,
                                                   0.2223810344533745, 0.1012285362903763};

    const double h = 1.0 / std::max(A.max_exit_rate(), 1e-300);
    std::array<Matrix, 8> at_node;
    for (std::size_t k = 0; k < nodes.size(); ++k) at_node[k] = transition_matrix(A, 0.5 * h * (nodes[k] + 1.0));
    const Matrix step = transition_matrix(A, h);

    Vector law = Vector::Zero(n);
    law(x) = 1.0;
    Vector integral = Vector::Zero(n);
    double t = 0.0;
    while (true) {
        for (std::size_t k = 0; k < nodes.size(); ++k) integral += 0.5 * h * weights[k] * (at_node[k] * law - pi);
        law = step * law;
        t += h;
        if ((law - pi).cwiseAbs().maxCoeff() < cfg.integrand_tol) break;
        if (t > cfg.max_time) throw Error(Errc::QuadratureNonconvergent, "integrand did not decay before max_time");
    }
    return integral;
}

struct OrderViolation {
    Errc kind = Errc::NegativeOffDiagonal;  // or NotStrictlyControlled for a diagonal above -gamma
    StateIndex row = 0;
    StateIndex col = 0;
    double value = 0.0;
};

struct OrderReport {
    double gamma = 0.0;
    bool controlled = false;           // B - gamma A is a rate matrix
    bool strictly_controlled = false;  // additionally diag(B - gamma A) <= -gamma
    std::optional<OrderViolation> violation;
};

/// Checks gamma A <= B in the rate-matrix partial order (B - gamma A is a rate matrix),
/// and with `strict` also that every diagonal entry of B - gamma A is at most -gamma.
inline OrderReport rate_order_check(const RateMatrix& A, const RateMatrix& B, double gamma, bool strict) {
    if (A.size() != B.size()) throw Error(Errc::DimensionMismatch, "rate matrices differ in size");
    if (!(gamma > 0.0)) throw Error(Errc::InvalidArgument, "gamma must be positive");
    const Eigen::Index n = A.size();
    const Matrix diff = B.rates() - gamma * A.rates();
    const double tol = 1e-12 * std::max({1.0, A.rates().cwiseAbs().maxCoeff(), B.rates().cwiseAbs().maxCoeff()});

    OrderReport report;
    report.gamma = gamma;
    for (Eigen::Index j = 0; j < n; ++j) {
        for (Eigen::Index i = 0; i < n; ++i) {
            if (i != j && diff(i, j) < -tol) {
                report.violation = OrderViolation{Errc::NegativeOffDiagonal, i, j, diff(i, j)};
                return report;
            }
        }
    }
    report.controlled = true;
    if (!strict) return report;
    for (Eigen::Index j = 0; j < n; ++j) {
        if (diff(j, j) > -gamma + tol) {
            report.violation = OrderViolation{Errc::NotStrictlyControlled, j, j, diff(j, j)};
            return report;
        }
    }
    report.strictly_controlled = true;
    return report;
}

/// Largest gamma for which B - gamma A stays a rate matrix with diagonal <= -gamma,
/// assuming A has no state with zero exit rate. Returns 0 when none exists.
inline double best_strict_control_constant(const RateMatrix& A, const RateMatrix& B) {
    if (A.size() != B.size()) throw Error(Errc::DimensionMismatch, "rate matrices differ in size");
    const Eigen::Index n = A.size();
    double gamma = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < n; ++j) {
        for (Eigen::Index i = 0; i < n; ++i) {
            if (i != j && A(i, j) > 0.0) gamma = std::min(gamma, B(i, j) / A(i, j));
        }
        // -B_jj + gamma A_jj >= gamma  <=>  gamma (1 + |A_jj|) <= |B_jj|
        gamma = std::min(gamma, B.exit_rate(j) / (1.0 + A.exit_rate(j)));
    }
    return std::isfinite(gamma) ? std::max(gamma, 0.0) : 0.0;
}

/// Solver for alpha u - A* u = g split along 1 and the pi-centred complement:
/// u = (pi^T g / alpha) 1 + y with pi^T y = 0. The centred part solves
/// (alpha I - A* + 1 pi^T) y = g - (pi^T g) 1, which is nonsingular for every
/// alpha >= 0, so alpha = 0 gives the Poisson equation A* y = (pi^T g) 1 - g.
class CenteredResolvent {
public:
    struct Split {
        double average = 0.0;  // pi^T g
        Vector centered;       // y
    };

    CenteredResolvent(const RateMatrix& A, double alpha)
        : pi_(stationary_distribution(A).weights()), alpha_(alpha) {
        if (!(alpha >= 0.0)) throw Error(Errc::InvalidArgument, "alpha must be >= 0");
        const Eigen::Index n = A.size();
        Matrix m = alpha * Matrix::Identity(n, n) - A.generator() + Vector::Ones(n) * pi_.transpose();
        lu_.compute(m);
    }

    Split solve(const Vector& g) const {
        Split s;
        s.average = pi_.dot(g);
        s.centered = lu_.solve(Vector(g.array() - s.average));
        s.centered.array() -= pi_.dot(s.centered);
        return s;
    }

    const Vector& pi() const { return pi_; }
    double alpha() const { return alpha_; }

private:
    Vector pi_;
    double alpha_;
    Eigen::PartialPivLU<Matrix> lu_;
};

struct ErgodicityEstimate {
    double R = 0.0;
    double rho = 0.0;
    double horizon = 0.0;
    double max_tv_residual = 0.0;  // Chebyshev error of the log-domain fit
    std::vector<double> times;
    std::vector<double> distances;  // max_x ||P_t delta_x - pi||_TV
};

/// Fits sup_mu ||P_t mu - pi||_TV <= R exp(-rho t) on a geometric grid of
/// `samples` times up to `horizon`. The supremum is taken over point masses.
/// Samples below 1e-11 are numerical noise and are dropped from the fit.
inline ErgodicityEstimate ergodicity_estimate(const RateMatrix& A, double horizon, int samples = 64) {
    require_irreducible(A);
    if (!(horizon > 0.0) || !std::isfinite(horizon)) throw Error(Errc::InvalidArgument, "horizon must be positive");
    if (samples < 3) throw Error(Errc::InvalidArgument, "need at least 3 samples");

    const Eigen::Index n = A.size();
    const Vector pi = stationary_distribution(A).weights();
    ErgodicityEstimate est;
    est.horizon = horizon;

    const double t0 = horizon * 1e-3;
    const double ratio = std::pow(horizon / t0, 1.0 / (samples - 1));
    double prev_t = 0.0;
    Matrix p = Matrix::Identity(n, n);
    for (int k = 0; k < samples; ++k) {
        const double t = (k == samples - 1) ? horizon : t0 * std::pow(ratio, k);
        p = detail::propagate(A, p, t - prev_t);
        prev_t = t;
        double d = 0.0;
        for (Eigen::Index x = 0; x < n; ++x) d = std::max(d, tv_norm(p.col(x) - pi));
        est.times.push_back(t);
        est.distances.push_back(d);
    }

    if (*std::min_element(est.distances.begin(), est.distances.end()) >= 0.5)
        throw Error(Errc::NoDecay, "distance to stationarity stays above 0.5 on the horizon");

    std::vector<double> ts, ys;
    for (std::size_t k = 0; k < est.times.size(); ++k) {
        if (est.distances[k] >= 1e-11) {
            ts.push_back(est.times[k]);
            ys.push_back(std::log(est.distances[k]));
        }
    }
    auto spread = [&](double rho) {
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (std::size_t k = 0; k < ts.size(); ++k) {
            lo = std::min(lo, ys[k] + rho * ts[k]);
            hi = std::max(hi, ys[k] + rho * ts[k]);
        }
        return std::pair{lo, hi};
    };

    double upper = 1.0;
    for (std::size_t k = 1; k < ts.size(); ++k)
        upper = std::max(upper, 2.0 * std::abs(ys[k] - ys[k - 1]) / (ts[k] - ts[k - 1]));
    double lo = 0.0, hi = upper;
    const double golden = 0.5 * (std::sqrt(5.0) - 1.0);
    auto err = [&](double rho) {
        auto [a, b] = spread(rho);
        return 0.5 * (b - a);
    };
    double c = hi - golden * (hi - lo), d = lo + golden * (hi - lo);
    double fc = err(c), fd = err(d);
    for (int it = 0; it < 200 && hi - lo > 1e-13 * std::max(1.0, hi); ++it) {
        if (fc < fd) {
            hi = d;
            d = c;
            fd = fc;
            c = hi - golden * (hi - lo);
            fc = err(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + golden * (hi - lo);
            fd = err(d);
        }
    }
    est.rho = 0.5 * (lo + hi);
    if (!(est.rho > 0.0)) throw Error(Errc::NoDecay, "fitted decay rate is not positive");
    auto [low, high] = spread(est.rho);
    est.max_tv_residual = 0.5 * (high - low);
    est.R = std::exp(high);
    return est;
}

}  // namespace ebsde
