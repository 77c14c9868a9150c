#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ebsde/chain.hpp"

namespace ebsde {

enum class BalanceClass { fails, weakly_balanced, balanced, strictly_balanced };

inline const char* to_string(BalanceClass c) {
    switch (c) {
    case BalanceClass::fails: return "fails";
    case BalanceClass::weakly_balanced: return "weakly_balanced";
    case BalanceClass::balanced: return "balanced";
    case BalanceClass::strictly_balanced: return "strictly_balanced";
    }
    return "unknown";
}

/// Closed-form facts about a built-in driver. `margin` is a lower bound on
/// 1 + inf of the balance ratio over all (z, z', jump); positive means strictly balanced.
struct DriverCertificate {
    double margin = 0.0;
    double lipschitz = 0.0;  // w.r.t. ||.||_M, uniform over states
};

/// Nonlinearity f(x, z) of the equation. The argument is canonicalised to
/// z - z_x 1 before the wrapped function sees it, so drivers depend on z only
/// through differences.
class Driver {
public:
    using Function = std::function<double(StateIndex, const Vector&)>;

    Driver(Eigen::Index n, Function fn, std::string name = "custom", std::optional<DriverCertificate> cert = {})
        : n_(n), fn_(std::move(fn)), name_(std::move(name)), cert_(cert) {
        if (n < 1) throw Error(Errc::InvalidArgument, "driver needs at least one state");
        const Vector zero = Vector::Zero(n);
        for (StateIndex x = 0; x < n; ++x) bound_ = std::max(bound_, std::abs((*this)(x, zero)));
    }

    double operator()(StateIndex x, const Vector& z) const {
        if (z.size() != n_) throw Error(Errc::DimensionMismatch, "driver argument has wrong length");
        detail::require_state(n_, x, "driver state");
        return fn_(x, Vector(z.array() - z(x)));
    }

    /// The vector (f(e_1, v), ..., f(e_n, v)).
    Vector evaluate(const Vector& v) const {
        Vector out(n_);
        for (StateIndex x = 0; x < n_; ++x) out(x) = (*this)(x, v);
        return out;
    }

    Eigen::Index size() const { return n_; }
    const std::string& name() const { return name_; }
    /// C = max_x |f(x, 0)|.
    double bound_at_zero() const { return bound_; }
    const std::optional<DriverCertificate>& certificate() const { return cert_; }

private:
    Eigen::Index n_;
    Function fn_;
    std::string name_;
    std::optional<DriverCertificate> cert_;
    double bound_ = 0.0;
};

/// Balance certificate for a driver whose difference quotients lie in the hull
/// of the linear maps z -> z^T M_k x for the given direction matrices M_k.
/// For each state x and target i the worst ratio of one direction is the
/// smallest eigenvalue of a rank-two form: (c_i - |b| / sqrt(a_ix)) / 2 with
/// b_j = M(j, x) / sqrt(a_jx) and c_i = M(i, x) / a_ix. Directions that move
/// mass where A has no rate make the driver non-Lipschitz in ||.||_M.
inline DriverCertificate affine_family_certificate(const RateMatrix& A, const std::vector<Matrix>& directions) {
    const Eigen::Index n = A.size();
    double worst = 0.0;
    double lipschitz = 0.0;
    for (const Matrix& m : directions) {
        for (StateIndex x = 0; x < n; ++x) {
            double b2 = 0.0;
            bool unbounded = false;
            for (StateIndex j = 0; j < n; ++j) {
                if (j == x) continue;
                if (A(j, x) > 0.0) {
                    b2 += m(j, x) * m(j, x) / A(j, x);
                } else if (m(j, x) != 0.0) {
                    unbounded = true;
                }
            }
            if (unbounded) {
                worst = -std::numeric_limits<double>::infinity();
                lipschitz = std::numeric_limits<double>::infinity();
                continue;
            }
            const double b = std::sqrt(b2);
            lipschitz = std::max(lipschitz, b);
            for (StateIndex i = 0; i < n; ++i) {
                if (i == x || !(A(i, x) > 0.0)) continue;
                const double c = m(i, x) / A(i, x);
                worst = std::min(worst, 0.5 * (c - b / std::sqrt(A(i, x))));
            }
        }
    }
    return {1.0 + worst, lipschitz};
}

inline Driver zero_driver(Eigen::Index n) {
    return Driver(n, [](StateIndex, const Vector&) { return 0.0; }, "zero", DriverCertificate{1.0, 0.0});
}

/// f(x, z) = g(x).
inline Driver state_cost_driver(const Vector& g) {
    if (!g.allFinite()) throw Error(Errc::NonFinite, "state cost has non-finite entries");
    return Driver(
        g.size(), [g](StateIndex x, const Vector&) { return g(x); }, "state_cost", DriverCertificate{1.0, 0.0});
}

/// f(x, z) = z^T M x for a matrix M with zero column sums (e.g. A' - A).
inline Driver linear_driver(const RateMatrix& A, const Matrix& direction) {
    if (direction.rows() != A.size() || direction.cols() != A.size())
        throw Error(Errc::DimensionMismatch, "direction matrix has wrong shape");
    for (Eigen::Index j = 0; j < direction.cols(); ++j) {
        if (std::abs(direction.col(j).sum()) > 1e-10 * std::max(1.0, direction.col(j).cwiseAbs().maxCoeff()))
            throw Error(Errc::ColumnSumNonzero, "direction matrix columns must sum to zero");
    }
    return Driver(
        A.size(), [direction](StateIndex x, const Vector& z) { return z.dot(direction.col(x)); }, "linear",
        affine_family_certificate(A, {direction}));
}

/// Indicator cost on zeta with the overall jump rate scaled adversarially by r in [1/beta, beta]:
/// f(x, z) = 1{x in zeta} + min_r (r - 1) z^T A x. The minimum over the interval sits at an endpoint.
/// beta = 1 is the classical case and needs `allow_classical`.
inline Driver rate_uncertainty_driver(const RateMatrix& A, const std::vector<StateIndex>& zeta, double beta,
                                      bool allow_classical = false) {
    if (!std::isfinite(beta) || beta < 1.0 || (beta == 1.0 && !allow_classical))
        throw Error(Errc::BadBeta, "beta must exceed 1 (beta = 1 only with the classical flag)");
    const Eigen::Index n = A.size();
    Vector indicator = Vector::Zero(n);
    for (StateIndex x : zeta) {
        detail::require_state(n, x, "zeta");
        indicator(x) = 1.0;
    }
    const double lo = 1.0 / beta - 1.0;
    const double hi = beta - 1.0;
    const Matrix rates = A.rates();
    auto cert = affine_family_certificate(A, {lo * rates, hi * rates});
    return Driver(
        n,
        [indicator, rates, lo, hi](StateIndex x, const Vector& z) {
            const double s = z.dot(rates.col(x));
            return indicator(x) + std::min(lo * s, hi * s);
        },
        "rate_uncertainty", cert);
}

enum class ProbeSet {
    basis,       // z - z' = +-s e_i
    structured,  // adds +-s (e_i - e_j)
    full,        // adds seeded Gaussian pairs
};

struct SamplerConfig {
    std::uint64_t seed = 20240607;
    ProbeSet probes = ProbeSet::full;
    int random_pairs = 400;  // per state
    int random_bases = 4;    // random base points z' for the structured probes
    std::vector<double> scales{1e-3, 1.0, 1e3};
};

struct BalanceWitness {
    StateIndex state = 0;
    Vector z;
    Vector z_prime;
    StateIndex target = 0;
    double ratio = 0.0;
};

struct BalanceReport {
    BalanceClass balance = BalanceClass::fails;
    double margin = 0.0;         // 1 + inf ratio when strictly balanced, else 0
    double min_ratio = 0.0;      // inf over samples of the balance ratio
    double min_weak_ratio = 0.0; // same with the quotient clipped at 0
    std::vector<BalanceWitness> witnesses;
    long samples = 0;
};

namespace detail {

// Calls visit(x, z, z', f(x,z) - f(x,z'), z - z', ||z - z'||^2_M) for every probe.
template <typename Visit>
void for_each_probe(const Driver& f, const RateMatrix& A, const SamplerConfig& cfg, Visit&& visit) {
    const Eigen::Index n = A.size();
    if (f.size() != n) throw Error(Errc::DimensionMismatch, "driver and rate matrix differ in size");
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto random_vector = [&](double scale) {
        Vector v(n);
        for (Eigen::Index i = 0; i < n; ++i) v(i) = scale * gauss(rng);
        return v;
    };

    std::vector<Vector> directions;
    for (StateIndex i = 0; i < n; ++i) {
        Vector e = Vector::Zero(n);
        e(i) = 1.0;
        directions.push_back(e);
    }
    if (cfg.probes != ProbeSet::basis) {
        for (StateIndex i = 0; i < n; ++i) {
            for (StateIndex j = i + 1; j < n; ++j) {
                Vector e = Vector::Zero(n);
                e(i) = 1.0;
                e(j) = -1.0;
                directions.push_back(e);
            }
        }
    }

    for (StateIndex x = 0; x < n; ++x) {
        auto probe = [&](const Vector& zp, const Vector& d) {
            const double norm2 = seminorm_sq(A, x, d);
            const Vector z = zp + d;
            visit(x, z, zp, f(x, z) - f(x, zp), d, norm2);
        };
        std::vector<Vector> bases{Vector::Zero(n)};
        for (double s : cfg.scales)
            for (int b = 0; b < cfg.random_bases; ++b) bases.push_back(random_vector(s));
        for (const Vector& base : bases) {
            for (double s : cfg.scales) {
                for (const Vector& dir : directions) {
                    probe(base, s * dir);
                    probe(base, -s * dir);
                }
            }
        }
        if (cfg.probes == ProbeSet::full) {
            for (int k = 0; k < cfg.random_pairs; ++k) {
                const double s = cfg.scales[static_cast<std::size_t>(k) % cfg.scales.size()];
                const Vector zp = random_vector(s);
                probe(zp, random_vector(s));
            }
        }
    }
}

inline bool negligible_seminorm(double norm2, const Vector& d, const RateMatrix& A) {
    const double scale = d.cwiseAbs().maxCoeff();
    return norm2 <= 1e-24 * std::max(1.0, A.max_exit_rate()) * scale * scale || norm2 == 0.0;
}

}  // namespace detail

/// Sampling-based classification against the balance definition: for each
/// state x and each target i with a_ix > 0, the ratio
/// (f(x,z) - f(x,z')) (z - z')^T (e_i - x) / ||z - z'||^2_M must exceed -1
/// (balanced) or -1 + gamma (strictly). The ratio is 0 where the seminorm vanishes.
inline BalanceReport check_balanced(const Driver& f, const RateMatrix& A, const SamplerConfig& cfg = {}) {
    BalanceReport report;
    double min_ratio = 0.0;
    double min_weak = 0.0;
    std::vector<BalanceWitness> candidates;

    detail::for_each_probe(f, A, cfg,
                           [&](StateIndex x, const Vector& z, const Vector& zp, double df, const Vector& d, double norm2) {
                               ++report.samples;
                               if (detail::negligible_seminorm(norm2, d, A)) return;
                               const double q = df / norm2;
                               for (StateIndex i = 0; i < A.size(); ++i) {
                                   if (i == x || !(A(i, x) > 0.0)) continue;
                                   const double jump = d(i) - d(x);
                                   const double r = q * jump;
                                   const double weak = std::min(q, 0.0) * jump;
                                   min_ratio = std::min(min_ratio, r);
                                   min_weak = std::min(min_weak, weak);
                                   if (weak <= -1.0) candidates.push_back({x, z, zp, i, weak});
                               }
                           });

    report.min_ratio = min_ratio;
    report.min_weak_ratio = min_weak;
    if (min_weak <= -1.0) {
        report.balance = BalanceClass::fails;
        std::sort(candidates.begin(), candidates.end(),
                  [](const BalanceWitness& a, const BalanceWitness& b) { return a.ratio < b.ratio; });
        if (candidates.size() > 5) candidates.resize(5);
        report.witnesses = std::move(candidates);
    } else if (min_ratio <= -1.0) {
        report.balance = BalanceClass::weakly_balanced;
    } else if (1.0 + min_ratio < 1e-9) {
        report.balance = BalanceClass::balanced;
    } else {
        report.balance = BalanceClass::strictly_balanced;
        report.margin = 1.0 + min_ratio;
    }
    return report;
}

/// Largest sampled |f(x,z) - f(x,z')| / ||z - z'||_M. A lower bound on the
/// true Lipschitz constant.
inline double lipschitz_estimate(const Driver& f, const RateMatrix& A, const SamplerConfig& cfg = {}) {
    double best = 0.0;
    detail::for_each_probe(f, A, cfg,
                           [&](StateIndex, const Vector&, const Vector&, double df, const Vector& d, double norm2) {
                               if (detail::negligible_seminorm(norm2, d, A)) return;
                               best = std::max(best, std::abs(df) / std::sqrt(norm2));
                           });
    return best;
}

/// Sampled check of f >= f' pointwise; returns the most negative f - f' seen.
inline double min_driver_gap(const Driver& f, const Driver& fp, const SamplerConfig& cfg = {}) {
    if (f.size() != fp.size()) throw Error(Errc::DimensionMismatch, "drivers differ in size");
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const Eigen::Index n = f.size();
    double worst = std::numeric_limits<double>::infinity();
    for (int k = 0; k < std::max(1, cfg.random_pairs); ++k) {
        const double s = cfg.scales.empty() ? 1.0 : cfg.scales[static_cast<std::size_t>(k) % cfg.scales.size()];
        Vector z(n);
        for (Eigen::Index i = 0; i < n; ++i) z(i) = k == 0 ? 0.0 : s * gauss(rng);
        for (StateIndex x = 0; x < n; ++x) worst = std::min(worst, f(x, z) - fp(x, z));
    }
    return worst;
}

}  // namespace ebsde
