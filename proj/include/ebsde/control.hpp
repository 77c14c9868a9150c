#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "ebsde/chain.hpp"
#include "ebsde/driver.hpp"
#include "ebsde/ebsde.hpp"

namespace ebsde {

using Policy = std::vector<int>;

/// Finite-action average-cost problem: column x of `controls[u]` holds the
/// jump rates out of x under action u, `cost(x, u)` the running cost.
struct ControlProblem {
    RateMatrix reference;
    std::vector<RateMatrix> controls;
    Matrix cost;  // n x |U|
    double gamma = 0.0;
};

/// As ControlProblem with a finite family of rate matrices per action,
/// chosen adversarially state by state.
struct RobustControlProblem {
    RateMatrix reference;
    std::vector<std::vector<RateMatrix>> families;
    Matrix cost;
    double gamma = 0.0;
};

namespace detail {

inline void require_dominated(const RateMatrix& A, const RateMatrix& Au, double gamma, const std::string& label) {
    if (Au.size() != A.size()) throw Error(Errc::DimensionMismatch, label + " has the wrong size");
    const OrderReport rep = rate_order_check(A, Au, gamma, true);
    if (!rep.strictly_controlled) {
        std::ostringstream os;
        os << label << " is not strictly controlled by the reference at gamma = " << gamma;
        if (rep.violation) os << " (entry " << rep.violation->row << "," << rep.violation->col << " = " << rep.violation->value << ")";
        throw Error(Errc::ControlNotDominated, os.str());
    }
}

inline void check_costs(const Matrix& cost, Eigen::Index n, std::size_t m) {
    if (cost.rows() != n || cost.cols() != static_cast<Eigen::Index>(m))
        throw Error(Errc::DimensionMismatch, "cost table must be states x controls");
    if (!cost.allFinite()) throw Error(Errc::NonFinite, "cost table has non-finite entries");
}

}  // namespace detail

inline void validate(const ControlProblem& P) {
    if (P.controls.empty()) throw Error(Errc::InvalidArgument, "control set is empty");
    if (!(P.gamma > 0.0)) throw Error(Errc::InvalidArgument, "gamma must be positive");
    detail::check_costs(P.cost, P.reference.size(), P.controls.size());
    for (std::size_t u = 0; u < P.controls.size(); ++u)
        detail::require_dominated(P.reference, P.controls[u], P.gamma, "control " + std::to_string(u));
}

inline void validate(const RobustControlProblem& P) {
    if (P.families.empty()) throw Error(Errc::InvalidArgument, "control set is empty");
    if (!(P.gamma > 0.0)) throw Error(Errc::InvalidArgument, "gamma must be positive");
    detail::check_costs(P.cost, P.reference.size(), P.families.size());
    for (std::size_t u = 0; u < P.families.size(); ++u) {
        if (P.families[u].empty()) throw Error(Errc::InvalidArgument, "control " + std::to_string(u) + " has no matrices");
        for (std::size_t w = 0; w < P.families[u].size(); ++w)
            detail::require_dominated(P.reference, P.families[u][w], P.gamma,
                                      "control " + std::to_string(u) + " matrix " + std::to_string(w));
    }
}

/// f(x, z) = min_u { L(x, u) + z^T (A^u - A) x } with the lowest minimising index as selector.
class Hamiltonian {
public:
    explicit Hamiltonian(const ControlProblem& P) : reference_(P.reference), cost_(P.cost) {
        validate(P);
        std::vector<Matrix> dirs;
        for (const RateMatrix& Au : P.controls) dirs.push_back(Au.rates() - P.reference.rates());
        directions_ = std::make_shared<const std::vector<Matrix>>(dirs);
        cert_ = affine_family_certificate(P.reference, dirs);
    }

    double term(StateIndex x, const Vector& z, int u) const {
        return cost_(x, u) + z.dot((*directions_)[static_cast<std::size_t>(u)].col(x));
    }

    int argmin(StateIndex x, const Vector& z) const {
        int best = 0;
        double value = term(x, z, 0);
        for (int u = 1; u < static_cast<int>(directions_->size()); ++u) {
            const double t = term(x, z, u);
            if (t < value) {
                value = t;
                best = u;
            }
        }
        return best;
    }

    Policy policy(const Vector& v) const {
        Policy pol(static_cast<std::size_t>(reference_.size()));
        for (StateIndex x = 0; x < reference_.size(); ++x) pol[static_cast<std::size_t>(x)] = argmin(x, v);
        return pol;
    }

    Driver driver() const {
        auto dirs = directions_;
        Matrix cost = cost_;
        return Driver(
            reference_.size(),
            [dirs, cost](StateIndex x, const Vector& z) {
                double best = std::numeric_limits<double>::infinity();
                for (std::size_t u = 0; u < dirs->size(); ++u)
                    best = std::min(best, cost(x, static_cast<Eigen::Index>(u)) + z.dot((*dirs)[u].col(x)));
                return best;
            },
            "hamiltonian", cert_);
    }

private:
    RateMatrix reference_;
    Matrix cost_;
    std::shared_ptr<const std::vector<Matrix>> directions_;
    DriverCertificate cert_;
};

/// f(x, z) = min_u { L(x, u) + max_w z^T (A^{u,w} - A) x }, decoupled per state.
class RobustHamiltonian {
public:
    explicit RobustHamiltonian(const RobustControlProblem& P) : reference_(P.reference), cost_(P.cost) {
        validate(P);
        std::vector<std::vector<Matrix>> dirs;
        std::vector<Matrix> flat;
        for (const auto& family : P.families) {
            std::vector<Matrix> d;
            for (const RateMatrix& Auw : family) {
                d.push_back(Auw.rates() - P.reference.rates());
                flat.push_back(d.back());
            }
            dirs.push_back(std::move(d));
        }
        directions_ = std::make_shared<const std::vector<std::vector<Matrix>>>(std::move(dirs));
        cert_ = affine_family_certificate(P.reference, flat);
    }

    /// Lowest index attaining max_w z^T (A^{u,w} - A) x.
    int worst_case(StateIndex x, const Vector& z, int u) const {
        const auto& fam = (*directions_)[static_cast<std::size_t>(u)];
        int best = 0;
        double value = z.dot(fam[0].col(x));
        for (int w = 1; w < static_cast<int>(fam.size()); ++w) {
            const double t = z.dot(fam[static_cast<std::size_t>(w)].col(x));
            if (t > value) {
                value = t;
                best = w;
            }
        }
        return best;
    }

    double term(StateIndex x, const Vector& z, int u) const {
        const auto& fam = (*directions_)[static_cast<std::size_t>(u)];
        return cost_(x, u) + z.dot(fam[static_cast<std::size_t>(worst_case(x, z, u))].col(x));
    }

    int argmin(StateIndex x, const Vector& z) const {
        int best = 0;
        double value = term(x, z, 0);
        for (int u = 1; u < static_cast<int>(directions_->size()); ++u) {
            const double t = term(x, z, u);
            if (t < value) {
                value = t;
                best = u;
            }
        }
        return best;
    }

    Driver driver() const {
        auto self = std::make_shared<const RobustHamiltonian>(*this);
        return Driver(
            reference_.size(),
            [self](StateIndex x, const Vector& z) { return self->term(x, z, self->argmin(x, z)); },
            "robust_hamiltonian", cert_);
    }

    Eigen::Index size() const { return reference_.size(); }

private:
    RateMatrix reference_;
    Matrix cost_;
    std::shared_ptr<const std::vector<std::vector<Matrix>>> directions_;
    DriverCertificate cert_;
};

struct ControlSolution {
    EbsdeSolution ebsde;
    Policy policy;
    std::vector<int> worst_case;  // robust problems only: adversary's index under the policy
};

inline ControlSolution solve_control(const ControlProblem& P, const EbsdeOptions& opts = {}) {
    const Hamiltonian H(P);
    ControlSolution out;
    out.ebsde = solve_direct(P.reference, H.driver(), opts);
    out.policy = H.policy(out.ebsde.v);
    return out;
}

inline ControlSolution solve_robust_control(const RobustControlProblem& P, const EbsdeOptions& opts = {}) {
    const RobustHamiltonian H(P);
    ControlSolution out;
    out.ebsde = solve_direct(P.reference, H.driver(), opts);
    for (StateIndex x = 0; x < P.reference.size(); ++x) {
        const int u = H.argmin(x, out.ebsde.v);
        out.policy.push_back(u);
        out.worst_case.push_back(H.worst_case(x, out.ebsde.v, u));
    }
    return out;
}

/// Rate matrix of the chain run under a stationary feedback policy.
inline RateMatrix policy_rate_matrix(const ControlProblem& P, const Policy& pol) {
    const Eigen::Index n = P.reference.size();
    if (static_cast<Eigen::Index>(pol.size()) != n) throw Error(Errc::DimensionMismatch, "policy must cover every state");
    Matrix m(n, n);
    for (StateIndex x = 0; x < n; ++x) {
        const int u = pol[static_cast<std::size_t>(x)];
        if (u < 0 || u >= static_cast<int>(P.controls.size())) throw Error(Errc::InvalidArgument, "policy uses an unknown control");
        m.col(x) = P.controls[static_cast<std::size_t>(u)].rates().col(x);
    }
    return RateMatrix::validate(m);
}

/// Long-run average cost sum_x pi_pol(x) L(x, pol(x)).
inline double evaluate_policy(const ControlProblem& P, const Policy& pol) {
    const RateMatrix Ap = policy_rate_matrix(P, pol);
    const Vector pi = stationary_distribution(Ap).weights();
    double j = 0.0;
    for (StateIndex x = 0; x < Ap.size(); ++x) j += pi(x) * P.cost(x, pol[static_cast<std::size_t>(x)]);
    return j;
}

struct BruteForceResult {
    double value = std::numeric_limits<double>::infinity();
    Policy policy;
    std::uint64_t policies = 0;
};

inline unsigned worker_threads() {
    if (const char* env = std::getenv("EBSDE_THREADS")) {
        const long k = std::strtol(env, nullptr, 10);
        if (k >= 1) return static_cast<unsigned>(k);
    }
    return 1;
}

/// Minimum of evaluate_policy over all |U|^n deterministic stationary
/// policies, enumerated lexicographically (state 0 most significant); ties go
/// to the first policy in that order.
inline BruteForceResult brute_force_optimal(const ControlProblem& P, std::uint64_t cap = 1000000,
                                            unsigned threads = worker_threads()) {
    validate(P);
    const auto n = static_cast<std::size_t>(P.reference.size());
    const std::uint64_t m = P.controls.size();
    std::uint64_t total = 1;
    for (std::size_t k = 0; k < n; ++k) {
        if (total > cap / m) throw Error(Errc::TooManyPolicies, "policy count exceeds the enumeration cap");
        total *= m;
    }
    if (total > cap) throw Error(Errc::TooManyPolicies, "policy count exceeds the enumeration cap");

    auto decode = [&](std::uint64_t idx) {
        Policy pol(n);
        for (std::size_t k = n; k-- > 0;) {
            pol[k] = static_cast<int>(idx % m);
            idx /= m;
        }
        return pol;
    };
    struct Best {
        double value = std::numeric_limits<double>::infinity();
        std::uint64_t index = 0;
        std::exception_ptr error;
    };
    auto scan = [&](std::uint64_t lo, std::uint64_t hi, Best& best) {
        try {
            for (std::uint64_t idx = lo; idx < hi; ++idx) {
                const double j = evaluate_policy(P, decode(idx));
                if (j < best.value) {
                    best.value = j;
                    best.index = idx;
                }
            }
        } catch (...) {
            best.error = std::current_exception();
        }
    };

    threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::min<std::uint64_t>(total, 64))));
    std::vector<Best> partial(threads);
    if (threads == 1) {
        scan(0, total, partial[0]);
    } else {
        std::vector<std::thread> pool;
        const std::uint64_t chunk = (total + threads - 1) / threads;
        for (unsigned t = 0; t < threads; ++t) {
            const std::uint64_t lo = std::min(total, t * chunk), hi = std::min(total, lo + chunk);
            pool.emplace_back([&, lo, hi, t] { scan(lo, hi, partial[t]); });
        }
        for (auto& th : pool) th.join();
    }
    for (const Best& b : partial)
        if (b.error) std::rethrow_exception(b.error);
    Best best;
    for (const Best& b : partial)
        if (b.value < best.value) best = b;  // chunks are ordered, so the earliest index wins ties
    return {best.value, decode(best.index), total};
}

}  // namespace ebsde
