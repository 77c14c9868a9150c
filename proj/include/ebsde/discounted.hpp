#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <boost/numeric/odeint.hpp>

#include "ebsde/chain.hpp"
#include "ebsde/driver.hpp"
#include "ebsde/solver_core.hpp"

namespace ebsde {

enum class DiscountedMethod { fixed_point, newton };

inline const char* to_string(DiscountedMethod m) { return m == DiscountedMethod::newton ? "newton" : "fixed-point"; }

struct StationaryOptions {
    double tol = 1e-12;
    int max_iters = 5000;
    int stall_limit = 200;  // fixed-point iterations without progress before switching to Newton
    int newton_iters = 100;
    bool enforce_bound = true;
    std::optional<Vector> initial;
};

struct DiscountedSolution {
    double alpha = 0.0;
    Vector v;
    double residual = 0.0;  // ||alpha v - f(., v) - A* v||_inf
    int iterations = 0;
    DiscountedMethod method = DiscountedMethod::fixed_point;
    double bound = 0.0;  // C / alpha
    bool bound_ok = true;
    double jump_spread = 0.0;  // max over one-jump pairs |v_i - v_x|; at most 2 ||v||_inf
    std::vector<std::string> warnings;
};

namespace detail {

inline std::vector<std::string> balance_warnings(const Driver& f) {
    std::vector<std::string> out;
    if (f.certificate() && !(f.certificate()->margin > 0.0))
        out.push_back("driver '" + f.name() + "' is not certified strictly balanced; proceeding");
    return out;
}

inline double jump_spread(const RateMatrix& A, const Vector& v) {
    double s = 0.0;
    for (StateIndex x = 0; x < A.size(); ++x)
        for (StateIndex i = 0; i < A.size(); ++i)
            if (i != x && A(i, x) > 0.0) s = std::max(s, std::abs(v(i) - v(x)));
    return s;
}

}  // namespace detail

/// Solves the stationary discounted equation alpha v = f(., v) + A* v.
///
/// v is carried as c 1 + w with pi^T w = 0. The damped fixed-point map
/// w <- (1 - theta) w + theta * centred((alpha I - A*)^{-1} f(., w)) starts at
/// theta = 1 and halves whenever the residual grows; after `stall_limit`
/// iterations without progress the bordered Newton solve takes over.
inline DiscountedSolution solve_stationary(const RateMatrix& A, const Driver& f, double alpha,
                                           const StationaryOptions& opts = {}) {
    if (!(alpha > 0.0) || !std::isfinite(alpha)) throw Error(Errc::InvalidArgument, "alpha must be positive");
    if (f.size() != A.size()) throw Error(Errc::DimensionMismatch, "driver and rate matrix differ in size");
    const Eigen::Index n = A.size();
    const CenteredResolvent resolvent(A, alpha);
    const Vector& pi = resolvent.pi();

    DiscountedSolution sol;
    sol.alpha = alpha;
    sol.warnings = detail::balance_warnings(f);

    Vector w = Vector::Zero(n);
    if (opts.initial) {
        if (opts.initial->size() != n) throw Error(Errc::DimensionMismatch, "initial guess has wrong length");
        w = *opts.initial;
        w.array() -= pi.dot(w);
    }

    auto residual_of = [&](const Vector& ww) {
        return detail::equation_residual(A, f, alpha, ww, pi.dot(f.evaluate(ww))).cwiseAbs().maxCoeff();
    };

    double theta = 1.0;
    double res = residual_of(w);
    double best = res;
    int stalled = 0;
    int it = 0;
    while (res > opts.tol && it < opts.max_iters && stalled < opts.stall_limit) {
        const Vector target = resolvent.solve(f.evaluate(w)).centered;
        w = (1.0 - theta) * w + theta * target;
        ++it;
        const double next = residual_of(w);
        if (next > res) theta = std::max(theta * 0.5, 1.0 / 1024.0);
        if (next < best * (1.0 - 1e-3)) {
            best = next;
            stalled = 0;
        } else {
            ++stalled;
        }
        res = next;
    }

    sol.method = DiscountedMethod::fixed_point;
    if (res > opts.tol) {
        auto nr = detail::newton_bordered(A, f, alpha, pi, w, pi.dot(f.evaluate(w)), opts.tol, opts.newton_iters);
        it += nr.iterations;
        sol.method = DiscountedMethod::newton;
        w = nr.w;
        res = residual_of(w);
        if (!(res <= opts.tol)) {
            std::ostringstream os;
            os << "discounted solve stopped after " << it << " iterations with residual " << res;
            throw Error(Errc::Nonconvergence, os.str());
        }
    }

    const double c = pi.dot(f.evaluate(w)) / alpha;
    sol.v = w.array() + c;
    sol.residual = res;
    sol.iterations = it;
    sol.bound = f.bound_at_zero() / alpha;
    sol.bound_ok = sol.v.cwiseAbs().maxCoeff() <= sol.bound * (1.0 + 1e-9) + 1e-12;
    sol.jump_spread = detail::jump_spread(A, sol.v);
    if (!sol.bound_ok && opts.enforce_bound) {
        std::ostringstream os;
        os << "||v||_inf = " << sol.v.cwiseAbs().maxCoeff() << " exceeds C/alpha = " << sol.bound;
        throw Error(Errc::BoundViolation, os.str());
    }
    return sol;
}

struct HorizonOptions {
    double rtol = 1e-10;
    double atol = 1e-12;
    /// Output times in [0, T]; defaults to {0, T}.
    std::vector<double> grid;
    std::size_t max_steps = 1000000;
};

struct HorizonSolution {
    double alpha = 0.0;
    double horizon = 0.0;
    std::vector<double> grid;
    std::vector<Vector> values;  // v(t_k, .)
    Vector terminal;
    double bound = 0.0;          // C / alpha when alpha > 0
    bool bound_ok = true;        // checked for zero terminal data
};

/// Backward integration of dv/dt = alpha v - f(., v) - A* v from v(T) = phi with
/// the adaptive Dormand-Prince 5(4) pair, in reversed time tau = T - t. Steps
/// are clipped to land on every output time.
inline HorizonSolution solve_finite_horizon(const RateMatrix& A, const Driver& f, double alpha, double T,
                                            const Vector& phi, const HorizonOptions& opts = {}) {
    namespace odeint = boost::numeric::odeint;
    using State = std::vector<double>;
    const Eigen::Index n = A.size();
    if (!(T > 0.0) || !std::isfinite(T)) throw Error(Errc::InvalidArgument, "horizon must be positive");
    if (!(alpha >= 0.0)) throw Error(Errc::InvalidArgument, "alpha must be >= 0");
    if (phi.size() != n || f.size() != n) throw Error(Errc::DimensionMismatch, "terminal data or driver size");
    if (!phi.allFinite()) throw Error(Errc::NonFinite, "terminal data is not finite");

    HorizonSolution out;
    out.alpha = alpha;
    out.horizon = T;
    out.terminal = phi;
    out.grid = opts.grid.empty() ? std::vector<double>{0.0, T} : opts.grid;
    std::sort(out.grid.begin(), out.grid.end());
    for (double t : out.grid)
        if (t < 0.0 || t > T) throw Error(Errc::InvalidArgument, "output time outside [0, T]");

    const Matrix gen = A.generator();
    auto rhs = [&](const State& s, State& ds, double) {
        const Eigen::Map<const Vector> v(s.data(), n);
        Eigen::Map<Vector> dv(ds.data(), n);
        const Vector centred = v.array() - v.mean();
        dv = f.evaluate(v) + gen * centred - alpha * v;
    };

    // Reversed times, ascending.
    std::vector<double> taus;
    for (auto it = out.grid.rbegin(); it != out.grid.rend(); ++it) taus.push_back(T - *it);
    std::vector<Vector> reversed;
    auto observe = [&](const State& s, double) { reversed.push_back(Eigen::Map<const Vector>(s.data(), n)); };

    State state(phi.data(), phi.data() + n);
    auto stepper = odeint::make_controlled(opts.atol, opts.rtol, odeint::runge_kutta_dopri5<State>());
    const double dt0 = std::min(1e-3, T / 16.0);
    try {
        if (taus.front() > 0.0) {
            // Integrate to the first requested time without observing tau = 0.
            std::vector<double> lead{0.0};
            lead.insert(lead.end(), taus.begin(), taus.end());
            bool first = true;
            auto skip_first = [&](const State& s, double t) {
                if (first) {
                    first = false;
                    return;
                }
                observe(s, t);
            };
            odeint::integrate_times(stepper, rhs, state, lead.begin(), lead.end(), dt0, skip_first,
                                    odeint::max_step_checker(opts.max_steps));
        } else {
            odeint::integrate_times(stepper, rhs, state, taus.begin(), taus.end(), dt0, observe,
                                    odeint::max_step_checker(opts.max_steps));
        }
    } catch (const odeint::step_adjustment_error& e) {
        throw Error(Errc::StepFailure, std::string("step size collapsed: ") + e.what() + "; try a shorter horizon");
    } catch (const odeint::no_progress_error& e) {
        throw Error(Errc::StepFailure, std::string("no progress: ") + e.what() + "; try a shorter horizon");
    }
    if (reversed.size() != out.grid.size()) throw Error(Errc::StepFailure, "integrator missed output times");
    out.values.assign(reversed.rbegin(), reversed.rend());

    if (alpha > 0.0) {
        out.bound = f.bound_at_zero() / alpha;
        if (phi.isZero(0.0)) {
            for (const Vector& v : out.values)
                out.bound_ok = out.bound_ok && v.cwiseAbs().maxCoeff() <= out.bound * (1.0 + 1e-8) + 1e-10;
        }
    }
    return out;
}

}  // namespace ebsde
