#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/SVD>

#include "ebsde/chain.hpp"
#include "ebsde/discounted.hpp"
#include "ebsde/driver.hpp"
#include "ebsde/perturbation.hpp"
#include "ebsde/solver_core.hpp"

namespace ebsde {

struct Normalization {
    enum class Kind { zero_sum, anchor };
    Kind kind = Kind::zero_sum;
    StateIndex anchor_state = 0;

    static Normalization zero_sum() { return {}; }
    static Normalization anchor(StateIndex x0) { return {Kind::anchor, x0}; }

    Vector apply(const Vector& v) const {
        if (kind == Kind::zero_sum) return v.array() - v.mean();
        detail::require_state(v.size(), anchor_state, "anchor");
        return v.array() - v(anchor_state);
    }
    std::string label() const {
        return kind == Kind::zero_sum ? std::string("zero-sum") : "anchor:" + std::to_string(anchor_state);
    }
};

enum class EbsdeMethod { vanishing_discount, direct };

inline const char* to_string(EbsdeMethod m) {
    return m == EbsdeMethod::direct ? "direct" : "vanishing-discount";
}

struct DiscountStep {
    double alpha = 0.0;
    double lambda_estimate = 0.0;  // alpha v^alpha(x0)
    double lambda_extrapolated = std::numeric_limits<double>::quiet_NaN();
    double increment = std::numeric_limits<double>::quiet_NaN();  // change of the extrapolated limit
    int iterations = 0;
};

struct EbsdeSolution {
    Vector v;
    double lambda = 0.0;
    Normalization normalization;
    double residual = 0.0;  // ||f(., v) + A* v - lambda 1||_inf
    EbsdeMethod method = EbsdeMethod::direct;
    int iterations = 0;
    bool used_newton = false;
    std::vector<double> residual_trace;       // direct: residual per iteration
    std::vector<DiscountStep> discount_trace; // vanishing discount: one entry per alpha
    // Vanishing discount only: the extrapolated limit before the Newton polish.
    Vector raw_v;
    double raw_lambda = 0.0;
    double raw_residual = 0.0;
    std::vector<std::string> warnings;
};

struct EbsdeOptions {
    double tol = 1e-10;
    int max_iters = 20000;
    int stall_limit = 200;
    int newton_iters = 100;
    Normalization normalization;
    std::optional<Vector> initial;
};

namespace detail {

inline double ergodic_residual(const RateMatrix& A, const Driver& f, const Vector& v, double lambda) {
    return equation_residual(A, f, 0.0, v, lambda).cwiseAbs().maxCoeff();
}

inline EbsdeSolution finish(const RateMatrix& A, const Driver& f, Vector v, double lambda, const EbsdeOptions& opts) {
    EbsdeSolution sol;
    sol.normalization = opts.normalization;
    sol.v = opts.normalization.apply(v);
    sol.lambda = lambda;
    sol.residual = ergodic_residual(A, f, sol.v, lambda);
    return sol;
}

}  // namespace detail

/// Damped direct iteration
///   lambda_n = mean(f(., v_n) + A* v_n),   v_{n+1} = (A*)^+ (lambda_n 1 - f(., v_n))
/// with the pseudoinverse from one SVD (cutoff 1e-12 sigma_max). If the
/// residual stops improving for `stall_limit` iterations the bordered Newton
/// system on (v, lambda) with a zero-sum constraint finishes the solve.
inline EbsdeSolution solve_direct(const RateMatrix& A, const Driver& f, const EbsdeOptions& opts = {}) {
    require_irreducible(A);
    if (f.size() != A.size()) throw Error(Errc::DimensionMismatch, "driver and rate matrix differ in size");
    const Eigen::Index n = A.size();
    const Matrix gen = A.generator();

    Eigen::JacobiSVD<Matrix> svd(gen, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Vector sigma = svd.singularValues();
    const double cutoff = 1e-12 * sigma(0);
    Vector inv = Vector::Zero(n);
    for (Eigen::Index k = 0; k < n; ++k)
        if (sigma(k) > cutoff) inv(k) = 1.0 / sigma(k);
    const Matrix pinv = svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();

    Vector v = Vector::Zero(n);
    if (opts.initial) {
        if (opts.initial->size() != n) throw Error(Errc::DimensionMismatch, "initial guess has wrong length");
        v = *opts.initial;
    }
    auto lambda_of = [&](const Vector& vv) { return (f.evaluate(vv) + gen * vv).mean(); };

    std::vector<std::string> warnings = detail::balance_warnings(f);
    std::vector<double> trace;
    double lambda = lambda_of(v);
    double res = detail::ergodic_residual(A, f, v, lambda);
    trace.push_back(res);
    double best = res;
    double theta = 1.0;
    int stalled = 0;
    int it = 0;
    while (res > opts.tol && it < opts.max_iters && stalled < opts.stall_limit) {
        const Vector step = pinv * (Vector::Constant(n, lambda) - f.evaluate(v));
        v = (1.0 - theta) * v + theta * step;
        ++it;
        const double next_lambda = lambda_of(v);
        const double next = detail::ergodic_residual(A, f, v, next_lambda);
        if (next > res) theta = std::max(theta * 0.5, 1.0 / 1024.0);
        if (next < best * (1.0 - 1e-3)) {
            best = next;
            stalled = 0;
        } else {
            ++stalled;
        }
        res = next;
        lambda = next_lambda;
        trace.push_back(res);
        if (!std::isfinite(res)) break;
    }

    bool newton = false;
    if (!(res <= opts.tol)) {
        if (!v.allFinite()) v.setZero();
        const Vector nu = Vector::Constant(n, 1.0 / static_cast<double>(n));
        auto nr = detail::newton_bordered(A, f, 0.0, nu, v, lambda_of(v), opts.tol, opts.newton_iters);
        it += nr.iterations;
        newton = true;
        v = nr.w;
        lambda = nr.mu;
        res = detail::ergodic_residual(A, f, v, lambda);
        trace.push_back(res);
        if (!(res <= opts.tol)) {
            std::ostringstream os;
            os << "direct solve stopped after " << it << " iterations with residual " << res;
            throw Error(Errc::Nonconvergence, os.str());
        }
    }

    EbsdeSolution sol = detail::finish(A, f, v, lambda, opts);
    sol.method = EbsdeMethod::direct;
    sol.iterations = it;
    sol.used_newton = newton;
    sol.residual_trace = std::move(trace);
    sol.warnings = std::move(warnings);
    return sol;
}

struct VanishingDiscountOptions {
    EbsdeOptions base;
    /// Decreasing discount rates; empty means 0.1 * 2^-k down to `floor`.
    std::vector<double> schedule;
    double floor = 1e-7;
    StateIndex x0 = 0;
    /// Successive extrapolated limits must differ by less than this.
    double cauchy_tol = 1e-8;
    /// The extrapolated limit must solve the ergodic equation to this before polishing.
    double raw_residual_tol = 1e-6;
    StationaryOptions stationary;
};

inline std::vector<double> default_discount_schedule(double floor) {
    std::vector<double> s;
    for (double a = 0.1; a >= floor * (1.0 - 1e-12); a *= 0.5) s.push_back(a);
    return s;
}

/// Ergodic limit through the discounted problems:
///   v^alpha - v^alpha(x0) -> v,   alpha v^alpha(x0) -> lambda.
/// Each alpha is warm started from the previous solution. The last three
/// iterates are Richardson-extrapolated (errors in powers of alpha, ratio 2),
/// and the limit is polished with Newton on the ergodic system.
inline EbsdeSolution solve_vanishing_discount(const RateMatrix& A, const Driver& f,
                                              const VanishingDiscountOptions& opts = {}) {
    require_irreducible(A);
    if (f.size() != A.size()) throw Error(Errc::DimensionMismatch, "driver and rate matrix differ in size");
    detail::require_state(A.size(), opts.x0, "x0");
    const Eigen::Index n = A.size();
    const std::vector<double> schedule = opts.schedule.empty() ? default_discount_schedule(opts.floor) : opts.schedule;
    if (schedule.size() < 3) throw Error(Errc::InvalidArgument, "discount schedule needs at least three rates");
    for (std::size_t k = 0; k < schedule.size(); ++k) {
        if (!(schedule[k] > 0.0) || (k > 0 && !(schedule[k] < schedule[k - 1])))
            throw Error(Errc::InvalidArgument, "discount schedule must be positive and strictly decreasing");
    }

    struct Iterate {
        double alpha;
        Vector rel;  // v^alpha - v^alpha(x0), plus lambda estimate in the last slot
    };
    std::vector<Iterate> history;
    std::vector<DiscountStep> trace;
    std::optional<Vector> limit, previous_limit;

    StationaryOptions sopts = opts.stationary;
    sopts.enforce_bound = true;
    int total_iters = 0;
    bool converged = false;
    for (double alpha : schedule) {
        DiscountedSolution ds = solve_stationary(A, f, alpha, sopts);
        sopts.initial = ds.v;
        total_iters += ds.iterations;

        Vector packed(n + 1);
        packed.head(n) = ds.v.array() - ds.v(opts.x0);
        packed(n) = alpha * ds.v(opts.x0);
        DiscountStep step;
        step.alpha = alpha;
        step.lambda_estimate = packed(n);
        step.iterations = ds.iterations;
        history.push_back({alpha, packed});

        if (history.size() >= 3) {
            const auto& h = history;
            const std::size_t k = h.size() - 1;
            // Eliminate the O(alpha) and O(alpha^2) terms; exact for geometric steps.
            const double r1 = h[k - 1].alpha / h[k].alpha;
            const double r2 = h[k - 2].alpha / h[k - 1].alpha;
            const Vector l1 = (r1 * h[k].rel - h[k - 1].rel) / (r1 - 1.0);
            const Vector l0 = (r2 * h[k - 1].rel - h[k - 2].rel) / (r2 - 1.0);
            const double r = h[k - 2].alpha / h[k].alpha;
            const Vector l = (r * l1 - l0) / (r - 1.0);
            previous_limit = limit;
            limit = l;
            step.lambda_extrapolated = l(n);
            if (previous_limit) {
                step.increment = (l - *previous_limit).cwiseAbs().maxCoeff();
                if (step.increment < opts.cauchy_tol) converged = true;
            }
        }
        trace.push_back(step);
        if (converged) break;
    }
    if (!converged) {
        std::ostringstream os;
        os << "discounted limits not Cauchy at alpha = " << schedule.back();
        if (!trace.empty() && std::isfinite(trace.back().increment)) os << " (last increment " << trace.back().increment << ")";
        throw Error(Errc::ScheduleExhausted, os.str());
    }

    Vector raw_v = limit->head(n);
    const double raw_lambda = (*limit)(n);
    const double raw_res = detail::ergodic_residual(A, f, raw_v, raw_lambda);
    if (!(raw_res <= opts.raw_residual_tol)) {
        std::ostringstream os;
        os << "extrapolated limit has ergodic residual " << raw_res;
        throw Error(Errc::Nonconvergence, os.str());
    }

    Vector v = raw_v;
    double lambda = raw_lambda;
    bool newton = false;
    if (raw_res > opts.base.tol) {
        Vector nu = Vector::Zero(n);
        nu(opts.x0) = 1.0;
        auto nr = detail::newton_bordered(A, f, 0.0, nu, v, lambda, opts.base.tol, opts.base.newton_iters);
        total_iters += nr.iterations;
        newton = true;
        if (!nr.converged) {
            std::ostringstream os;
            os << "Newton polish stopped with residual " << nr.residual;
            throw Error(Errc::Nonconvergence, os.str());
        }
        v = nr.w;
        lambda = nr.mu;
    }

    EbsdeSolution sol = detail::finish(A, f, v, lambda, opts.base);
    sol.method = EbsdeMethod::vanishing_discount;
    sol.iterations = total_iters;
    sol.used_newton = newton;
    sol.discount_trace = std::move(trace);
    sol.raw_v = opts.base.normalization.apply(raw_v);
    sol.raw_lambda = raw_lambda;
    sol.raw_residual = raw_res;
    sol.warnings = detail::balance_warnings(f);
    return sol;
}

struct VerificationReport {
    double equation_residual = 0.0;          // (a)
    double lambda_identity = 0.0;            // (b) |lambda - pi^T f(., v)|
    double representation_residual = 0.0;    // (c) max_x |v(x) - pi^T v - (mu^x)^T f(., v)|
    double driver_bound = 0.0;               // C
    bool lambda_bound_ok = true;             // |lambda| <= C
    std::optional<double> oscillation_bound; // 2 C R / rho from the perturbed chain
    double oscillation = 0.0;                // max v - min v
    bool oscillation_ok = true;
    double tolerance = 1e-8;
    bool pass = false;
};

/// Checks a candidate (v, lambda) against the equation and the representations
///   lambda = sum_y pi(y) f(y, v),   v(x) = pi^T v + sum_y mu^x(y) f(y, v).
/// The oscillation bound uses the chain B with f(., v) - f(., 0) = (B - A)^T v,
/// fitted by `ergodicity_estimate`; it is omitted when B cannot be formed or fitted.
inline VerificationReport verify_solution(const RateMatrix& A, const Driver& f, const Vector& v, double lambda,
                                          double tolerance = 1e-8) {
    if (v.size() != A.size() || f.size() != A.size())
        throw Error(Errc::DimensionMismatch, "solution and chain differ in size");
    VerificationReport rep;
    rep.tolerance = tolerance;
    const Vector pi = stationary_distribution(A).weights();
    const Vector fv = f.evaluate(v);
    rep.equation_residual = detail::ergodic_residual(A, f, v, lambda);
    rep.lambda_identity = std::abs(lambda - pi.dot(fv));
    const Matrix dev = deviation_matrix(A);
    const Vector rep_v = Vector::Constant(v.size(), pi.dot(v)) + dev.transpose() * fv;
    rep.representation_residual = (v - rep_v).cwiseAbs().maxCoeff();

    rep.driver_bound = f.bound_at_zero();
    rep.lambda_bound_ok = std::abs(lambda) <= rep.driver_bound * (1.0 + 1e-9) + 1e-12;
    rep.oscillation = v.maxCoeff() - v.minCoeff();
    try {
        const PerturbedRates pr = perturbed_rate_matrix(A, f, v, Vector::Zero(v.size()));
        const double slowest = (-pr.B.rates().diagonal()).minCoeff();
        const ErgodicityEstimate est = ergodicity_estimate(pr.B, 60.0 / std::max(slowest, 1e-3));
        rep.oscillation_bound = 2.0 * rep.driver_bound * est.R / est.rho;
        rep.oscillation_ok = rep.oscillation <= *rep.oscillation_bound * (1.0 + 1e-6) + 1e-12;
    } catch (const Error&) {
        rep.oscillation_bound.reset();
    }
    rep.pass = rep.equation_residual <= tolerance && rep.lambda_identity <= tolerance &&
               rep.representation_residual <= tolerance && rep.lambda_bound_ok && rep.oscillation_ok;
    return rep;
}

inline VerificationReport verify_solution(const RateMatrix& A, const Driver& f, const EbsdeSolution& sol,
                                          double tolerance = 1e-8) {
    return verify_solution(A, f, sol.v, sol.lambda, tolerance);
}

struct LambdaComparison {
    double lambda = 0.0;
    double lambda_prime = 0.0;
    double min_gap = 0.0;   // sampled inf of f - f'
    bool dominance_observed = false;
    bool pass = false;      // lambda >= lambda' - 1e-10
};

inline LambdaComparison lambda_comparison(const RateMatrix& A, const Driver& f, const Driver& fp,
                                          const EbsdeOptions& opts = {}) {
    LambdaComparison out;
    out.min_gap = min_driver_gap(f, fp);
    out.dominance_observed = out.min_gap >= -1e-12;
    out.lambda = solve_direct(A, f, opts).lambda;
    out.lambda_prime = solve_direct(A, fp, opts).lambda;
    out.pass = out.lambda >= out.lambda_prime - 1e-10;
    return out;
}

}  // namespace ebsde
