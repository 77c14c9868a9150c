#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ebsde/chain.hpp"

namespace ebsde {

namespace rng {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

/// Engine for stream `stream` of `seed`; streams are independent of the order they are created in.
inline std::mt19937_64 stream(std::uint64_t seed, std::uint64_t stream) {
    return std::mt19937_64(splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x632BE59BD9B4E019ull)));
}

/// Uniform on (0, 1], built from the top 53 bits so results do not depend on the standard library.
inline double uniform(std::mt19937_64& g) { return (static_cast<double>(g() >> 11) + 1.0) * 0x1.0p-53; }

inline double exponential(std::mt19937_64& g, double rate) { return -std::log(uniform(g)) / rate; }

/// Index j with probability w_j / total (w_j >= 0); returns -1 for the residual mass total - sum w.
template <typename Weights>
int pick(std::mt19937_64& g, const Weights& w, double total) {
    double u = uniform(g) * total;
    for (Eigen::Index j = 0; j < w.size(); ++j) {
        if (w(j) <= 0.0) continue;
        u -= w(j);
        if (u <= 0.0) return static_cast<int>(j);
    }
    return -1;
}

}  // namespace rng

struct Trajectory {
    std::vector<double> jump_times;
    std::vector<StateIndex> states;  // one more than jump_times
    double horizon = 0.0;
    std::uint64_t seed = 0;

    std::size_t jumps() const { return jump_times.size(); }

    /// State occupied at time t.
    StateIndex state_at(double t) const {
        auto it = std::upper_bound(jump_times.begin(), jump_times.end(), t);
        return states[static_cast<std::size_t>(it - jump_times.begin())];
    }

    /// "time,state" rows; times printed with 17 significant digits.
    void write_csv(std::ostream& os) const {
        os << "time,state\n";
        const auto prec = os.precision(17);
        os << 0.0 << ',' << states.front() << '\n';
        for (std::size_t k = 0; k < jump_times.size(); ++k) os << jump_times[k] << ',' << states[k + 1] << '\n';
        os.precision(prec);
    }
};

/// Time fraction spent in each state over [0, horizon].
inline Vector occupation(const Trajectory& tr, Eigen::Index n) {
    Vector occ = Vector::Zero(n);
    double prev = 0.0;
    for (std::size_t k = 0; k < tr.jump_times.size(); ++k) {
        occ(tr.states[k]) += tr.jump_times[k] - prev;
        prev = tr.jump_times[k];
    }
    occ(tr.states.back()) += tr.horizon - prev;
    return tr.horizon > 0.0 ? Vector(occ / tr.horizon) : occ;
}

/// Jump-chain / holding-time simulation. With `max_jumps` set the run stops
/// at that jump and the horizon is cut to the last jump time.
inline Trajectory simulate(const RateMatrix& A, StateIndex x0, double horizon, std::uint64_t seed,
                           std::uint64_t stream_id = 0, std::optional<std::size_t> max_jumps = {}) {
    detail::require_state(A.size(), x0, "initial state");
    if (!(horizon >= 0.0)) throw Error(Errc::InvalidArgument, "horizon must be >= 0");
    auto g = rng::stream(seed, stream_id);
    Trajectory tr;
    tr.seed = seed;
    tr.horizon = horizon;
    tr.states.push_back(x0);
    StateIndex x = x0;
    double t = 0.0;
    while (true) {
        const double exit = A.exit_rate(x);
        if (!(exit > 0.0)) break;
        t += rng::exponential(g, exit);
        if (t > horizon) break;
        Vector col = A.rates().col(x);
        col(x) = 0.0;
        int y = rng::pick(g, col, exit);
        if (y < 0) {  // rounding left a sliver of mass; take the last reachable target
            for (Eigen::Index j = col.size(); j-- > 0;)
                if (col(j) > 0.0) {
                    y = static_cast<int>(j);
                    break;
                }
        }
        x = y;
        tr.jump_times.push_back(t);
        tr.states.push_back(x);
        if (max_jumps && tr.jump_times.size() >= *max_jumps) {
            tr.horizon = t;
            break;
        }
    }
    return tr;
}

struct EmpiricalGenerator {
    Matrix rates;        // a_ij = jumps j -> i / time in j
    Matrix std_error;    // sqrt(jumps) / time in j
    Matrix counts;
    Vector time_in_state;
    std::vector<bool> low_confidence;  // fewer than 30 exits
    std::size_t min_exits = 30;

    /// Poisson band around the estimate.
    double lower(StateIndex i, StateIndex j, double z = 3.0) const { return std::max(0.0, rates(i, j) - z * std_error(i, j)); }
    double upper(StateIndex i, StateIndex j, double z = 3.0) const { return rates(i, j) + z * std_error(i, j); }

    /// Largest |estimate - reference| in units of the reference's own Poisson
    /// standard deviation sqrt(a_ij / time_j), over off-diagonal entries of
    /// states with enough exits. Entries where both are zero count as 0.
    double max_z_score(const RateMatrix& reference) const {
        double worst = 0.0;
        for (Eigen::Index j = 0; j < rates.cols(); ++j) {
            if (low_confidence[static_cast<std::size_t>(j)]) continue;
            for (Eigen::Index i = 0; i < rates.rows(); ++i) {
                if (i == j) continue;
                const double a = reference(i, j);
                const double diff = std::abs(rates(i, j) - a);
                if (a <= 0.0) {
                    if (diff > 0.0) return std::numeric_limits<double>::infinity();
                    continue;
                }
                worst = std::max(worst, diff / std::sqrt(a / time_in_state(j)));
            }
        }
        return worst;
    }
};

inline EmpiricalGenerator empirical_generator(const std::vector<Trajectory>& ensemble, Eigen::Index n) {
    EmpiricalGenerator eg;
    eg.counts = Matrix::Zero(n, n);
    eg.time_in_state = Vector::Zero(n);
    for (const Trajectory& tr : ensemble) {
        double prev = 0.0;
        for (std::size_t k = 0; k < tr.jump_times.size(); ++k) {
            const StateIndex from = tr.states[k], to = tr.states[k + 1];
            detail::require_state(n, from, "trajectory state");
            detail::require_state(n, to, "trajectory state");
            eg.time_in_state(from) += tr.jump_times[k] - prev;
            eg.counts(to, from) += 1.0;
            prev = tr.jump_times[k];
        }
        eg.time_in_state(tr.states.back()) += tr.horizon - prev;
    }
    eg.rates = Matrix::Zero(n, n);
    eg.std_error = Matrix::Zero(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        const double exits = eg.counts.col(j).sum();
        eg.low_confidence.push_back(exits < static_cast<double>(eg.min_exits));
        if (!(eg.time_in_state(j) > 0.0)) continue;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (i == j) continue;
            eg.rates(i, j) = eg.counts(i, j) / eg.time_in_state(j);
            eg.std_error(i, j) = std::sqrt(eg.counts(i, j)) / eg.time_in_state(j);
        }
        eg.rates(j, j) = -exits / eg.time_in_state(j);
        eg.std_error(j, j) = std::sqrt(exits) / eg.time_in_state(j);
    }
    return eg;
}

inline EmpiricalGenerator empirical_generator(const Trajectory& tr, Eigen::Index n) {
    return empirical_generator(std::vector<Trajectory>{tr}, n);
}

struct MgfEstimate {
    double beta = 0.0;
    double mean = 0.0;        // sample mean of exp(beta T)
    double half_width = 0.0;  // 95% normal-approximation half width
};

struct CouplingStats {
    std::vector<double> meeting_times;
    std::vector<std::size_t> jump_counts;
    std::vector<MgfEstimate> mgf;
};

inline std::vector<MgfEstimate> mgf_estimates(const std::vector<double>& samples, const std::vector<double>& betas) {
    std::vector<MgfEstimate> out;
    const double m = static_cast<double>(samples.size());
    for (double beta : betas) {
        double s = 0.0, s2 = 0.0;
        for (double t : samples) {
            const double e = std::exp(beta * t);
            s += e;
            s2 += e * e;
        }
        const double mean = s / m;
        const double var = m > 1.0 ? std::max(0.0, (s2 - m * mean * mean) / (m - 1.0)) : 0.0;
        out.push_back({beta, mean, 1.96 * std::sqrt(var / m)});
    }
    return out;
}

/// First meeting times of two independent copies started at x and y. Each
/// pair uses its own stream. Meetings can only happen at jump times.
inline CouplingStats coupling_times(const RateMatrix& A, StateIndex x, StateIndex y, std::size_t samples,
                                    std::uint64_t seed, const std::vector<double>& betas = {},
                                    std::size_t max_jumps = 1000000) {
    detail::require_state(A.size(), x, "x");
    detail::require_state(A.size(), y, "y");
    if (x == y) throw Error(Errc::InvalidArgument, "coupling needs distinct starting states");
    require_irreducible(A);
    CouplingStats st;
    const Matrix& rates = A.rates();
    for (std::size_t k = 0; k < samples; ++k) {
        auto g = rng::stream(seed, k);
        StateIndex s[2] = {x, y};
        double next[2];
        for (int c = 0; c < 2; ++c) next[c] = rng::exponential(g, A.exit_rate(s[c]));
        std::size_t jumps = 0;
        while (true) {
            const int c = next[0] <= next[1] ? 0 : 1;
            const double t = next[c];
            Vector col = rates.col(s[c]);
            col(s[c]) = 0.0;
            const int to = rng::pick(g, col, A.exit_rate(s[c]));
            s[c] = to < 0 ? s[c] : to;
            ++jumps;
            if (s[0] == s[1]) {
                st.meeting_times.push_back(t);
                st.jump_counts.push_back(jumps);
                break;
            }
            if (jumps >= max_jumps) {
                std::ostringstream os;
                os << "pair " << k << " did not meet within " << max_jumps << " jumps";
                throw Error(Errc::MeetingTimeout, os.str());
            }
            next[c] = t + rng::exponential(g, A.exit_rate(s[c]));
        }
    }
    st.mgf = mgf_estimates(st.meeting_times, betas);
    return st;
}

struct TailFit {
    double rate = 0.0;  // minus the slope of log P(T > t)
    double r_squared = 0.0;
    std::size_t points = 0;
};

/// Least-squares line through the empirical log-survival curve over the tail
/// third of the sorted sample, stopping where fewer than 10 samples survive.
inline TailFit tail_rate_fit(std::vector<double> times) {
    if (times.size() < 30) throw Error(Errc::InvalidArgument, "tail fit needs at least 30 samples");
    std::sort(times.begin(), times.end());
    const std::size_t m = times.size();
    std::vector<double> ts, ls;
    for (std::size_t i = 2 * m / 3; i + 10 < m; ++i) {
        ts.push_back(times[i]);
        ls.push_back(std::log(static_cast<double>(m - 1 - i) / static_cast<double>(m)));
    }
    if (ts.size() < 3) throw Error(Errc::InvalidArgument, "too few tail points");
    const double k = static_cast<double>(ts.size());
    double mt = 0.0, ml = 0.0;
    for (std::size_t i = 0; i < ts.size(); ++i) {
        mt += ts[i];
        ml += ls[i];
    }
    mt /= k;
    ml /= k;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < ts.size(); ++i) {
        sxx += (ts[i] - mt) * (ts[i] - mt);
        sxy += (ts[i] - mt) * (ls[i] - ml);
        syy += (ls[i] - ml) * (ls[i] - ml);
    }
    TailFit fit;
    fit.points = ts.size();
    if (!(sxx > 0.0) || !(syy > 0.0)) return fit;
    fit.rate = -sxy / sxx;
    fit.r_squared = sxy * sxy / (sxx * syy);
    return fit;
}

// ---- splitting ---------------------------------------------------------------

struct SplitState {
    StateIndex base = 0;
    int layer = 1;
};

inline Matrix split_source_rates(const RateMatrix& A, const RateMatrix& B, double gamma) {
    if (A.size() != B.size()) throw Error(Errc::DimensionMismatch, "split chain needs matrices of equal size");
    if (!(gamma > 0.0 && gamma < 1.0)) throw Error(Errc::NotStrictlyControlled, "splitting weight must lie in (0, 1)");
    const OrderReport rep = rate_order_check(A, B, gamma, true);
    if (!rep.strictly_controlled) throw Error(Errc::NotStrictlyControlled, "B is not strictly controlled by A at this gamma");
    return (B.rates() - gamma * A.rates()) / (1.0 - gamma);
}

/// The 2n x 2n split rate matrix. State (x, l) has index x + l n. Column (x, 0)
/// splits g_x = (B - gamma A) x / (1 - gamma), column (x, 1) splits a_x = A x,
/// each off-diagonal mass going (1 - gamma, gamma) to layers (0, 1) and the
/// diagonal kept whole on the source's own layer.
inline RateMatrix split_rate_matrix(const RateMatrix& A, const RateMatrix& B, double gamma) {
    const Matrix g = split_source_rates(A, B, gamma);
    const Eigen::Index n = A.size();
    Matrix s = Matrix::Zero(2 * n, 2 * n);
    for (int layer = 0; layer < 2; ++layer) {
        for (StateIndex x = 0; x < n; ++x) {
            const Vector col = layer == 0 ? Vector(g.col(x)) : Vector(A.rates().col(x));
            const Eigen::Index c = x + layer * n;
            for (StateIndex y = 0; y < n; ++y) {
                if (y == x) continue;
                s(y, c) = (1.0 - gamma) * col(y);
                s(y + n, c) = gamma * col(y);
            }
            s(c, c) = col(x);
        }
    }
    return RateMatrix::validate(s);
}

/// Split measure: (1 - gamma) q on layer 0, gamma q on layer 1.
inline Vector split_measure(const Vector& q, double gamma) {
    Vector out(2 * q.size());
    out << (1.0 - gamma) * q, gamma * q;
    return out;
}

/// Sums the two layers.
inline Vector project_split(const Vector& q) {
    const Eigen::Index n = q.size() / 2;
    return q.head(n) + q.tail(n);
}

struct SplitTrajectory {
    Trajectory marginal;       // projection on the base space
    std::vector<int> layers;   // layer after each recorded jump, plus the initial one
    double layer1_time = 0.0;  // time spent in layer 1
    std::size_t events = 0;    // uniformised events including virtual ones
};

/// Split chain run by per-state uniformisation: at base state x events come at
/// rate max(|a_xx|, |g_xx|); layer 1 moves along A x, layer 0 along g_x, the
/// leftover rate is a virtual self-event, and after every event the layer is
/// redrawn as Bernoulli(gamma). Given its base path the layer is an
/// independent coin, so the base process is exactly the B-chain and layer 1 is
/// occupied a fraction gamma of the time.
inline SplitTrajectory split_chain_simulate(const RateMatrix& A, const RateMatrix& B, double gamma, SplitState x0,
                                            double horizon, std::uint64_t seed, std::uint64_t stream_id = 0,
                                            std::optional<std::size_t> max_jumps = {}) {
    const Matrix g = split_source_rates(A, B, gamma);
    detail::require_state(A.size(), x0.base, "initial state");
    if (x0.layer != 0 && x0.layer != 1) throw Error(Errc::InvalidArgument, "layer must be 0 or 1");
    if (!(horizon >= 0.0)) throw Error(Errc::InvalidArgument, "horizon must be >= 0");
    auto gen = rng::stream(seed, stream_id);
    SplitTrajectory out;
    out.marginal.seed = seed;
    out.marginal.horizon = horizon;
    out.marginal.states.push_back(x0.base);
    out.layers.push_back(x0.layer);
    StateIndex x = x0.base;
    int layer = x0.layer;
    double t = 0.0;
    while (true) {
        const double lam = std::max(A.exit_rate(x), -g(x, x));
        if (!(lam > 0.0)) {
            if (layer == 1) out.layer1_time += horizon - t;
            break;
        }
        const double dt = rng::exponential(gen, lam);
        if (t + dt > horizon) {
            if (layer == 1) out.layer1_time += horizon - t;
            break;
        }
        if (layer == 1) out.layer1_time += dt;
        t += dt;
        ++out.events;
        Vector col = layer == 1 ? Vector(A.rates().col(x)) : Vector(g.col(x));
        col(x) = 0.0;
        const int y = rng::pick(gen, col, lam);
        layer = rng::uniform(gen) <= gamma ? 1 : 0;
        if (y >= 0 && y != x) {
            x = y;
            out.marginal.jump_times.push_back(t);
            out.marginal.states.push_back(x);
            out.layers.push_back(layer);
            if (max_jumps && out.marginal.jump_times.size() >= *max_jumps) {
                out.marginal.horizon = t;
                break;
            }
        }
    }
    return out;
}

// ---- change of measure -------------------------------------------------------

struct WeightedLaw {
    Vector law;         // estimate of P^B(X_t = .)
    Vector std_error;   // per state
    double mean_weight = 0.0;
};

/// Estimates the time-t law of the B-chain from A-paths reweighted by the
/// likelihood ratio exp(-int (|b_XX| - |a_XX|) ds) prod b_{X X-} / a_{X X-}.
/// B must not charge jumps that A forbids.
inline WeightedLaw girsanov_law_estimate(const RateMatrix& A, const RateMatrix& B, StateIndex x0, double t,
                                         std::size_t samples, std::uint64_t seed) {
    const Eigen::Index n = A.size();
    if (B.size() != n) throw Error(Errc::DimensionMismatch, "rate matrices differ in size");
    for (Eigen::Index j = 0; j < n; ++j)
        for (Eigen::Index i = 0; i < n; ++i)
            if (i != j && B(i, j) > 0.0 && !(A(i, j) > 0.0))
                throw Error(Errc::InvalidArgument, "B charges a jump that A forbids");
    Vector s = Vector::Zero(n), s2 = Vector::Zero(n);
    double wsum = 0.0;
    for (std::size_t k = 0; k < samples; ++k) {
        const Trajectory tr = simulate(A, x0, t, seed, k);
        double logw = 0.0;
        double prev = 0.0;
        for (std::size_t j = 0; j < tr.jump_times.size(); ++j) {
            const StateIndex from = tr.states[j], to = tr.states[j + 1];
            logw -= (B.exit_rate(from) - A.exit_rate(from)) * (tr.jump_times[j] - prev);
            logw += std::log(B(to, from) / A(to, from));
            prev = tr.jump_times[j];
        }
        logw -= (B.exit_rate(tr.states.back()) - A.exit_rate(tr.states.back())) * (t - prev);
        const double w = std::exp(logw);
        wsum += w;
        s(tr.states.back()) += w;
        s2(tr.states.back()) += w * w;
    }
    const double m = static_cast<double>(samples);
    WeightedLaw out;
    out.law = s / m;
    out.std_error = ((s2 / m - out.law.cwiseProduct(out.law)).cwiseMax(0.0) / m).cwiseSqrt();
    out.mean_weight = wsum / m;
    return out;
}

}  // namespace ebsde
