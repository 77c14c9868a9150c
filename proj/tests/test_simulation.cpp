#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "test_support.hpp"

using namespace ebsde;
using namespace testing_support;

namespace {

RateMatrix two_state(double a, double b) {
    Matrix m(2, 2);
    m << -a, b, a, -b;
    return RateMatrix::validate(m);
}

}  // namespace

TEST(Simulate, ZeroHorizonHasNoJumps) {
    const Trajectory tr = simulate(table51::path_chain(), 2, 0.0, 7);
    EXPECT_EQ(tr.jumps(), 0u);
    ASSERT_EQ(tr.states.size(), 1u);
    EXPECT_EQ(tr.states[0], 2);
    EXPECT_EQ(tr.state_at(0.0), 2);
}

TEST(Simulate, TrajectoryIsConsistent) {
    const RateMatrix A = table51::path_chain();
    const Trajectory tr = simulate(A, 0, 50.0, 8);
    ASSERT_EQ(tr.states.size(), tr.jumps() + 1);
    for (std::size_t k = 0; k < tr.jumps(); ++k) {
        EXPECT_GT(A(tr.states[k + 1], tr.states[k]), 0.0);
        if (k > 0) EXPECT_GT(tr.jump_times[k], tr.jump_times[k - 1]);
        EXPECT_EQ(tr.state_at(tr.jump_times[k]), tr.states[k + 1]);
    }
    EXPECT_LE(tr.jump_times.back(), 50.0);
}

TEST(Simulate, TwoStateOccupation) {
    const Trajectory tr = simulate(two_state(1.0, 2.0), 0, 2e4, 9);
    const Vector occ = occupation(tr, 2);
    EXPECT_NEAR(occ(0), 2.0 / 3.0, 0.01);
    EXPECT_NEAR(occ.sum(), 1.0, 1e-12);
}

TEST(Simulate, PathChainOccupationMatchesStationaryLaw) {
    const RateMatrix A = table51::path_chain();
    const Vector occ = occupation(simulate(A, 0, 2e4, 10), 4);
    const Vector pi = stationary_distribution(A).weights();
    EXPECT_LE((occ - pi).cwiseAbs().maxCoeff(), 0.01);
}

TEST(Simulate, SeededRunsAreIdentical) {
    const RateMatrix A = table51::path_chain();
    std::ostringstream a, b, c;
    simulate(A, 1, 100.0, 42, 3).write_csv(a);
    simulate(A, 1, 100.0, 42, 3).write_csv(b);
    simulate(A, 1, 100.0, 42, 4).write_csv(c);
    EXPECT_EQ(a.str(), b.str());
    EXPECT_NE(a.str(), c.str());
}

TEST(Simulate, MaxJumpsTruncates) {
    const Trajectory tr = simulate(table51::path_chain(), 0, 1e9, 11, 0, 100);
    EXPECT_EQ(tr.jumps(), 100u);
    EXPECT_EQ(tr.horizon, tr.jump_times.back());
}

TEST(Coupling, TwoStateMeetingIsExponential) {
    // Copies started apart meet at the first jump of either one: T ~ Exp(2).
    const CouplingStats st = coupling_times(two_state(1.0, 1.0), 0, 1, 20000, 12, {0.5});
    double mean = 0.0;
    for (double t : st.meeting_times) mean += t;
    mean /= static_cast<double>(st.meeting_times.size());
    EXPECT_NEAR(mean, 0.5, 0.015);
    ASSERT_EQ(st.mgf.size(), 1u);
    EXPECT_NEAR(st.mgf[0].mean, 4.0 / 3.0, 3.0 * st.mgf[0].half_width);
    const TailFit fit = tail_rate_fit(st.meeting_times);
    EXPECT_NEAR(fit.rate, 2.0, 0.2);
    EXPECT_GE(fit.r_squared, 0.95);
}

TEST(Coupling, PathChainTailIsExponential) {
    const CouplingStats st = coupling_times(table51::path_chain(), 0, 3, 5000, 13);
    const TailFit fit = tail_rate_fit(st.meeting_times);
    EXPECT_GT(fit.rate, 0.0);
    EXPECT_GE(fit.r_squared, 0.95);
}

TEST(Coupling, Errors) {
    const RateMatrix A = table51::path_chain();
    EXPECT_THROW(coupling_times(A, 1, 1, 10, 1), Error);
    try {
        coupling_times(A, 0, 3, 10, 1, {}, 0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::MeetingTimeout);
    }
}

TEST(Coupling, SeededRunsAreIdentical) {
    const RateMatrix A = table51::path_chain();
    const CouplingStats a = coupling_times(A, 0, 2, 500, 99), b = coupling_times(A, 0, 2, 500, 99);
    EXPECT_EQ(a.meeting_times, b.meeting_times);
    EXPECT_EQ(a.jump_counts, b.jump_counts);
}

TEST(EmpiricalGenerator, RecoversPathChain) {
    const RateMatrix A = table51::path_chain();
    const EmpiricalGenerator eg = empirical_generator(simulate(A, 0, 1e12, 14, 0, 100000), 4);
    EXPECT_LE(eg.max_z_score(A), 3.0);
    for (Eigen::Index j = 0; j < 4; ++j)
        for (Eigen::Index i = 0; i < 4; ++i)
            if (i != j) {
                EXPECT_LE(eg.lower(i, j, 4.0), A(i, j));
                EXPECT_GE(eg.upper(i, j, 4.0), A(i, j));
            }
}

TEST(EmpiricalGenerator, RecoversPerturbedChain) {
    const RateMatrix A = table51::path_chain();
    const Driver f = rate_uncertainty_driver(A, {1, 2}, 2.0);
    const EbsdeSolution s = solve_direct(A, f);
    const RateMatrix B = perturbed_rate_matrix(A, f, s.v, Vector::Zero(4)).B;
    const EmpiricalGenerator eg = empirical_generator(simulate(B, 0, 1e12, 15, 0, 100000), 4);
    EXPECT_LE(eg.max_z_score(B), 3.0);
}

TEST(EmpiricalGenerator, ShortRunIsLowConfidence) {
    const EmpiricalGenerator eg = empirical_generator(simulate(table51::path_chain(), 0, 1e12, 16, 0, 1), 4);
    for (bool low : eg.low_confidence) EXPECT_TRUE(low);
    EXPECT_EQ(eg.counts.sum(), 1.0);
}

TEST(Split, LiteralMatrixIntegratesToB) {
    std::mt19937_64 g(17);
    const RateMatrix A = table51::path_chain();
    for (int rep = 0; rep < 10; ++rep) {
        const RateMatrix B = random_strictly_controlled(A, 0.3, g);
        const RateMatrix S = split_rate_matrix(A, B, 0.3);
        const Vector q = random_vector(4, g);
        EXPECT_LE((project_split(S.rates() * split_measure(q, 0.3)) - B.rates() * q).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_NEAR(project_split(split_measure(q, 0.3)).sum(), q.sum(), 1e-12);
    }
}

TEST(Split, MarginalIsTheBChain) {
    std::mt19937_64 g(18);
    const RateMatrix A = table51::path_chain();
    const RateMatrix B = random_strictly_controlled(A, 0.3, g);
    const SplitTrajectory tr = split_chain_simulate(A, B, 0.3, {0, 1}, 1e12, 19, 0, 100000);
    EXPECT_LE(empirical_generator(tr.marginal, 4).max_z_score(B), 3.0);
    EXPECT_NEAR(tr.layer1_time / tr.marginal.horizon, 0.3, 0.01);
    EXPECT_GE(tr.events, tr.marginal.jumps());
}

TEST(Split, MarginalLawMatchesTransitionLaw) {
    std::mt19937_64 g(20);
    const RateMatrix A = table51::path_chain();
    const RateMatrix B = random_strictly_controlled(A, 0.3, g);
    const double t = 0.7;
    const std::size_t samples = 20000;
    Vector hist = Vector::Zero(4);
    for (std::size_t k = 0; k < samples; ++k) {
        const SplitTrajectory tr = split_chain_simulate(A, B, 0.3, {0, 0}, t, 21, k);
        hist(tr.marginal.states.back()) += 1.0;
    }
    hist /= static_cast<double>(samples);
    const Vector law = law_at(B, ProbabilityVector::point_mass(4, 0), t).weights();
    EXPECT_LE((hist - law).cwiseAbs().maxCoeff(), 0.015);
}

TEST(Split, RequiresStrictControl) {
    const RateMatrix A = table51::path_chain();
    try {
        split_chain_simulate(A, RateMatrix::validate(0.1 * A.rates()), 0.3, {0, 1}, 1.0, 1);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::NotStrictlyControlled);
    }
    EXPECT_THROW(split_rate_matrix(A, A, 1.0), Error);
}

TEST(Girsanov, ReweightedPathsGiveBLaw) {
    std::mt19937_64 g(22);
    const RateMatrix A = table51::path_chain();
    const RateMatrix B = random_strictly_controlled(A, 0.3, g);
    const double t = 0.5;
    const WeightedLaw w = girsanov_law_estimate(A, B, 1, t, 40000, 23);
    const Vector law = law_at(B, ProbabilityVector::point_mass(4, 1), t).weights();
    for (Eigen::Index x = 0; x < 4; ++x) EXPECT_NEAR(w.law(x), law(x), 4.0 * w.std_error(x) + 1e-3);
    EXPECT_NEAR(w.mean_weight, 1.0, 0.05);
}

TEST(Rng, UniformAndExponential) {
    auto g = rng::stream(5, 0);
    double s = 0.0, e = 0.0;
    for (int k = 0; k < 100000; ++k) {
        const double u = rng::uniform(g);
        ASSERT_GT(u, 0.0);
        ASSERT_LE(u, 1.0);
        s += u;
        e += rng::exponential(g, 4.0);
    }
    EXPECT_NEAR(s / 1e5, 0.5, 0.005);
    EXPECT_NEAR(e / 1e5, 0.25, 0.005);
}
