#include <gtest/gtest.h>

#include <random>

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

TEST(Validate, AcceptsPathChain) {
    const RateMatrix A = table51::path_chain();
    EXPECT_EQ(A.size(), 4);
    EXPECT_DOUBLE_EQ(A(1, 0), 1.0);  // rate 1 -> 2
    EXPECT_DOUBLE_EQ(A(2, 0), 2.0);
    EXPECT_DOUBLE_EQ(A(0, 0), -3.0);
    EXPECT_FALSE(A.was_projected());
}

TEST(Validate, ZeroMatrixIsValid) { EXPECT_NO_THROW(RateMatrix::validate(Matrix::Zero(3, 3))); }

TEST(Validate, IdentityHasNonzeroColumnSums) {
    try {
        RateMatrix::validate(Matrix::Identity(3, 3));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::ColumnSumNonzero);
    }
}

TEST(Validate, RejectsNegativeOffDiagonalAndShape) {
    Matrix m(2, 2);
    m << 1, -1, -1, 1;
    try {
        RateMatrix::validate(m);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::NegativeOffDiagonal);
    }
    try {
        RateMatrix::validate(Matrix::Zero(2, 3));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::NonSquare);
    }
    Matrix bad = Matrix::Zero(2, 2);
    bad(0, 1) = std::nan("");
    EXPECT_THROW(RateMatrix::validate(bad), Error);
}

TEST(Validate, ProjectsTinyColumnSumDrift) {
    Matrix m(2, 2);
    m << -1.0, 2.0, 1.0 + 5e-10, -2.0;
    const RateMatrix A = RateMatrix::validate(m);
    EXPECT_TRUE(A.was_projected());
    EXPECT_NEAR(A.rates().col(0).sum(), 0.0, 1e-15);
}

TEST(Stationary, PathChain) {
    const Vector pi = stationary_distribution(table51::path_chain()).weights();
    EXPECT_NEAR(pi(0), 0.125, 1e-14);
    EXPECT_NEAR(pi(1), 0.375, 1e-14);
    EXPECT_NEAR(pi(2), 0.375, 1e-14);
    EXPECT_NEAR(pi(3), 0.125, 1e-14);
    EXPECT_LE((table51::path_chain().rates() * pi).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Stationary, SymmetricTwoState) {
    const Vector pi = stationary_distribution(two_state(1, 1)).weights();
    EXPECT_NEAR(pi(0), 0.5, 1e-15);
    EXPECT_NEAR(pi(1), 0.5, 1e-15);
}

TEST(Stationary, MatchesLongHorizonMatrixExponential) {
    std::mt19937_64 g(11);
    for (int rep = 0; rep < 5; ++rep) {
        const RateMatrix A = random_rate_matrix(6, g);
        const Vector pi = stationary_distribution(A).weights();
        const Matrix P = expm(A.rates(), 1e3);
        for (Eigen::Index x = 0; x < 6; ++x) EXPECT_LE((P.col(x) - pi).cwiseAbs().maxCoeff(), 1e-8);
    }
}

TEST(Stationary, RejectsReducible) {
    Matrix m = Matrix::Zero(3, 3);
    m(1, 0) = 1.0;
    m(0, 0) = -1.0;  // state 0 drains into absorbing state 1
    const RateMatrix A = RateMatrix::validate(m);
    EXPECT_FALSE(is_irreducible(A));
    try {
        stationary_distribution(A);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::Reducible);
    }
}

TEST(LawAt, IdentityAtZeroAndConvergence) {
    const RateMatrix A = table51::path_chain();
    const auto mu = ProbabilityVector::from(Vector::LinSpaced(4, 1, 4) / 10.0);
    EXPECT_LE((law_at(A, mu, 0.0).weights() - mu.weights()).cwiseAbs().maxCoeff(), 1e-15);
    const Vector p = law_at(A, ProbabilityVector::point_mass(4, 0), 50.0).weights();
    Vector pi(4);
    pi << 0.125, 0.375, 0.375, 0.125;
    EXPECT_LE((p - pi).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(LawAt, AgreesWithMatrixExponentialAndSemigroup) {
    std::mt19937_64 g(12);
    for (int rep = 0; rep < 5; ++rep) {
        const RateMatrix A = random_rate_matrix(5, g);
        const auto mu = ProbabilityVector::point_mass(5, rep % 5);
        for (double t : {0.01, 0.7, 3.0, 25.0}) {
            const Vector oracle = expm(A.rates(), t) * mu.weights();
            EXPECT_LE((law_at(A, mu, t).weights() - oracle).cwiseAbs().maxCoeff(), 1e-11) << "t=" << t;
        }
        const auto mid = law_at(A, mu, 0.4);
        EXPECT_LE((law_at(A, mid, 1.3).weights() - law_at(A, mu, 1.7).weights()).cwiseAbs().maxCoeff(), 1e-10);
        const auto pi = stationary_distribution(A);
        for (double t : {0.5, 5.0, 50.0}) EXPECT_LE((law_at(A, pi, t).weights() - pi.weights()).cwiseAbs().maxCoeff(), 1e-10);
    }
}

TEST(Psi, PathChainFirstState) {
    Matrix expected(4, 4);
    expected << 3, -1, -2, 0, -1, 1, 0, 0, -2, 0, 2, 0, 0, 0, 0, 0;
    EXPECT_LE((psi(table51::path_chain(), 0) - expected).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Psi, SymmetricPsdWithOnesInKernel) {
    std::mt19937_64 g(13);
    for (int rep = 0; rep < 20; ++rep) {
        const RateMatrix A = random_rate_matrix(2 + rep % 7, g);
        for (StateIndex x = 0; x < A.size(); ++x) {
            const Matrix P = psi(A, x);
            EXPECT_LE((P - P.transpose()).cwiseAbs().maxCoeff(), 1e-14);
            EXPECT_LE((P * Vector::Ones(A.size())).cwiseAbs().maxCoeff(), 1e-13);
            Eigen::SelfAdjointEigenSolver<Matrix> es(P);
            EXPECT_GE(es.eigenvalues().minCoeff(), -1e-12);
            for (StateIndex i = 0; i < A.size(); ++i)
                if (i != x && A(i, x) == 0.0) EXPECT_EQ(P.row(i).cwiseAbs().sum(), 0.0);
            const Vector z = random_vector(A.size(), g);
            double expanded = 0.0;
            for (StateIndex j = 0; j < A.size(); ++j)
                if (j != x) expanded += A(j, x) * (z(j) - z(x)) * (z(j) - z(x));
            EXPECT_NEAR(z.dot(P * z), expanded, 1e-12 * std::max(1.0, expanded));
            EXPECT_NEAR(seminorm_sq(A, x, z), expanded, 1e-12 * std::max(1.0, expanded));
        }
    }
}

TEST(Seminorm, Examples) {
    const RateMatrix A = table51::path_chain();
    Vector e2 = Vector::Zero(4), e4 = Vector::Zero(4);
    e2(1) = 1.0;
    e4(3) = 1.0;
    EXPECT_DOUBLE_EQ(seminorm_sq(A, 0, e2), 1.0);
    EXPECT_DOUBLE_EQ(seminorm_sq(A, 0, e4), 0.0);
    EXPECT_DOUBLE_EQ(seminorm_sq(A, 2, Vector::Constant(4, 3.7)), 0.0);
}

TEST(DeviationMeasure, SumsToZeroAndAveragesOut) {
    const RateMatrix A = table51::path_chain();
    const Vector pi = stationary_distribution(A).weights();
    const Matrix D = deviation_matrix(A);
    for (StateIndex x = 0; x < 4; ++x) EXPECT_NEAR(D.col(x).sum(), 0.0, 1e-12);
    EXPECT_LE((D * pi).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(DeviationMeasure, MatchesQuadrature) {
    const RateMatrix P = table51::path_chain();
    EXPECT_LE((deviation_measure(P, 0) - deviation_measure_quadrature(P, 0)).cwiseAbs().maxCoeff(), 1e-8);
    std::mt19937_64 g(14);
    for (Eigen::Index n = 2; n <= 10; ++n) {
        const RateMatrix A = random_rate_matrix(n, g);
        const StateIndex x = n - 1;
        EXPECT_LE((deviation_measure(A, x) - deviation_measure_quadrature(A, x)).cwiseAbs().maxCoeff(), 1e-8) << "n=" << n;
    }
}

TEST(DeviationMeasure, QuadratureCanGiveUp) {
    QuadratureConfig cfg;
    cfg.max_time = 1e-3;
    try {
        deviation_measure_quadrature(table51::path_chain(), 0, cfg);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::QuadratureNonconvergent);
    }
}

TEST(RateOrder, Examples) {
    const RateMatrix A = table51::path_chain();
    const OrderReport same = rate_order_check(A, A, 1.0, true);
    EXPECT_TRUE(same.controlled);
    EXPECT_FALSE(same.strictly_controlled);

    const RateMatrix B = RateMatrix::validate(2.0 * A.rates());
    const OrderReport twice = rate_order_check(A, B, 1.0, true);
    EXPECT_TRUE(twice.controlled);
    EXPECT_TRUE(twice.strictly_controlled);

    Matrix c = A.rates();
    c(1, 0) = 0.0;  // drop the 1 -> 2 jump
    c(0, 0) = -2.0;
    const OrderReport broken = rate_order_check(A, RateMatrix::validate(c), 0.5, false);
    EXPECT_FALSE(broken.controlled);
    ASSERT_TRUE(broken.violation.has_value());
    EXPECT_EQ(broken.violation->kind, Errc::NegativeOffDiagonal);
    EXPECT_EQ(broken.violation->row, 1);
    EXPECT_EQ(broken.violation->col, 0);

    EXPECT_THROW(rate_order_check(A, two_state(1, 1), 1.0, false), Error);
}

TEST(RateOrder, PartialOrderProperties) {
    std::mt19937_64 g(15);
    for (int rep = 0; rep < 30; ++rep) {
        const RateMatrix A = random_rate_matrix(4, g);
        EXPECT_TRUE(rate_order_check(A, A, 1.0, false).controlled);
        const RateMatrix B = random_strictly_controlled(A, 0.5, g);
        const RateMatrix C = random_strictly_controlled(B, 0.4, g);
        ASSERT_TRUE(rate_order_check(A, B, 0.5, true).strictly_controlled);
        ASSERT_TRUE(rate_order_check(B, C, 0.4, true).strictly_controlled);
        EXPECT_TRUE(rate_order_check(A, C, 0.2, false).controlled);  // transitivity, constants multiply
        // antisymmetry: A <= B and B <= A (gamma = 1) only when equal
        const bool ab = rate_order_check(A, B, 1.0, false).controlled;
        const bool ba = rate_order_check(B, A, 1.0, false).controlled;
        if (ab && ba) EXPECT_LE((A.rates() - B.rates()).cwiseAbs().maxCoeff(), 1e-12);
        const RateMatrix A2 = random_rate_matrix(4, g);
        if (rate_order_check(A, A2, 1.0, false).controlled && rate_order_check(A2, A, 1.0, false).controlled)
            EXPECT_LE((A.rates() - A2.rates()).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_GE(best_strict_control_constant(A, B), 0.5 - 1e-12);
    }
}

TEST(Perturbation, EqualArgumentsGiveA) {
    const RateMatrix A = table51::path_chain();
    const Driver f = rate_uncertainty_driver(A, {0}, 2.0);
    const Vector z = Vector::LinSpaced(4, -1, 2);
    const PerturbedRates pr = perturbed_rate_matrix(A, f, z, z);
    EXPECT_LE((pr.B.rates() - A.rates()).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Perturbation, LinearDriverOnCyclicChainGivesTarget) {
    std::mt19937_64 g(16);
    std::uniform_real_distribution<double> rate(0.3, 2.0);
    for (int rep = 0; rep < 10; ++rep) {
        Vector r(5), r2(5);
        for (int i = 0; i < 5; ++i) {
            r(i) = rate(g);
            r2(i) = r(i) * (0.6 + 2.0 * rate(g));
        }
        const RateMatrix A = cyclic_rate_matrix(r), Ap = cyclic_rate_matrix(r2);
        const Driver f = linear_driver(A, Ap.rates() - A.rates());
        const Vector z = random_vector(5, g);
        const PerturbedRates pr = perturbed_rate_matrix(A, f, z, Vector::Zero(5));
        EXPECT_LE((pr.B.rates() - Ap.rates()).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(Perturbation, LinearDriverMatchesTargetAlongDirection) {
    // On chains with several targets per state only the compensator along
    // z - z' is pinned down: (z - z')^T B x = (z - z')^T A' x.
    std::mt19937_64 g(17);
    for (int rep = 0; rep < 10; ++rep) {
        const RateMatrix A = random_rate_matrix(5, g, 0.6);
        const RateMatrix Ap = random_strictly_controlled(A, 0.5, g);
        const Driver f = linear_driver(A, Ap.rates() - A.rates());
        const Vector z = random_vector(5, g, 0.1);
        try {
            const PerturbedRates pr = perturbed_rate_matrix(A, f, z, Vector::Zero(5));
            for (StateIndex x = 0; x < 5; ++x)
                EXPECT_NEAR(z.dot(pr.B.rates().col(x)), z.dot(Ap.rates().col(x)), 1e-10);
        } catch (const Error& e) {
            EXPECT_EQ(e.code(), Errc::NotBalanced);
        }
    }
}

TEST(Perturbation, PathDriverAtSolutionIsControlled) {
    const RateMatrix A = table51::path_chain();
    for (const auto& row : table51::published()) {
        const Driver f = rate_uncertainty_driver(A, row.zeta, 2.0);
        const EbsdeSolution sol = solve_direct(A, f);
        const PerturbedRates pr = perturbed_rate_matrix(A, f, sol.v, Vector::Zero(4));
        EXPECT_GT(pr.balance_margin, 0.0);
        EXPECT_TRUE(rate_order_check(A, pr.B, pr.balance_margin, false).controlled);
        EXPECT_GT(pr.gamma_star, 0.0);
        EXPECT_LE((pr.B.rates().colwise().sum()).cwiseAbs().maxCoeff(), 1e-12);
        for (Eigen::Index j = 0; j < 4; ++j)
            for (Eigen::Index i = 0; i < 4; ++i)
                if (i != j) EXPECT_EQ(A(i, j) > 0.0, pr.B(i, j) > 0.0);
    }
}

TEST(Perturbation, PreservesColumnSumsAndPattern) {
    std::mt19937_64 g(18);
    for (int rep = 0; rep < 20; ++rep) {
        const RateMatrix A = random_rate_matrix(6, g);
        const Driver f = random_balanced_driver(A, g);
        const Vector z = random_vector(6, g, 2.0), zp = random_vector(6, g, 2.0);
        const PerturbedRates pr = perturbed_rate_matrix(A, f, z, zp);
        EXPECT_LE((pr.B.rates().colwise().sum()).cwiseAbs().maxCoeff(), 1e-12);
        for (Eigen::Index j = 0; j < 6; ++j)
            for (Eigen::Index i = 0; i < 6; ++i)
                if (i != j) EXPECT_EQ(A(i, j) > 0.0, pr.B(i, j) > 0.0);
        EXPECT_GE(pr.balance_margin, 0.3 - 1e-12);
    }
}

TEST(Perturbation, NegativeRateMeansNotBalanced) {
    const RateMatrix A = table51::path_chain();
    const Driver f = linear_driver(A, -3.0 * A.rates());
    Vector z = Vector::Zero(4);
    z(1) = 1.0;
    try {
        perturbed_rate_matrix(A, f, z, Vector::Zero(4));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::NotBalanced);
    }
}

TEST(Ergodicity, PathChainBoundHoldsAtSamples) {
    const ErgodicityEstimate est = ergodicity_estimate(table51::path_chain(), 20.0);
    EXPECT_GT(est.rho, 0.0);
    for (std::size_t k = 0; k < est.times.size(); ++k)
        if (est.distances[k] >= 1e-11)
            EXPECT_LE(est.distances[k], est.R * std::exp(-est.rho * est.times[k]) * (1.0 + 1e-12));
}

TEST(Ergodicity, TwoStateRelaxationRate) {
    const ErgodicityEstimate est = ergodicity_estimate(two_state(1, 1), 10.0);
    EXPECT_GE(est.rho, 2.0 - 1e-6);
    EXPECT_NEAR(est.R, 1.0, 1e-6);
}

TEST(Ergodicity, StrictlyControlledPerturbationsDecay) {
    std::mt19937_64 g(19);
    const RateMatrix A = table51::path_chain();
    for (int rep = 0; rep < 5; ++rep) {
        const RateMatrix B = random_strictly_controlled(A, 0.5, g);
        EXPECT_GT(ergodicity_estimate(B, 20.0).rho, 0.0);
    }
}

TEST(Ergodicity, NoDecayOnShortHorizon) {
    Matrix m(2, 2);
    m << -1e-4, 1e-4, 1e-4, -1e-4;
    try {
        ergodicity_estimate(RateMatrix::validate(m), 1.0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::NoDecay);
    }
}

TEST(Resolvent, SolvesShiftedSystem) {
    std::mt19937_64 g(20);
    const RateMatrix A = random_rate_matrix(6, g);
    const Vector rhs = random_vector(6, g);
    for (double alpha : {0.0, 1e-6, 0.3, 10.0}) {
        const CenteredResolvent r(A, alpha);
        const auto s = r.solve(rhs);
        const Vector lhs = alpha * (Vector::Constant(6, alpha > 0 ? s.average / alpha : 0.0) + s.centered) -
                           A.generator() * s.centered;
        const Vector target = alpha > 0 ? rhs : Vector(rhs.array() - s.average);
        EXPECT_LE((lhs - target).cwiseAbs().maxCoeff(), 1e-10) << alpha;
        EXPECT_NEAR(r.pi().dot(s.centered), 0.0, 1e-13);
    }
}
