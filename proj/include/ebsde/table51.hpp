#pragma once

#include <array>
#include <string>
#include <vector>

#include "ebsde/chain.hpp"
#include "ebsde/driver.hpp"
#include "ebsde/ebsde.hpp"

namespace ebsde::table51 {

/// The 4-state example chain. Its generator A* is
///   [[-3, 1, 2, 0], [1, -3, 2, 0], [0, 2, -3, 1], [0, 2, 1, -3]]
/// and it is defective as a matrix.
inline RateMatrix path_chain() {
    Matrix gen(4, 4);
    gen << -3, 1, 2, 0,
            1, -3, 2, 0,
            0, 2, -3, 1,
            0, 2, 1, -3;
    return RateMatrix::validate(gen.transpose());
}

inline constexpr double kBeta = 2.0;

struct Row {
    std::vector<StateIndex> zeta;  // zero-based
    std::array<double, 4> v;       // zero-sum normalisation
    double lambda;
    double pi_zeta;
};

/// Published values, rounded to four decimals.
inline const std::vector<Row>& published() {
    static const std::vector<Row> rows{
        {{}, {0.0, 0.0, 0.0, 0.0}, 0.0, 0.0},
        {{0}, {0.1207, -0.0172, -0.0517, -0.0517}, 0.0345, 0.125},
        {{1}, {-0.0652, 0.1087, -0.0217, -0.0217}, 0.1304, 0.375},
        {{0, 1}, {0.1, 0.1, -0.1, -0.1}, 0.2, 0.5},
        {{0, 2}, {0.15, -0.05, 0.05, -0.15}, 0.2, 0.5},
        {{0, 3}, {0.0769, -0.0769, -0.0769, 0.0769}, 0.0769, 0.25},
        {{1, 2}, {-0.1429, 0.1429, 0.1429, -0.1429}, 0.4286, 0.75},
        {{0, 1, 2}, {0.1364, 0.1364, 0.0455, -0.3182}, 0.6364, 0.875},
        {{0, 1, 3}, {0.0294, 0.0294, -0.1471, 0.0882}, 0.2941, 0.625},
        {{0, 1, 2, 3}, {0.0, 0.0, 0.0, 0.0}, 1.0, 1.0},
    };
    return rows;
}

inline std::string zeta_label(const std::vector<StateIndex>& zeta) {
    std::string s = "{";
    for (std::size_t k = 0; k < zeta.size(); ++k) {
        if (k) s += ",";
        s += "e" + std::to_string(zeta[k] + 1);
    }
    return s + "}";
}

struct ComputedRow {
    std::vector<StateIndex> zeta;
    Vector v;
    double lambda = 0.0;
    double pi_zeta = 0.0;
    double max_deviation = 0.0;  // against the published row
    double residual = 0.0;
};

inline std::vector<ComputedRow> compute(double beta = kBeta, EbsdeMethod method = EbsdeMethod::direct) {
    const RateMatrix A = path_chain();
    const Vector pi = stationary_distribution(A).weights();
    std::vector<ComputedRow> out;
    for (const Row& row : published()) {
        const Driver f = rate_uncertainty_driver(A, row.zeta, beta, beta == 1.0);
        EbsdeSolution sol;
        if (method == EbsdeMethod::direct) {
            sol = solve_direct(A, f);
        } else {
            sol = solve_vanishing_discount(A, f);
        }
        ComputedRow c;
        c.zeta = row.zeta;
        c.v = sol.v;
        c.lambda = sol.lambda;
        c.residual = sol.residual;
        for (StateIndex x : row.zeta) c.pi_zeta += pi(x);
        c.max_deviation = std::abs(c.lambda - row.lambda);
        for (int i = 0; i < 4; ++i) c.max_deviation = std::max(c.max_deviation, std::abs(c.v(i) - row.v[i]));
        out.push_back(std::move(c));
    }
    return out;
}

}  // namespace ebsde::table51
