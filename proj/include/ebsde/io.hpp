#pragma once

// JSON ingestion and result serialisation. Requires nlohmann/json (json.hpp).

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "ebsde/chain.hpp"
#include "ebsde/control.hpp"
#include "ebsde/discounted.hpp"
#include "ebsde/driver.hpp"
#include "ebsde/ebsde.hpp"

namespace ebsde::io {

using json = nlohmann::json;

inline constexpr const char* kToolVersion = "1.0.0";

namespace detail {

inline void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw Error(Errc::Parse, where + ": expected an object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key())) throw Error(Errc::Parse, where + "/" + it.key() + ": unknown key");
}

inline const json& require(const json& j, const std::string& key, const std::string& where) {
    if (!j.contains(key)) throw Error(Errc::Parse, where + "/" + key + ": missing");
    return j.at(key);
}

inline double number(const json& j, const std::string& where) {
    if (!j.is_number()) throw Error(Errc::Parse, where + ": expected a number");
    return j.get<double>();
}

inline Matrix matrix(const json& j, const std::string& where) {
    if (!j.is_array() || j.empty()) throw Error(Errc::Parse, where + ": expected a non-empty array of rows");
    const auto rows = static_cast<Eigen::Index>(j.size());
    Eigen::Index cols = -1;
    Matrix m;
    for (Eigen::Index r = 0; r < rows; ++r) {
        const json& row = j[static_cast<std::size_t>(r)];
        const std::string rw = where + "/" + std::to_string(r);
        if (!row.is_array()) throw Error(Errc::Parse, rw + ": expected an array");
        if (cols < 0) {
            cols = static_cast<Eigen::Index>(row.size());
            m.resize(rows, cols);
        } else if (static_cast<Eigen::Index>(row.size()) != cols) {
            throw Error(Errc::Parse, rw + ": ragged row");
        }
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = number(row[static_cast<std::size_t>(c)], rw + "/" + std::to_string(c));
    }
    return m;
}

inline Vector vector(const json& j, const std::string& where) {
    if (!j.is_array()) throw Error(Errc::Parse, where + ": expected an array");
    Vector v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t k = 0; k < j.size(); ++k) v(static_cast<Eigen::Index>(k)) = number(j[k], where + "/" + std::to_string(k));
    return v;
}

inline RateMatrix rate_matrix(const json& j, const std::string& convention, const std::string& where) {
    Matrix m = matrix(j, where);
    if (convention == "generator") m.transposeInPlace();
    else if (convention != "rate") throw Error(Errc::Parse, where + ": convention must be 'rate' or 'generator'");
    return RateMatrix::validate(m);
}

/// Twelve significant digits.
inline double round12(double x) {
    if (!std::isfinite(x)) return x;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.12g", x);
    return std::strtod(buf, nullptr);
}

}  // namespace detail

inline json parse_text(const std::string& text, const std::string& where) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw Error(Errc::Parse, where + ": " + e.what());
    }
}

inline json read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::Parse, path + ": cannot open");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_text(ss.str(), path);
}

/// {"n": 4, "rates": [[...]], "convention": "rate" | "generator"}; rates are
/// row-major with entry (i, j) the rate j -> i, or its transpose for "generator".
inline RateMatrix chain_from_json(const json& j, const std::string& where = "") {
    detail::reject_unknown(j, {"n", "rates", "convention"}, where);
    const std::string convention = j.value("convention", std::string("rate"));
    RateMatrix A = detail::rate_matrix(detail::require(j, "rates", where), convention, where + "/rates");
    if (j.contains("n")) {
        const json& n = j.at("n");
        if (!n.is_number_integer() || n.get<long>() != A.size())
            throw Error(Errc::Parse, where + "/n: does not match the rate matrix");
    }
    return A;
}

inline json chain_to_json(const RateMatrix& A) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < A.size(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < A.size(); ++j) row.push_back(A(i, j));
        rows.push_back(row);
    }
    return {{"n", A.size()}, {"rates", rows}};
}

inline std::vector<StateIndex> state_list(const json& j, Eigen::Index n, const std::string& where) {
    if (!j.is_array()) throw Error(Errc::Parse, where + ": expected an array of states");
    std::vector<StateIndex> out;
    for (std::size_t k = 0; k < j.size(); ++k) {
        const std::string w = where + "/" + std::to_string(k);
        if (!j[k].is_number_integer()) throw Error(Errc::Parse, w + ": expected a state index");
        const long x = j[k].get<long>();
        if (x < 0 || x >= n) throw Error(Errc::Parse, w + ": state out of range");
        out.push_back(static_cast<StateIndex>(x));
    }
    return out;
}

/// Drivers:
///   {"type": "zero"}
///   {"type": "state_cost", "g": [...]}
///   {"type": "rate_uncertainty", "zeta": [0], "beta": 2.0, "classical": false}
///   {"type": "hamiltonian", "controls": [rates...], "costs": [[L(x, u)]...], "gamma": 0.5, "convention": "rate"}
inline Driver driver_from_json(const json& j, const RateMatrix& A, const std::string& where = "") {
    if (!j.is_object()) throw Error(Errc::Parse, where + ": expected an object");
    const json& type = detail::require(j, "type", where);
    if (!type.is_string()) throw Error(Errc::Parse, where + "/type: expected a string");
    const std::string t = type.get<std::string>();
    if (t == "zero") {
        detail::reject_unknown(j, {"type"}, where);
        return zero_driver(A.size());
    }
    if (t == "state_cost") {
        detail::reject_unknown(j, {"type", "g"}, where);
        Vector g = detail::vector(detail::require(j, "g", where), where + "/g");
        if (g.size() != A.size()) throw Error(Errc::Parse, where + "/g: length differs from the chain");
        return state_cost_driver(g);
    }
    if (t == "rate_uncertainty") {
        detail::reject_unknown(j, {"type", "zeta", "beta", "classical"}, where);
        const auto zeta = state_list(detail::require(j, "zeta", where), A.size(), where + "/zeta");
        const double beta = detail::number(detail::require(j, "beta", where), where + "/beta");
        const bool classical = j.value("classical", false);
        return rate_uncertainty_driver(A, zeta, beta, classical);
    }
    if (t == "hamiltonian") {
        detail::reject_unknown(j, {"type", "controls", "costs", "gamma", "convention"}, where);
        const std::string conv = j.value("convention", std::string("rate"));
        ControlProblem P{A, {}, detail::matrix(detail::require(j, "costs", where), where + "/costs"),
                         detail::number(detail::require(j, "gamma", where), where + "/gamma")};
        const json& controls = detail::require(j, "controls", where);
        if (!controls.is_array()) throw Error(Errc::Parse, where + "/controls: expected an array");
        for (std::size_t u = 0; u < controls.size(); ++u)
            P.controls.push_back(detail::rate_matrix(controls[u], conv, where + "/controls/" + std::to_string(u)));
        return Hamiltonian(P).driver();
    }
    throw Error(Errc::Parse, where + "/type: unknown driver type '" + t + "'");
}

struct MdpSpec {
    std::vector<std::string> control_names;
    bool robust = false;
    ControlProblem plain{RateMatrix::validate(Matrix::Zero(2, 2)), {}, Matrix(), 0.0};
    RobustControlProblem robust_problem{RateMatrix::validate(Matrix::Zero(2, 2)), {}, Matrix(), 0.0};
};

/// {"states": n, "controls": [names], "reference": rates, "rate_matrices": [rates per control]
///  | "robust_rate_matrices": [[rates per (u, w)]], "cost": [[L(x, u)]], "gamma": g, "convention": "rate"}
inline MdpSpec mdp_from_json(const json& j, const std::string& where = "") {
    detail::reject_unknown(j, {"states", "controls", "reference", "rate_matrices", "robust_rate_matrices", "cost", "gamma",
                               "convention"},
                           where);
    const std::string conv = j.value("convention", std::string("rate"));
    MdpSpec spec;
    const RateMatrix A = detail::rate_matrix(detail::require(j, "reference", where), conv, where + "/reference");
    if (j.contains("states") && (!j.at("states").is_number_integer() || j.at("states").get<long>() != A.size()))
        throw Error(Errc::Parse, where + "/states: does not match the reference matrix");
    const Matrix cost = detail::matrix(detail::require(j, "cost", where), where + "/cost");
    const double gamma = detail::number(detail::require(j, "gamma", where), where + "/gamma");
    if (j.contains("rate_matrices") == j.contains("robust_rate_matrices"))
        throw Error(Errc::Parse, where + ": give exactly one of rate_matrices and robust_rate_matrices");
    std::size_t m = 0;
    if (j.contains("rate_matrices")) {
        const json& list = j.at("rate_matrices");
        if (!list.is_array()) throw Error(Errc::Parse, where + "/rate_matrices: expected an array");
        spec.plain = ControlProblem{A, {}, cost, gamma};
        for (std::size_t u = 0; u < list.size(); ++u)
            spec.plain.controls.push_back(detail::rate_matrix(list[u], conv, where + "/rate_matrices/" + std::to_string(u)));
        m = list.size();
        validate(spec.plain);
    } else {
        const json& list = j.at("robust_rate_matrices");
        if (!list.is_array()) throw Error(Errc::Parse, where + "/robust_rate_matrices: expected an array");
        spec.robust = true;
        spec.robust_problem = RobustControlProblem{A, {}, cost, gamma};
        for (std::size_t u = 0; u < list.size(); ++u) {
            const std::string wu = where + "/robust_rate_matrices/" + std::to_string(u);
            if (!list[u].is_array()) throw Error(Errc::Parse, wu + ": expected an array of matrices");
            std::vector<RateMatrix> fam;
            for (std::size_t w = 0; w < list[u].size(); ++w)
                fam.push_back(detail::rate_matrix(list[u][w], conv, wu + "/" + std::to_string(w)));
            spec.robust_problem.families.push_back(std::move(fam));
        }
        m = list.size();
        validate(spec.robust_problem);
    }
    if (j.contains("controls")) {
        const json& names = j.at("controls");
        if (!names.is_array() || names.size() != m) throw Error(Errc::Parse, where + "/controls: one name per control expected");
        for (const json& s : names) {
            if (!s.is_string()) throw Error(Errc::Parse, where + "/controls: names must be strings");
            spec.control_names.push_back(s.get<std::string>());
        }
    } else {
        for (std::size_t u = 0; u < m; ++u) spec.control_names.push_back(std::to_string(u));
    }
    return spec;
}

/// 64-bit FNV-1a of the compact serialisation.
inline std::string spec_hash(const json& spec) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : spec.dump()) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline json number_json(double x) {
    if (std::isfinite(x)) return detail::round12(x);
    return std::isnan(x) ? json("nan") : json(x > 0 ? "inf" : "-inf");
}

inline json vector_json(const Vector& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(number_json(v(i)));
    return a;
}

inline json matrix_json(const Matrix& m) {
    json a = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) a.push_back(vector_json(m.row(i).transpose()));
    return a;
}

inline json envelope(const json& input) {
    return {{"tool_version", kToolVersion}, {"spec_hash", spec_hash(input)}};
}

inline json to_json(const VerificationReport& r) {
    json j{{"equation_residual", number_json(r.equation_residual)},
           {"lambda_identity", number_json(r.lambda_identity)},
           {"representation_residual", number_json(r.representation_residual)},
           {"driver_bound", number_json(r.driver_bound)},
           {"lambda_bound_ok", r.lambda_bound_ok},
           {"oscillation", number_json(r.oscillation)},
           {"oscillation_ok", r.oscillation_ok},
           {"tolerance", number_json(r.tolerance)},
           {"pass", r.pass}};
    j["oscillation_bound"] = r.oscillation_bound ? number_json(*r.oscillation_bound) : json(nullptr);
    return j;
}

inline json to_json(const EbsdeSolution& s) {
    json j{{"v", vector_json(s.v)},
           {"lambda", number_json(s.lambda)},
           {"normalization", s.normalization.label()},
           {"residual", number_json(s.residual)},
           {"method", to_string(s.method)},
           {"iterations", s.iterations},
           {"newton", s.used_newton},
           {"warnings", s.warnings}};
    if (s.method == EbsdeMethod::vanishing_discount) {
        json trace = json::array();
        for (const DiscountStep& d : s.discount_trace)
            trace.push_back({{"alpha", number_json(d.alpha)},
                             {"lambda_estimate", number_json(d.lambda_estimate)},
                             {"lambda_extrapolated", number_json(d.lambda_extrapolated)},
                             {"increment", number_json(d.increment)},
                             {"iterations", d.iterations}});
        j["discount_trace"] = trace;
        j["raw_limit"] = {{"v", vector_json(s.raw_v)},
                          {"lambda", number_json(s.raw_lambda)},
                          {"residual", number_json(s.raw_residual)}};
    } else {
        j["final_residuals"] = json::array();
        const std::size_t k0 = s.residual_trace.size() > 10 ? s.residual_trace.size() - 10 : 0;
        for (std::size_t k = k0; k < s.residual_trace.size(); ++k) j["final_residuals"].push_back(number_json(s.residual_trace[k]));
    }
    return j;
}

inline json to_json(const DiscountedSolution& s) {
    return {{"alpha", number_json(s.alpha)},
            {"v", vector_json(s.v)},
            {"residual", number_json(s.residual)},
            {"iterations", s.iterations},
            {"method", to_string(s.method)},
            {"bound", number_json(s.bound)},
            {"bound_ok", s.bound_ok},
            {"jump_spread", number_json(s.jump_spread)},
            {"jump_spread_ok", s.jump_spread <= 2.0 * s.v.cwiseAbs().maxCoeff() + 1e-12},
            {"warnings", s.warnings}};
}

}  // namespace ebsde::io
