// ebsde-chain: command-line front end for the ebsde library.
//
// Exit codes: 0 success, 1 usage, 2 invalid input, 3 nonconvergence,
// 4 verification failure.

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ebsde/ebsde_chain.hpp"
#include "ebsde/io.hpp"

using namespace ebsde;
using io::json;

namespace {

constexpr int kExitInvalid = 2;
constexpr int kExitNonconvergence = 3;
constexpr int kExitVerification = 4;

int exit_code_for(Errc c) {
    switch (c) {
    case Errc::Nonconvergence:
    case Errc::ScheduleExhausted:
    case Errc::StepFailure:
    case Errc::MeetingTimeout:
    case Errc::QuadratureNonconvergent:
    case Errc::NoDecay:
        return kExitNonconvergence;
    case Errc::BoundViolation:
        return kExitVerification;
    default:
        return kExitInvalid;
    }
}

void emit(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(Errc::InvalidArgument, path + ": cannot write");
    out << text;
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

Normalization parse_normalization(const std::string& s, Eigen::Index n) {
    if (s == "zero-sum") return Normalization::zero_sum();
    if (s.rfind("anchor:", 0) == 0) {
        const long x = std::stol(s.substr(7));
        if (x < 0 || x >= n) throw Error(Errc::InvalidArgument, "anchor state out of range");
        return Normalization::anchor(static_cast<StateIndex>(x));
    }
    throw Error(Errc::InvalidArgument, "normalization must be zero-sum or anchor:<state>");
}

json chain_source(const json& j, const std::string& where) {
    if (j.is_string()) return io::read_file(j.get<std::string>());
    if (!j.is_object()) throw Error(Errc::Parse, where + ": expected an object or a file path");
    return j;
}

struct SolveArgs {
    std::string chain, driver, spec, method = "direct", normalize = "zero-sum", out, format = "json";
    double tol = 1e-10;
};

// ---- solve -------------------------------------------------------------------

int run_solve(const SolveArgs& a) {
    json chain_j, driver_j, input;
    std::vector<double> schedule;
    std::string method = a.method, normalize = a.normalize, out = a.out, format = a.format;
    double tol = a.tol;
    StateIndex x0 = 0;
    if (!a.spec.empty()) {
        input = io::read_file(a.spec);
        io::detail::reject_unknown(input, {"chain", "driver", "solver", "output"}, "");
        chain_j = chain_source(io::detail::require(input, "chain", ""), "/chain");
        driver_j = chain_source(io::detail::require(input, "driver", ""), "/driver");
        if (input.contains("solver")) {
            const json& s = input.at("solver");
            io::detail::reject_unknown(s, {"method", "tol", "normalization", "schedule", "x0"}, "/solver");
            method = s.value("method", method);
            tol = s.contains("tol") ? io::detail::number(s.at("tol"), "/solver/tol") : tol;
            normalize = s.value("normalization", normalize);
            if (s.contains("schedule")) {
                const Vector sch = io::detail::vector(s.at("schedule"), "/solver/schedule");
                schedule.assign(sch.data(), sch.data() + sch.size());
            }
            if (s.contains("x0")) x0 = static_cast<StateIndex>(s.at("x0").get<long>());
        }
        if (input.contains("output")) {
            const json& o = input.at("output");
            io::detail::reject_unknown(o, {"path", "format"}, "/output");
            if (out.empty()) out = o.value("path", std::string());
            format = o.value("format", format);
        }
    } else {
        if (a.chain.empty() || a.driver.empty()) throw Error(Errc::InvalidArgument, "solve needs --spec or both --chain and --driver");
        chain_j = io::read_file(a.chain);
        driver_j = io::read_file(a.driver);
        input = {{"chain", chain_j}, {"driver", driver_j}, {"method", method}, {"normalize", normalize}, {"tol", tol}};
    }
    if (format != "json" && format != "csv") throw Error(Errc::Parse, "/output/format: must be json or csv");

    const RateMatrix A = io::chain_from_json(chain_j, "/chain");
    const Driver f = io::driver_from_json(driver_j, A, "/driver");
    EbsdeOptions opts;
    opts.tol = tol;
    opts.normalization = parse_normalization(normalize, A.size());
    EbsdeSolution sol;
    if (method == "direct") {
        sol = solve_direct(A, f, opts);
    } else if (method == "vanishing") {
        VanishingDiscountOptions vo;
        vo.base = opts;
        vo.schedule = schedule;
        vo.x0 = x0;
        sol = solve_vanishing_discount(A, f, vo);
    } else {
        throw Error(Errc::InvalidArgument, "method must be direct or vanishing");
    }
    const VerificationReport rep = verify_solution(A, f, sol);

    if (format == "csv") {
        std::ostringstream os;
        os << std::setprecision(12) << "state,v\n";
        for (Eigen::Index x = 0; x < sol.v.size(); ++x) os << x << ',' << sol.v(x) << '\n';
        os << "lambda," << sol.lambda << '\n';
        emit(out, os.str());
    } else {
        json j = io::envelope(input);
        j["solution"] = io::to_json(sol);
        j["verification"] = io::to_json(rep);
        emit(out, dump(j));
    }
    if (!rep.pass) {
        std::cerr << "verification failed\n";
        return kExitVerification;
    }
    return 0;
}

// ---- discounted ----------------------------------------------------------------

struct DiscountedArgs {
    std::string chain, driver, out;
    double alpha = 1e-3, tol = 1e-12, horizon = 0.0;
};

int run_discounted(const DiscountedArgs& a) {
    const json chain_j = io::read_file(a.chain), driver_j = io::read_file(a.driver);
    const RateMatrix A = io::chain_from_json(chain_j, "/chain");
    const Driver f = io::driver_from_json(driver_j, A, "/driver");
    StationaryOptions so;
    so.tol = a.tol;
    const DiscountedSolution sol = solve_stationary(A, f, a.alpha, so);
    const json input{{"chain", chain_j}, {"driver", driver_j}, {"alpha", a.alpha}, {"tol", a.tol}, {"horizon", a.horizon}};
    json j = io::envelope(input);
    j["solution"] = io::to_json(sol);
    if (a.horizon > 0.0) {
        const HorizonSolution hs = solve_finite_horizon(A, f, a.alpha, a.horizon, Vector::Zero(A.size()));
        j["finite_horizon"] = {{"horizon", a.horizon},
                               {"v0", io::vector_json(hs.values.front())},
                               {"distance_to_stationary", io::number_json((hs.values.front() - sol.v).cwiseAbs().maxCoeff())},
                               {"bound_ok", hs.bound_ok}};
    }
    emit(a.out, dump(j));
    return sol.bound_ok ? 0 : kExitVerification;
}

// ---- table51 -------------------------------------------------------------------

struct TableArgs {
    double beta = table51::kBeta;
    std::string method = "direct", out;
};

int run_table51(const TableArgs& a) {
    const EbsdeMethod m = a.method == "vanishing" ? EbsdeMethod::vanishing_discount : EbsdeMethod::direct;
    if (a.method != "direct" && a.method != "vanishing") throw Error(Errc::InvalidArgument, "method must be direct or vanishing");
    const auto rows = table51::compute(a.beta, m);
    const bool compare = a.beta == table51::kBeta;
    std::ostringstream os;
    os << "zeta,v1,v2,v3,v4,lambda,pi_zeta" << (compare ? ",max_deviation\n" : "\n");
    double worst = 0.0;
    os << std::fixed;
    for (const auto& r : rows) {
        os << '"' << table51::zeta_label(r.zeta) << '"' << std::setprecision(4);
        for (int i = 0; i < 4; ++i) os << ',' << (std::abs(r.v(i)) < 5e-5 ? 0.0 : r.v(i));
        os << ',' << r.lambda << ',' << std::setprecision(6) << r.pi_zeta;
        if (compare) os << ',' << std::scientific << std::setprecision(2) << r.max_deviation << std::fixed;
        os << '\n';
        worst = std::max(worst, r.max_deviation);
    }
    emit(a.out, os.str());
    if (compare) {
        std::cerr << "max deviation from published table: " << std::scientific << std::setprecision(3) << worst << '\n';
        if (worst > 5e-4) return kExitVerification;
    }
    return 0;
}

// ---- control -------------------------------------------------------------------

struct ControlArgs {
    std::string problem, out;
    bool robust = false, brute = false;
};

int run_control(const ControlArgs& a) {
    const json input = io::read_file(a.problem);
    const io::MdpSpec spec = io::mdp_from_json(input, "");
    if (a.robust != spec.robust)
        throw Error(Errc::InvalidArgument, a.robust ? "--robust needs robust_rate_matrices" : "robust problem needs --robust");
    json j = io::envelope(input);
    auto names = [&](const Policy& pol) {
        json p = json::array();
        for (int u : pol) p.push_back(spec.control_names[static_cast<std::size_t>(u)]);
        return p;
    };
    int code = 0;
    if (spec.robust) {
        const ControlSolution cs = solve_robust_control(spec.robust_problem);
        j["solution"] = io::to_json(cs.ebsde);
        j["policy"] = names(cs.policy);
        j["worst_case"] = cs.worst_case;
        if (a.brute) j["brute_force"] = "not available for robust problems";
    } else {
        const ControlSolution cs = solve_control(spec.plain);
        j["solution"] = io::to_json(cs.ebsde);
        j["policy"] = names(cs.policy);
        j["policy_value"] = io::number_json(evaluate_policy(spec.plain, cs.policy));
        if (a.brute) {
            const BruteForceResult bf = brute_force_optimal(spec.plain);
            const bool agree = std::abs(bf.value - cs.ebsde.lambda) <= 1e-6;
            j["brute_force"] = {{"value", io::number_json(bf.value)},
                                {"policy", names(bf.policy)},
                                {"policies", bf.policies},
                                {"agrees", agree}};
            if (!agree) code = kExitVerification;
        }
    }
    emit(a.out, dump(j));
    return code;
}

// ---- simulation ----------------------------------------------------------------

struct SimArgs {
    std::string chain, out, csv;
    long x0 = 0;
    double horizon = 100.0;
    std::uint64_t seed = 1;
    std::size_t samples = 1;
};

int run_simulate(const SimArgs& a) {
    const json chain_j = io::read_file(a.chain);
    const RateMatrix A = io::chain_from_json(chain_j, "/chain");
    std::vector<Trajectory> runs;
    for (std::size_t k = 0; k < a.samples; ++k) runs.push_back(simulate(A, a.x0, a.horizon, a.seed, k));
    if (!a.csv.empty()) {
        std::ostringstream os;
        runs.front().write_csv(os);
        emit(a.csv, os.str());
    }
    const EmpiricalGenerator eg = empirical_generator(runs, A.size());
    Vector occ = Vector::Zero(A.size());
    std::size_t jumps = 0;
    for (const auto& r : runs) {
        occ += occupation(r, A.size());
        jumps += r.jumps();
    }
    occ /= static_cast<double>(runs.size());
    json input{{"chain", chain_j}, {"x0", a.x0}, {"horizon", a.horizon}, {"seed", a.seed}, {"samples", a.samples}};
    json j = io::envelope(input);
    json low = json::array();
    for (bool b : eg.low_confidence) low.push_back(b);
    j["jumps"] = jumps;
    j["occupation"] = io::vector_json(occ);
    j["empirical_rates"] = io::matrix_json(eg.rates);
    j["std_error"] = io::matrix_json(eg.std_error);
    j["low_confidence"] = low;
    j["max_z_score"] = io::number_json(eg.max_z_score(A));
    emit(a.out, dump(j));
    return 0;
}

struct CoupleArgs {
    std::string chain, out;
    long x = 0, y = 1;
    std::size_t samples = 1000;
    std::uint64_t seed = 1;
    std::vector<double> betas;
};

int run_couple(const CoupleArgs& a) {
    const json chain_j = io::read_file(a.chain);
    const RateMatrix A = io::chain_from_json(chain_j, "/chain");
    const CouplingStats st = coupling_times(A, a.x, a.y, a.samples, a.seed, a.betas);
    const TailFit fit = tail_rate_fit(st.meeting_times);
    double mean = 0.0;
    for (double t : st.meeting_times) mean += t;
    mean /= static_cast<double>(st.meeting_times.size());
    json input{{"chain", chain_j}, {"x", a.x}, {"y", a.y}, {"samples", a.samples}, {"seed", a.seed}, {"betas", a.betas}};
    json j = io::envelope(input);
    j["mean_meeting_time"] = io::number_json(mean);
    json mgf = json::array();
    for (const MgfEstimate& m : st.mgf)
        mgf.push_back({{"beta", io::number_json(m.beta)}, {"mean", io::number_json(m.mean)}, {"half_width", io::number_json(m.half_width)}});
    j["mgf"] = mgf;
    j["tail_fit"] = {{"rate", io::number_json(fit.rate)}, {"r_squared", io::number_json(fit.r_squared)}, {"points", fit.points}};
    emit(a.out, dump(j));
    return 0;
}

struct SplitArgs {
    std::string chain, perturbed, out;
    double gamma = 0.5, horizon = 1000.0;
    long x0 = 0;
    int layer = 1;
    std::uint64_t seed = 1;
};

int run_split(const SplitArgs& a) {
    const json chain_j = io::read_file(a.chain), b_j = io::read_file(a.perturbed);
    const RateMatrix A = io::chain_from_json(chain_j, "/chain");
    const RateMatrix B = io::chain_from_json(b_j, "/perturbed");
    const SplitTrajectory st = split_chain_simulate(A, B, a.gamma, {a.x0, a.layer}, a.horizon, a.seed);
    const EmpiricalGenerator eg = empirical_generator(st.marginal, A.size());
    json input{{"chain", chain_j}, {"perturbed", b_j}, {"gamma", a.gamma}, {"x0", a.x0}, {"layer", a.layer},
               {"horizon", a.horizon}, {"seed", a.seed}};
    json j = io::envelope(input);
    j["jumps"] = st.marginal.jumps();
    j["events"] = st.events;
    j["layer1_fraction"] = io::number_json(st.layer1_time / st.marginal.horizon);
    j["marginal_rates"] = io::matrix_json(eg.rates);
    j["max_z_score_vs_B"] = io::number_json(eg.max_z_score(B));
    emit(a.out, dump(j));
    return 0;
}

// ---- diagnose ------------------------------------------------------------------

struct DiagnoseArgs {
    std::string chain, driver, out;
    double horizon = 20.0;
};

int run_diagnose(const DiagnoseArgs& a) {
    const json chain_j = io::read_file(a.chain);
    const RateMatrix A = io::chain_from_json(chain_j, "/chain");
    json input{{"chain", chain_j}, {"horizon", a.horizon}};
    json j;
    j["irreducible"] = is_irreducible(A);
    j["projected_column_sums"] = A.was_projected();
    if (is_irreducible(A)) {
        j["stationary"] = io::vector_json(stationary_distribution(A).weights());
        const ErgodicityEstimate est = ergodicity_estimate(A, a.horizon);
        j["ergodicity"] = {{"R", io::number_json(est.R)},
                           {"rho", io::number_json(est.rho)},
                           {"horizon", io::number_json(est.horizon)},
                           {"max_tv_residual", io::number_json(est.max_tv_residual)}};
    }
    if (!a.driver.empty()) {
        const json driver_j = io::read_file(a.driver);
        input["driver"] = driver_j;
        const Driver f = io::driver_from_json(driver_j, A, "/driver");
        const BalanceReport br = check_balanced(f, A);
        j["balance"] = {{"class", to_string(br.balance)},
                        {"margin", io::number_json(br.margin)},
                        {"min_ratio", io::number_json(br.min_ratio)},
                        {"samples", br.samples},
                        {"witnesses", br.witnesses.size()}};
        if (f.certificate())
            j["certificate"] = {{"margin", io::number_json(f.certificate()->margin)},
                                {"lipschitz", io::number_json(f.certificate()->lipschitz)}};
        j["lipschitz_estimate"] = io::number_json(lipschitz_estimate(f, A));
        j["driver_bound"] = io::number_json(f.bound_at_zero());
    }
    json out = io::envelope(input);
    out.update(j);
    emit(a.out, dump(out));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Ergodic BSDEs on finite Markov chains"};
    app.set_version_flag("--version", std::string(io::kToolVersion));
    app.require_subcommand(1);

    SolveArgs solve;
    auto* s = app.add_subcommand("solve", "Solve the ergodic equation 0 = f(., v) + A* v - lambda 1");
    s->add_option("--chain", solve.chain, "chain JSON");
    s->add_option("--driver", solve.driver, "driver JSON");
    s->add_option("--spec", solve.spec, "problem spec JSON (chain, driver, solver, output)");
    s->add_option("--method", solve.method, "direct | vanishing")->check(CLI::IsMember({"direct", "vanishing"}));
    s->add_option("--normalize", solve.normalize, "zero-sum | anchor:<state>");
    s->add_option("--tol", solve.tol, "residual tolerance");
    s->add_option("--format", solve.format, "json | csv")->check(CLI::IsMember({"json", "csv"}));
    s->add_option("--out", solve.out, "output path (default stdout)");

    DiscountedArgs disc;
    auto* d = app.add_subcommand("discounted", "Solve alpha v = f(., v) + A* v");
    d->add_option("--chain", disc.chain)->required();
    d->add_option("--driver", disc.driver)->required();
    d->add_option("--alpha", disc.alpha)->check(CLI::PositiveNumber);
    d->add_option("--tol", disc.tol);
    d->add_option("--horizon", disc.horizon, "also integrate the finite-horizon system from zero terminal data");
    d->add_option("--out", disc.out);

    TableArgs table;
    auto* t = app.add_subcommand("table51", "Rate-uncertainty example on the 4-state chain, as CSV");
    t->add_option("--beta", table.beta);
    t->add_option("--method", table.method)->check(CLI::IsMember({"direct", "vanishing"}));
    t->add_option("--out", table.out);

    ControlArgs control;
    auto* c = app.add_subcommand("control", "Average-cost control problem");
    c->add_option("--problem", control.problem)->required();
    c->add_flag("--robust", control.robust);
    c->add_flag("--brute-force-check", control.brute);
    c->add_option("--out", control.out);

    SimArgs sim;
    auto* m = app.add_subcommand("simulate", "Simulate trajectories and estimate the generator");
    m->add_option("--chain", sim.chain)->required();
    m->add_option("--x0", sim.x0);
    m->add_option("--horizon", sim.horizon);
    m->add_option("--seed", sim.seed);
    m->add_option("--samples", sim.samples);
    m->add_option("--csv", sim.csv, "write the first trajectory as CSV");
    m->add_option("--out", sim.out);

    CoupleArgs couple;
    auto* k = app.add_subcommand("couple", "Meeting times of two independent copies");
    k->add_option("--chain", couple.chain)->required();
    k->add_option("--x", couple.x);
    k->add_option("--y", couple.y);
    k->add_option("--samples", couple.samples);
    k->add_option("--seed", couple.seed);
    k->add_option("--beta", couple.betas, "moment generating function arguments");
    k->add_option("--out", couple.out);

    SplitArgs split;
    auto* p = app.add_subcommand("split", "Simulate the split chain of B against A");
    p->add_option("--chain", split.chain)->required();
    p->add_option("--perturbed", split.perturbed, "chain JSON for B")->required();
    p->add_option("--gamma", split.gamma);
    p->add_option("--x0", split.x0);
    p->add_option("--layer", split.layer);
    p->add_option("--horizon", split.horizon);
    p->add_option("--seed", split.seed);
    p->add_option("--out", split.out);

    DiagnoseArgs diag;
    auto* g = app.add_subcommand("diagnose", "Ergodicity constants and driver balance report");
    g->add_option("--chain", diag.chain)->required();
    g->add_option("--driver", diag.driver);
    g->add_option("--horizon", diag.horizon);
    g->add_option("--out", diag.out);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : kExitInvalid;
    }

    try {
        if (*s) return run_solve(solve);
        if (*d) return run_discounted(disc);
        if (*t) return run_table51(table);
        if (*c) return run_control(control);
        if (*m) return run_simulate(sim);
        if (*k) return run_couple(couple);
        if (*p) return run_split(split);
        if (*g) return run_diagnose(diag);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code_for(e.code());
    } catch (const json::exception& e) {
        std::cerr << "error: Parse: " << e.what() << '\n';
        return kExitInvalid;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInvalid;
    }
    return 1;
}
