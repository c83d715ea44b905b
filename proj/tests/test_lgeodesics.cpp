#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "ricci/lgeodesics.hpp"

using namespace ricci;

namespace {

// static flat radial window as a backward trajectory reaching tau_max
BackwardTrajectory flat_background(std::size_t n, int dim, double rho_max, double tau_max) {
    auto s0 = surface_flat_radial(n, dim, rho_max);
    s0.t = -tau_max;
    auto s1 = s0;
    s1.t = 0.0;
    return BackwardTrajectory({s0, s1}, 0.0);
}

// shrinking round sphere trajectories (numeric flow), final time t0
BackwardTrajectory round_background(std::size_t n, int dim, double t0, double cadence) {
    RunParams p;
    p.t_end = t0;
    p.cadence = cadence;
    FlowState init = dim == 2 ? surface_round_s2(n, 1.0) : warped3_round(n, 1.0);
    const auto traj = run_flow(init, p);
    REQUIRE(traj.status == RunStatus::Completed);
    return BackwardTrajectory(traj.states, t0);
}

}  // namespace

TEST_CASE("flat L-length of the straight minimizer", "[reduced]") {
    const double rho_max = 10.0, tau_bar = 1.0;
    auto bt = flat_background(256, 2, rho_max, 2.0);
    LGeodesicSolver solver(bt, tau_bar, 256);
    // target |q - p| = 1 means x = 1/rho_max
    const auto path = solver.solve(1.0 / rho_max);
    REQUIRE_THAT(path.L, Catch::Matchers::WithinAbs(0.5, 1e-9));  // d^2/(2 sqrt(tb))
    // straight in s: x(s) proportional to s
    for (std::size_t j = 1; j < path.s.size(); ++j)
        REQUIRE_THAT(path.x[j] / path.s[j],
                     Catch::Matchers::WithinAbs(path.x.back() / path.s.back(), 1e-10));
    // zero-length path
    const auto zero = solver.solve(0.0);
    REQUIRE_THAT(zero.L, Catch::Matchers::WithinAbs(0.0, 1e-14));
    // s-form and tau-form quadratures agree
    REQUIRE_THAT(solver.length_tau_form(path), Catch::Matchers::WithinAbs(path.L, 1e-8));
}

TEST_CASE("flat reduced distance field: l = d^2/(4 tau)", "[reduced]") {
    const double rho_max = 10.0, tau_bar = 1.0;
    auto bt = flat_background(512, 2, rho_max, 2.0);
    LGeodesicSolver solver(bt, tau_bar, 256);
    const auto field = reduced_distance_field(solver, 65);
    REQUIRE(field.failures == 0);
    for (std::size_t i = 0; i < field.x.size(); ++i) {
        const double dist = field.x[i] * rho_max;
        REQUIRE_THAT(field.l[i], Catch::Matchers::WithinAbs(dist * dist / (4 * tau_bar), 1e-6));
    }
    // d = 2, tau_bar = 1 -> l = 1
    REQUIRE_THAT(field.l[2.0 / rho_max * 64], Catch::Matchers::WithinAbs(1.0, 1e-6));
    // min over the grid respects the n/2 bound (trivially: l(p) = 0)
    double lmin = 1e300;
    for (double v : field.l) lmin = std::min(lmin, v);
    REQUIRE(lmin <= 1.0 + 5e-3);
}

TEST_CASE("flat l is scale invariant", "[reduced]") {
    const double c = 2.0;
    auto bt1 = flat_background(512, 2, 10.0, 2.0);
    auto bt2 = flat_background(512, 2, 10.0 * c, 8.0);
    LGeodesicSolver s1(bt1, 1.0, 256);
    LGeodesicSolver s2(bt2, c * c * 1.0, 256);
    // q at the same material position x has coordinate scaled by c
    const double x = 0.35;
    const double l1 = reduced_distance(s1.solve(x));
    const double l2 = reduced_distance(s2.solve(x));
    REQUIRE_THAT(l2, Catch::Matchers::WithinAbs(l1, 1e-8));
}

TEST_CASE("flat identities: K = 0, equalities to 1e-6", "[reduced]") {
    auto bt = flat_background(512, 2, 10.0, 2.0);
    const auto rep = identities_check(bt, 1.0, 160, 513, 512);
    REQUIRE_THAT(rep.K, Catch::Matchers::WithinAbs(0.0, 1e-9));
    REQUIRE(rep.residual_a <= 1e-6);
    REQUIRE(rep.residual_b <= 1e-6);
    REQUIRE_THAT(rep.margin_77, Catch::Matchers::WithinAbs(0.0, 1e-6));  // equality on flat
    REQUIRE(rep.grad_check <= 1e-6);
    REQUIRE(rep.min_l_bound_ok);
}

TEST_CASE("shrinking round surface: solver beats perturbed paths", "[reduced]") {
    auto bt = round_background(128, 2, 0.2, 2e-3);
    LGeodesicSolver solver(bt, 0.1, 256);
    const double x_target = 1.0 / M_PI;  // polar angle 1.0
    const auto geo = solver.solve(x_target);
    std::mt19937_64 rng(2718);
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    double best_pert = 1e300;
    for (int k = 0; k < 1000; ++k) {
        LPath pert = geo;
        const double amp = 0.05 * std::fabs(unif(rng));
        const int mode = 1 + int(3 * std::fabs(unif(rng)));
        const double phase = M_PI * unif(rng);
        for (std::size_t j = 1; j + 1 < pert.s.size(); ++j) {
            const double z = double(j) / double(pert.s.size() - 1);
            pert.x[j] += amp * std::sin(M_PI * z * mode + phase) * std::sin(M_PI * z);
        }
        for (std::size_t j = 0; j < pert.s.size(); ++j) {
            const double ds = pert.s.size() > 1 ? pert.s[1] - pert.s[0] : 1.0;
            if (j == 0)
                pert.xp[j] = (pert.x[1] - pert.x[0]) / ds;
            else if (j + 1 == pert.s.size())
                pert.xp[j] = (pert.x[j] - pert.x[j - 1]) / ds;
            else
                pert.xp[j] = (pert.x[j + 1] - pert.x[j - 1]) / (2 * ds);
        }
        const double lp = solver.length_of(pert);
        best_pert = std::min(best_pert, lp);
        REQUIRE(geo.L <= lp + 1e-8);
    }
    REQUIRE(best_pert - geo.L <= 1e-4 + 0.05);  // perturbations approach the minimum
}

TEST_CASE("flat reduced volume: (4 pi)^{n/2}, constant in tau", "[reduced]") {
    auto bt = flat_background(512, 2, 26.0, 5.0);
    const auto rv = reduced_volume(bt, {1.0, 2.0, 4.0}, 256);
    REQUIRE(rv.valid);
    for (double v : rv.v_tilde)
        REQUIRE_THAT(v, Catch::Matchers::WithinAbs(4.0 * M_PI, 0.005 * 4.0 * M_PI));
    for (std::size_t k = 1; k < rv.v_tilde.size(); ++k)
        REQUIRE_THAT(rv.v_tilde[k], Catch::Matchers::WithinAbs(rv.v_tilde[0],
                                                               1e-3 * rv.v_tilde[0]));
    REQUIRE(rv.upper_bound_ok);
}

TEST_CASE("shrinking round 3-sphere: reduced volume non-increasing", "[reduced]") {
    auto bt = round_background(96, 3, 0.2, 2e-3);
    const auto rv = reduced_volume(bt, {0.05, 0.1, 0.15}, 192);
    REQUIRE(rv.valid);
    REQUIRE(rv.monotone_ok);
    REQUIRE(rv.upper_bound_ok);
    for (std::size_t k = 1; k < rv.v_tilde.size(); ++k) REQUIRE(rv.v_tilde[k] < rv.v_tilde[k - 1]);
    for (double lmin : rv.min_l) REQUIRE(lmin <= 1.5 + 5e-3);
}

TEST_CASE("round S3 identities hold within grid tolerance", "[reduced]") {
    auto bt = round_background(96, 3, 0.2, 2e-3);
    const auto rep = identities_check(bt, 0.1, 30, 97, 256);
    REQUIRE(rep.residual_a <= 1e-3);
    REQUIRE(rep.residual_b <= 1e-3);
    REQUIRE(rep.margin_77 >= -1e-6);
    REQUIRE(rep.min_l_bound_ok);
}

TEST_CASE("kappa reports", "[reduced]") {
    SECTION("static flat R^3 ball ratio") {
        const auto s = surface_flat_radial(512, 3, 8.0);
        const auto reps = kappa_report_static(s, {0.5, 1.0, 2.0}, 1.0);
        for (const auto& rep : reps) {
            REQUIRE(rep.admissible);
            REQUIRE_THAT(rep.ratio, Catch::Matchers::WithinAbs(4.0 * M_PI / 3.0, 1e-9));
        }
    }
    SECTION("static round S3(1) at r = 1/2") {
        const auto s = warped3_round(256, 1.0);
        const auto reps = kappa_report_static(s, {0.5}, 1.0);
        REQUIRE(reps[0].admissible);  // |Rm| = 1 <= 4
        // geodesic ball volume: 4 pi int_0^r sin^2(s) ds
        const double expect =
            (4.0 * M_PI) * (0.5 * 0.5 - 0.25 * std::sin(2 * 0.5)) / std::pow(0.5, 3);
        REQUIRE_THAT(reps[0].ratio, Catch::Matchers::WithinAbs(expect, 1e-4));
    }
    SECTION("shrinking sphere near extinction becomes inadmissible") {
        RunParams p;
        p.ctl.ceiling = 1e4;
        p.t_end = 0.3;
        p.cadence = 0.01;
        const auto traj = run_flow(warped3_round(96, 1.0), p);
        REQUIRE(traj.status == RunStatus::Extinct);
        // near the end |Rm| >> r^{-2} for fixed r = 0.5
        const auto reps = kappa_report(traj, traj.states[traj.states.size() - 2].t, {0.3}, 1.0);
        REQUIRE_FALSE(reps[0].admissible);
        REQUIRE_FALSE(reps[0].kappa_flag);
    }
    SECTION("slab coverage is required") {
        RunParams p;
        p.t_end = 0.05;
        p.cadence = 0.01;
        const auto traj = run_flow(warped3_round(64, 1.0), p);
        REQUIRE_THROWS_AS(kappa_report(traj, 0.05, {1.0}, 1.0), SlabOutOfRange);
    }
}

TEST_CASE("distance-derivative bound", "[reduced]") {
    SECTION("static flat torus: zero derivative, zero bound") {
        FlowTrajectory traj;
        auto s = surface_torus(64, 2, 2.0);
        traj.states.push_back(s);
        s.t = 0.1;
        traj.states.push_back(s);
        const auto rep = distance_derivative_check(traj, 0, 32, 1e-9);
        REQUIRE(rep.pass);
        REQUIRE_THAT(rep.worst_margin, Catch::Matchers::WithinAbs(0.0, 1e-12));
    }
    SECTION("shrinking round S3 antipodal margin is about 0.25/r") {
        RunParams p;
        p.t_end = 0.1;
        p.cadence = 5e-3;
        const auto traj = run_flow(warped3_round(128, 1.0), p);
        const auto rep = distance_derivative_check(traj, 0, 128, 1e-9);
        REQUIRE(rep.pass);
        // margin = (8 sqrt(2/3) - 2 pi)/r, worst at the smallest r in the run
        const double r_end = std::sqrt(1.0 - 4.0 * 0.1);
        const double expect = (8.0 * std::sqrt(2.0 / 3.0) - 2.0 * M_PI) / r_end;
        REQUIRE_THAT(rep.worst_margin, Catch::Matchers::WithinAbs(expect, 0.05 * expect));
    }
}
