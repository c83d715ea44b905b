#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "ricci/flow.hpp"

using namespace ricci;

namespace {

FlowState evolve_fixed_dt(FlowState s, double dt, double t_end, bool normalized = false,
                          StepControl ctl = StepControl{}) {
    while (s.t < t_end - 1e-14) {
        const double step_dt = std::min(dt, t_end - s.t);
        s = step(s, step_dt, ctl, normalized);
    }
    return s;
}

}  // namespace

TEST_CASE("surface flow on the round sphere follows R(t) = 2/(1-2t)", "[flow]") {
    auto s = surface_round_s2(64, 1.0);
    s = evolve_fixed_dt(s, 1e-4, 0.1);
    const double R = surface_scalar_at(s, 32);
    REQUIRE_THAT(R, Catch::Matchers::WithinAbs(2.5, 1e-3));
}

TEST_CASE("surface reduction curvature matches tensor-core pointwise", "[flow]") {
    auto s = surface_round_s2(64, 1.0, [](double th) { return 0.2 * std::cos(2 * th); });
    for (std::size_t i : {5ul, 20ul, 40ul, 60ul}) {
        const auto cb = curvature(chart_sample(s, i));
        REQUIRE_THAT(surface_scalar_at(s, i), Catch::Matchers::WithinAbs(cb.scalar, 5e-3));
    }
}

TEST_CASE("warped-product chart matches tensor-core on the round 3-sphere", "[flow]") {
    const double r = 1.3;
    auto s = warped3_round(128, r);
    for (std::size_t i : {20ul, 64ul, 100ul}) {
        const auto cb = curvature(chart_sample(s, i));
        REQUIRE_THAT(cb.scalar, Catch::Matchers::WithinAbs(6.0 / (r * r), 2e-3));
        const auto nc = node_curvature(s, i);
        REQUIRE_THAT(nc.R, Catch::Matchers::WithinAbs(cb.scalar, 2e-3));
        REQUIRE_THAT(nc.max_abs_sec, Catch::Matchers::WithinAbs(1.0 / (r * r), 1e-3));
    }
}

TEST_CASE("curvature ODE keeps symmetric data symmetric, RK4 accuracy", "[flow]") {
    auto s = curv_ode_state(1.0, 1.0, 1.0);
    const auto out = step(s, 1e-3);
    REQUIRE(out.alpha[0] == out.alpha[1]);
    REQUIRE(out.alpha[1] == out.alpha[2]);
    // exact solution of a' = 2 a^2 from 1 is 1/(1 - 2t)
    const double exact = 1.0 / (1.0 - 2e-3);
    REQUIRE_THAT(out.alpha[0], Catch::Matchers::WithinAbs(exact, 1e-11));
    REQUIRE_THAT(out.alpha[0], Catch::Matchers::WithinAbs(1.002002, 5e-6));
}

TEST_CASE("homogeneous flat state is a fixed point", "[flow]") {
    auto s = homogeneous_state(HomogeneousState::flat());
    const auto out = step(s, 1e-2);
    REQUIRE(out.hom.A == 1.0);
    REQUIRE(out.hom.B == 1.0);
    REQUIRE(out.hom.C == 1.0);
}

TEST_CASE("nil flow follows the (1+3t)^{1/3} law", "[flow]") {
    auto s = homogeneous_state(HomogeneousState::nil());
    s = evolve_fixed_dt(s, 1e-4, 1.0);
    REQUIRE_THAT(s.hom.A, Catch::Matchers::WithinAbs(std::pow(4.0, 1.0 / 3.0), 1e-8));
    REQUIRE_THAT(s.hom.B, Catch::Matchers::WithinAbs(std::pow(4.0, 1.0 / 3.0), 1e-8));
    REQUIRE_THAT(s.hom.C, Catch::Matchers::WithinAbs(std::pow(4.0, -1.0 / 3.0), 1e-8));
}

TEST_CASE("convergence order on the shrinking round sphere", "[flow]") {
    // spatially homogeneous data leaves pure time error; RK4 should gain >= 8x
    auto err = [](std::size_t n, double dt) {
        StepControl ctl;
        ctl.cfl = 0.5;  // still under the RK4 diffusion bound, allows the coarse dt
        auto s = evolve_fixed_dt(surface_round_s2(n, 1.0), dt, 0.2, false, ctl);
        return std::fabs(surface_scalar_at(s, n / 2) - 2.0 / (1.0 - 0.4));
    };
    const double e1 = err(32, 1e-3);
    const double e2 = err(64, 5e-4);
    REQUIRE(e1 / e2 >= 8.0);
}

TEST_CASE("sphere extinction detected near T = 1/4 (reduced-size run)", "[flow]") {
    RunParams p;
    p.ctl.ceiling = 1e4;
    p.t_end = 0.3;
    p.cadence = 0.01;
    const auto traj = run_flow(warped3_round(128, 1.0), p);
    REQUIRE(traj.status == RunStatus::Extinct);
    REQUIRE(traj.extinction_flag);
    REQUIRE(traj.extinction_time > 0.2475);
    REQUIRE(traj.extinction_time < 0.2525);
}

TEST_CASE("volume law and Gauss-Bonnet on an unnormalized surface run", "[flow]") {
    RunParams p;
    p.t_end = 0.1;
    p.cadence = 0.005;
    auto s0 = surface_round_s2(128, 1.0, [](double th) { return 0.1 * std::cos(2 * th); });
    const auto traj = run_flow(s0, p);
    REQUIRE(traj.status == RunStatus::Completed);
    for (std::size_t k = 1; k + 1 < traj.states.size(); ++k) {
        const double dvdt = (traj.diag[k + 1].volume - traj.diag[k - 1].volume) /
                            (traj.states[k + 1].t - traj.states[k - 1].t);
        const auto& s = traj.states[k];
        Vec rw(s.n_nodes());
        for (std::size_t i = 0; i < rw.size(); ++i)
            rw[i] = surface_scalar_at(s, i) * measure_density(s, i);
        const double rint = simpson(rw, s.h());
        REQUIRE_THAT(dvdt, Catch::Matchers::WithinAbs(-rint, 0.02 * std::fabs(rint)));
        REQUIRE_THAT(rint, Catch::Matchers::WithinAbs(8.0 * M_PI, 0.005 * 8.0 * M_PI));
    }
}

TEST_CASE("normalized flow: round sphere is a fixed point, volume is pinned", "[flow]") {
    auto s = surface_round_s2(64, 1.0);
    const double v0 = total_volume(s);
    const double r0 = surface_scalar_at(s, 30);
    for (int k = 0; k < 200; ++k) s = step_normalized(s, 4e-4);
    REQUIRE_THAT(surface_scalar_at(s, 30), Catch::Matchers::WithinAbs(r0, 1e-10));
    REQUIRE_THAT(total_volume(s), Catch::Matchers::WithinAbs(v0, 1e-9 * v0));
}

TEST_CASE("normalized flow rounds out a perturbed sphere", "[flow]") {
    auto osc = [](const FlowState& s) {
        double rmin = 1e300, rmax = -1e300;
        for (std::size_t i = 0; i < s.n_nodes(); ++i) {
            const double R = surface_scalar_at(s, i);
            rmin = std::min(rmin, R);
            rmax = std::max(rmax, R);
        }
        return rmax - rmin;
    };
    for (std::size_t n : {48ul, 96ul}) {
        auto s = surface_round_s2(n, 1.0, [](double th) { return 0.3 * std::cos(2 * th); });
        const double before = osc(s);
        RunParams p;
        p.t_end = 5.0;
        p.normalized = true;
        p.cadence = 1.0;
        p.ctl.dt_max = 1e-2;
        const auto traj = run_flow(s, p);
        REQUIRE(traj.status == RunStatus::Completed);
        const double after = osc(traj.states.back());
        REQUIRE(before / after >= 100.0);
        REQUIRE_THAT(traj.diag.back().volume,
                     Catch::Matchers::WithinAbs(traj.diag.front().volume,
                                                1e-6 * traj.diag.front().volume));
    }
}

TEST_CASE("curvature ODE cones are preserved", "[flow]") {
    auto s = curv_ode_state(0.0, 1.0, 1.0);
    RunParams p;
    p.t_end = 10.0;
    p.ctl.dt_max = 1e-3;
    p.ctl.ceiling = 1e5;
    p.cadence = 0.05;
    const auto traj = run_flow(s, p);
    for (const auto& st : traj.states)
        for (double a : st.alpha) REQUIRE(a >= -1e-12);
}

TEST_CASE("parabolic rescaling", "[flow]") {
    SECTION("shrinking round surface, rescaled to R = 1") {
        RunParams p;
        p.t_end = 0.375;  // R(t) = 2/(1-2t) = 8 at t = 0.375
        p.cadence = 0.075;
        const auto traj = run_flow(surface_round_s2(64, 1.0), p);
        REQUIRE(traj.status == RunStatus::Completed);
        const auto rescaled = parabolic_rescale(traj, 32, traj.states.back().t);
        for (std::size_t i = 0; i < rescaled.n_nodes(); ++i)
            REQUIRE_THAT(surface_scalar_at(rescaled, i), Catch::Matchers::WithinAbs(1.0, 1e-6));
    }
    SECTION("flat state is rejected") {
        RunParams p;
        p.t_end = 0.01;
        p.cadence = 0.01;
        const auto traj = run_flow(surface_torus(64, 2, 2 * M_PI), p);
        REQUIRE_THROWS_AS(parabolic_rescale(traj, 3, traj.states.back().t), NotMaximal);
    }
    SECTION("evolve-then-rescale matches rescale-then-evolve on the round sphere") {
        const double lambda = 2.0, t1 = 0.1;
        auto a = surface_round_s2(64, 1.0);
        for (auto& x : a.u) x += 0.5 * std::log(lambda);
        a = evolve_fixed_dt(a, 1e-4, lambda * t1);
        auto b = evolve_fixed_dt(surface_round_s2(64, 1.0), 1e-4, t1);
        for (auto& x : b.u) x += 0.5 * std::log(lambda);
        for (std::size_t i = 0; i < a.u.size(); ++i)
            REQUIRE_THAT(a.u[i], Catch::Matchers::WithinAbs(b.u[i], 1e-6));
    }
}

TEST_CASE("neck detection", "[flow]") {
    SECTION("exact cylinder") {
        const auto s = warped3_cylinder(512, 1.0, 20.0);
        const auto rep = detect_neck(s, 0.2);
        REQUIRE(rep.found);
        REQUIRE(rep.length_in_rescaled_units >= 2.0 / 0.2);
        REQUIRE(rep.rescaled_radius_error < 1e-6);
        const double mid = std::fabs(s.grid[rep.center_index]);
        REQUIRE(mid < 6.0);  // interior, away from the ends
    }
    SECTION("round 3-sphere has no neck") {
        const auto s = warped3_round(512, 1.0);
        const auto rep = detect_neck(s, 0.2);
        REQUIRE_FALSE(rep.found);
    }
    SECTION("bad epsilon and unsupported reductions are rejected") {
        REQUIRE_THROWS_AS(detect_neck(warped3_round(64, 1.0), 0.7), RangeError);
        REQUIRE_THROWS_AS(detect_neck(surface_round_s2(64, 1.0), 0.2), UnsupportedReduction);
    }
}

TEST_CASE("meridian distances", "[flow]") {
    SECTION("round S2 pole to pole") {
        const auto s = surface_round_s2(256, 1.0);
        REQUIRE_THAT(distance_between(s, 0, 256), Catch::Matchers::WithinAbs(M_PI, 1e-6));
    }
    SECTION("round S3 antipodal") {
        const double r = 1.7;
        const auto s = warped3_round(128, r);
        REQUIRE_THAT(distance_between(s, 0, 128), Catch::Matchers::WithinAbs(M_PI * r, 1e-9));
    }
    SECTION("flat torus opposite corners") {
        const double L = 2.0;
        for (int d : {2, 3}) {
            ChartPoint a, b;
            a.dim = b.dim = d;
            for (int i = 0; i < d; ++i) b.x[i] = L / 2;
            REQUIRE_THAT(torus_distance(d, L, a, b),
                         Catch::Matchers::WithinAbs(L / 2 * std::sqrt(double(d)), 1e-14));
        }
    }
    SECTION("unsupported reduction") {
        REQUIRE_THROWS_AS(distance_between(curv_ode_state(1, 1, 1), 0, 1), UnsupportedReduction);
    }
}

TEST_CASE("step rejects dt above the stability limit", "[flow]") {
    const auto s = surface_round_s2(64, 1.0);
    REQUIRE_THROWS_AS(step(s, 1.0), CflViolation);
}

TEST_CASE("cigar run: curvature maximum stays near 4 (short run)", "[flow]") {
    auto u0 = [](double rho) { return -0.5 * std::log(1.0 + rho * rho); };
    auto s = surface_flat_radial(192, 2, 10.0, u0, EdgePolicy::CigarExact);
    RunParams p;
    p.t_end = 0.25;
    p.cadence = 0.05;
    const auto traj = run_flow(s, p);
    REQUIRE(traj.status == RunStatus::Completed);
    for (const auto& d : traj.diag)
        REQUIRE_THAT(d.r_max, Catch::Matchers::WithinAbs(4.0, 0.02 * 4.0));
}
