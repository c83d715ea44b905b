#pragma once

#include <algorithm>
#include <cmath>
#include <random>

#include "ricci/common.hpp"
#include "ricci/entropy.hpp"
#include "ricci/flow.hpp"
#include "ricci/interpolate.hpp"
#include "ricci/report.hpp"

// L-length along a backward Ricci-flow trajectory, L-geodesic boundary-value
// solves by shooting in s = sqrt(tau), the reduced distance l, the reduced
// volume and its monotonicity, and kappa-noncollapsing volume reports.
//
// Paths are meridional from the base point (a pole or the radial center),
// parametrized by the material coordinate x in [0,1] (profile coordinate
// normalized by the chart length). This labeling is material for static and
// homothetically shrinking backgrounds, which is where these quantities are
// evaluated.

namespace ricci {

// ---------------------------------------------------------------------------
// backward trajectory: tau = t0 - t lookups into a stored forward trajectory

class BackwardTrajectory {
  public:
    BackwardTrajectory(std::vector<FlowState> states, double t0) : t0_(t0) {
        if (states.empty()) throw TauOutOfRange("empty trajectory");
        n_ = states.front().n_nodes();
        for (const auto& s : states)
            if (s.n_nodes() != n_) throw GridMismatch("states share one grid size");
        // ascending tau order
        std::sort(states.begin(), states.end(),
                  [&](const FlowState& a, const FlowState& b) { return a.t > b.t; });
        tau_max_ = t0 - states.back().t;
        tau_min_ = t0 - states.front().t;
        states_ = std::move(states);
        taus_.resize(states_.size());
        for (std::size_t k = 0; k < states_.size(); ++k) taus_[k] = t0 - states_[k].t;
        if (states_.size() > 1) {
            const bool warped = states_.front().reduction == Reduction::Warped3;
            node_interp_.reserve(n_);
            Vec vals(states_.size());
            for (std::size_t i = 0; i < n_; ++i) {
                for (std::size_t k = 0; k < states_.size(); ++k)
                    vals[k] = warped ? states_[k].phi[i] : states_[k].u[i];
                node_interp_.emplace_back(taus_, vals);
            }
            if (warped) {
                Vec lens(states_.size());
                for (std::size_t k = 0; k < states_.size(); ++k)
                    lens[k] = states_[k].grid.back() - states_[k].grid.front();
                len_interp_ = Pchip(taus_, lens);
            }
        }
    }

    double tau_min() const { return tau_min_; }
    double tau_max() const { return tau_max_; }
    std::size_t n_nodes() const { return n_; }
    const FlowState& nearest_state(double tau) const {
        std::size_t best = 0;
        for (std::size_t k = 1; k < states_.size(); ++k)
            if (std::fabs(taus_[k] - tau) < std::fabs(taus_[best] - tau)) best = k;
        return states_[best];
    }

    // state interpolated to backward time tau (monotone cubic per node)
    FlowState state_at(double tau) const {
        if (tau < tau_min_ - 1e-12 || tau > tau_max_ + 1e-12)
            throw TauOutOfRange("tau outside the stored trajectory");
        tau = std::clamp(tau, tau_min_, tau_max_);
        if (states_.size() == 1) return states_.front();
        FlowState out = states_.front();
        out.t = t0_ - tau;
        const bool warped = out.reduction == Reduction::Warped3;
        for (std::size_t i = 0; i < n_; ++i) {
            if (warped)
                out.phi[i] = node_interp_[i](tau);
            else
                out.u[i] = node_interp_[i](tau);
        }
        if (warped) {
            out.grid = uniform_grid(n_, 0.0, len_interp_(tau));
            out.psi.assign(n_, 1.0);
        }
        return out;
    }

    double t_final() const { return t0_; }

  private:
    std::vector<FlowState> states_;
    Vec taus_;
    std::vector<Pchip> node_interp_;
    Pchip len_interp_;
    double t0_ = 0.0;
    double tau_min_ = 0.0, tau_max_ = 0.0;
    std::size_t n_ = 0;
};

// ---------------------------------------------------------------------------
// slices of background data on the material grid at one backward time

namespace detail_lg {

struct Slice {
    double tau = 0.0;
    double length = 0.0;      // chart extent
    Vec gxx;                  // metric coefficient of d/dx
    Vec R;                    // scalar curvature
    Vec dR_dtau;
    Vec ric_ratio;            // Ric(e_m, e_m) for the unit meridian direction
    Vec w;                    // measure density in x

    double at(const Vec& v, double x) const {
        const std::size_t n = v.size();
        const double pos = std::clamp(x, 0.0, 1.0) * double(n - 1);
        const std::size_t i = std::min(std::size_t(pos), n - 2);
        const double f = pos - double(i);
        return (1 - f) * v[i] + f * v[i + 1];
    }
    double d_dx(const Vec& v, double x) const {
        const std::size_t n = v.size();
        const double hx = 1.0 / double(n - 1);
        const double pos = std::clamp(x, 0.0, 1.0) * double(n - 1);
        std::size_t i = std::min(std::size_t(pos + 0.5), n - 1);
        if (i == 0) i = 1;
        if (i == n - 1) i = n - 2;
        return (v[i + 1] - v[i - 1]) / (2 * hx);
    }
};

inline double meridian_ricci_ratio(const FlowState& s, std::size_t i) {
    switch (s.reduction) {
        case Reduction::Surface:
            if (s.ambient_dim == 2 || s.base == SurfaceBase::RoundS2)
                return 0.5 * surface_scalar_at(s, i);
            return 0.0;  // flat windows only in dimension 3
        case Reduction::Warped3:
            // Ric(e_m, e_m) = 2 k_rad
            return 2.0 * warped3_sectionals(s, i).k_rad;
        default:
            throw UnsupportedReduction("no meridian Ricci for this reduction");
    }
}

inline Slice make_slice(const BackwardTrajectory& bt, double tau, double dtau_fd) {
    Slice sl;
    sl.tau = tau;
    const FlowState st = bt.state_at(tau);
    const std::size_t n = st.n_nodes();
    sl.length = st.periodic() ? st.length : (st.grid.back() - st.grid.front());
    sl.gxx.resize(n);
    sl.R.resize(n);
    sl.ric_ratio.resize(n);
    sl.w.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        sl.gxx[i] = g_rr(st, i) * sqr(sl.length);
        sl.R[i] = node_curvature(st, i).R;
        sl.ric_ratio[i] = meridian_ricci_ratio(st, i);
        sl.w[i] = measure_density(st, i) * sl.length;
    }
    // dR/dtau by differencing neighbouring interpolated states
    sl.dR_dtau.assign(n, 0.0);
    const double lo = std::max(bt.tau_min(), tau - dtau_fd);
    const double hi = std::min(bt.tau_max(), tau + dtau_fd);
    if (hi > lo + 1e-14) {
        const FlowState sp = bt.state_at(hi);
        const FlowState sm = bt.state_at(lo);
        for (std::size_t i = 0; i < n; ++i)
            sl.dR_dtau[i] =
                (node_curvature(sp, i).R - node_curvature(sm, i).R) / (hi - lo);
    }
    return sl;
}

}  // namespace detail_lg

// ---------------------------------------------------------------------------
// L-paths and their length

struct LPath {
    Vec s;          // sqrt(tau) nodes, ascending from 0
    Vec x;          // material positions
    Vec xp;         // dx/ds
    double tau_bar = 0.0;
    double L = 0.0;  // L-length accumulated by the solver
};

// shooting solver for meridional L-geodesics from x = 0
class LGeodesicSolver {
  public:
    LGeodesicSolver(const BackwardTrajectory& bt, double tau_bar, std::size_t steps = 512)
        : bt_(bt), tau_bar_(tau_bar), steps_(steps) {
        if (!(tau_bar > 0.0) || tau_bar > bt.tau_max() + 1e-12)
            throw TauOutOfRange("tau_bar outside the trajectory");
        const double sbar = std::sqrt(tau_bar);
        ds_ = sbar / double(steps_);
        // slices at the RK4 stage times (2*steps + 1 half-step positions)
        slices_.reserve(2 * steps_ + 1);
        const double dtau_fd = std::max(1e-4 * tau_bar, 1e-8);
        for (std::size_t j = 0; j <= 2 * steps_; ++j) {
            const double s = 0.5 * double(j) * ds_;
            slices_.push_back(detail_lg::make_slice(bt_, s * s, dtau_fd));
        }
    }

    double tau_bar() const { return tau_bar_; }
    const detail_lg::Slice& slice(std::size_t half_index) const { return slices_[half_index]; }

    // integrate the s-form Euler-Lagrange system from (x0, v); fills path
    LPath shoot(double x0, double v) const {
        LPath p;
        p.tau_bar = tau_bar_;
        p.s.resize(steps_ + 1);
        p.x.resize(steps_ + 1);
        p.xp.resize(steps_ + 1);
        double x = x0, xp = v;
        p.s[0] = 0.0;
        p.x[0] = x0;
        p.xp[0] = v;
        for (std::size_t j = 0; j < steps_; ++j) {
            auto rhs = [&](std::size_t half, double xx, double vv, double& dx, double& dv) {
                const auto& sl = slices_[half];
                const double s = 0.5 * double(half) * ds_;
                const double gxx = sl.at(sl.gxx, xx);
                const double dgxx = sl.d_dx(sl.gxx, xx);
                const double gamma = 0.5 * dgxx / gxx;
                const double ric = sl.at(sl.ric_ratio, xx);
                const double dR = sl.d_dx(sl.R, xx);
                dx = vv;
                dv = -gamma * vv * vv - 4.0 * s * ric * vv + 2.0 * s * s * dR / gxx;
            };
            double k1x, k1v, k2x, k2v, k3x, k3v, k4x, k4v;
            rhs(2 * j, x, xp, k1x, k1v);
            rhs(2 * j + 1, x + 0.5 * ds_ * k1x, xp + 0.5 * ds_ * k1v, k2x, k2v);
            rhs(2 * j + 1, x + 0.5 * ds_ * k2x, xp + 0.5 * ds_ * k2v, k3x, k3v);
            rhs(2 * j + 2, x + ds_ * k3x, xp + ds_ * k3v, k4x, k4v);
            x += ds_ / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x);
            xp += ds_ / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v);
            if (!std::isfinite(x) || std::fabs(x) > 3.0)
                throw ShootingDiverged("meridional shot left the chart");
            p.s[j + 1] = double(j + 1) * ds_;
            p.x[j + 1] = x;
            p.xp[j + 1] = xp;
        }
        p.L = length_of(p);
        return p;
    }

    // L-length of an arbitrary path on this solver's s-grid (s-form)
    double length_of(const LPath& p) const {
        Vec integrand(p.s.size());
        for (std::size_t j = 0; j < p.s.size(); ++j) {
            const auto& sl = slices_[2 * j];
            const double gxx = sl.at(sl.gxx, p.x[j]);
            const double R = sl.at(sl.R, p.x[j]);
            integrand[j] = 0.5 * gxx * sqr(p.xp[j]) + 2.0 * sqr(p.s[j]) * R;
        }
        return simpson(integrand, ds_);
    }

    // independent tau-form quadrature on a denser grid (the integrand is
    // resampled; the sqrt(tau) substitution removes the endpoint singularity)
    double length_tau_form(const LPath& p, std::size_t refine = 10) const {
        Pchip xi(p.s, p.x);
        const std::size_t m = p.s.size() * refine;
        const double h = p.s.back() / double(m);
        Vec integrand(m + 1);
        for (std::size_t j = 0; j <= m; ++j) {
            const double s = double(j) * h;
            const double x = xi(s);
            const double xp = xi.derivative(s);
            const detail_lg::Slice sl = detail_lg::make_slice(bt_, s * s, 1e-4 * tau_bar_);
            const double gxx = sl.at(sl.gxx, x);
            // sqrt(tau)(R + |dγ/dτ|²) dτ = (2 s² R + ½ gxx x'²) ds
            integrand[j] = 2.0 * s * s * sl.at(sl.R, x) + 0.5 * gxx * xp * xp;
        }
        return simpson(integrand, h);
    }

    // solve the BVP to x_target with secant iterations and a bracketing
    // fallback; v_hint warm-starts the shot
    LPath solve(double x_target, double v_hint = -1.0) const {
        const double sbar = std::sqrt(tau_bar_);
        double v0 = v_hint > 0.0 ? v_hint : x_target / std::max(sbar, 1e-12);
        if (x_target == 0.0) return shoot(0.0, 0.0);
        auto endpoint = [&](double v) { return shoot(0.0, v).x.back(); };
        double e0;
        try {
            e0 = endpoint(v0) - x_target;
        } catch (const ShootingDiverged&) {
            v0 = x_target / sbar;
            e0 = endpoint(v0) - x_target;
        }
        double v1 = v0 * (std::fabs(e0) > 1e-15 ? (x_target / (e0 + x_target)) : 1.0);
        if (v1 == v0) v1 = v0 * (1.0 + 1e-6) + 1e-12;
        double e1;
        try {
            e1 = endpoint(v1) - x_target;
        } catch (const ShootingDiverged&) {
            v1 = 0.5 * v0;
            e1 = endpoint(v1) - x_target;
        }
        for (int it = 0; it < 60; ++it) {
            if (std::fabs(e1) < 1e-12) break;
            const double denom = e1 - e0;
            double v2;
            if (std::fabs(denom) < 1e-300) {
                v2 = v1 * (1.0 + 1e-6);
            } else {
                v2 = v1 - e1 * (v1 - v0) / denom;
            }
            if (!std::isfinite(v2)) break;
            v0 = v1;
            e0 = e1;
            v1 = v2;
            try {
                e1 = endpoint(v1) - x_target;
            } catch (const ShootingDiverged&) {
                v1 = 0.5 * (v0 + v1);
                e1 = endpoint(v1) - x_target;
            }
        }
        if (std::fabs(e1) > 1e-9) {
            // bracket and bisect: endpoint is monotone in v for these
            // meridional problems
            double lo = 0.0, hi = std::max(v1, 1e-3);
            for (int k = 0; k < 60 && endpoint(hi) < x_target; ++k) hi *= 2.0;
            for (int k = 0; k < 200; ++k) {
                const double mid = 0.5 * (lo + hi);
                if (endpoint(mid) < x_target)
                    lo = mid;
                else
                    hi = mid;
            }
            v1 = 0.5 * (lo + hi);
            e1 = endpoint(v1) - x_target;
            if (std::fabs(e1) > 1e-7) throw ShootingDiverged("secant and bisection both failed");
        }
        return shoot(0.0, v1);
    }

  private:
    const BackwardTrajectory& bt_;
    double tau_bar_;
    std::size_t steps_;
    double ds_ = 0.0;
    std::vector<detail_lg::Slice> slices_;
};

inline double l_length(const LGeodesicSolver& solver, const LPath& p) {
    return solver.length_of(p);
}

inline double reduced_distance(const LPath& p) {
    return p.L / (2.0 * std::sqrt(p.tau_bar));
}

// ---------------------------------------------------------------------------
// reduced distance over the whole grid

struct LField {
    double tau_bar = 0.0;
    Vec x;        // material grid
    Vec L;        // L(q, tau_bar)
    Vec l;        // reduced distance
    Vec v_init;   // shooting parameters (warm-start chain)
    std::vector<bool> ok;
    std::size_t failures = 0;
};

inline LField reduced_distance_field(const LGeodesicSolver& solver, std::size_t n_targets) {
    LField f;
    f.tau_bar = solver.tau_bar();
    f.x = uniform_grid(n_targets, 0.0, 1.0);
    f.L.assign(n_targets, 0.0);
    f.l.assign(n_targets, 0.0);
    f.v_init.assign(n_targets, 0.0);
    f.ok.assign(n_targets, true);
    double warm = -1.0;
    for (std::size_t i = 0; i < n_targets; ++i) {
        try {
            const LPath p = solver.solve(f.x[i], warm);
            f.L[i] = p.L;
            f.l[i] = reduced_distance(p);
            f.v_init[i] = p.xp[0];
            warm = p.xp[0] * (i + 2.0) / (i + 1.0);
        } catch (const ShootingDiverged&) {
            f.ok[i] = false;
            ++f.failures;
        }
    }
    return f;
}

// ---------------------------------------------------------------------------
// identities of the L-distance

struct LReport {
    double tau_bar = 0.0;
    double L = 0.0;
    double l = 0.0;
    double K = 0.0;
    double grad_check = 0.0;      // | |grad L|^2 - (2 sqrt(tb) X)^2 | at the probe
    double residual_a = 0.0;      // |grad L|^2 identity
    double residual_b = 0.0;      // dL/d tau_bar identity
    double margin_77 = 0.0;       // n/sqrt(tb) - 2 sqrt(tb) R - K/tb - Lap L  (>= 0)
    double min_l = 0.0;
    bool min_l_bound_ok = true;   // min l <= n/2 + 5e-3
};

namespace detail_lg {

// K = int tau^{3/2} H(X) dtau along the path, in the s variable
inline double k_integral(const LGeodesicSolver& solver, const LPath& p) {
    const std::size_t m = p.s.size();
    Vec integrand(m);
    for (std::size_t j = 0; j < m; ++j) {
        const auto& sl = solver.slice(2 * j);
        const double s = p.s[j];
        const double x = p.x[j];
        const double xp = p.xp[j];
        const double gxx = sl.at(sl.gxx, x);
        const double dRdx = sl.d_dx(sl.R, x);
        const double ric = sl.at(sl.ric_ratio, x);
        // tau^{3/2} H dtau = [ -2 s^4 dR/dtau - 2 s^2 R - 2 s^3 dR/dx xp
        //                      + s^2 ric gxx xp^2 ] ds
        integrand[j] = -2.0 * std::pow(s, 4) * sl.at(sl.dR_dtau, x) -
                       2.0 * s * s * sl.at(sl.R, x) - 2.0 * std::pow(s, 3) * dRdx * xp +
                       s * s * ric * gxx * xp * xp;
    }
    return simpson(integrand, p.s.size() > 1 ? p.s[1] - p.s[0] : 0.0);
}

}  // namespace detail_lg

// identities at a probe grid index, from a field solve at tau_bar and two
// auxiliary solves at tau_bar (1 +- delta) for the time derivative
inline LReport identities_check(const BackwardTrajectory& bt, double tau_bar,
                                std::size_t probe_index, std::size_t n_targets = 0,
                                std::size_t steps = 512) {
    const std::size_t n = n_targets ? n_targets : bt.n_nodes();
    LGeodesicSolver solver(bt, tau_bar, steps);
    const LField field = reduced_distance_field(solver, n);
    LReport rep;
    rep.tau_bar = tau_bar;

    const double stb = std::sqrt(tau_bar);
    const std::size_t i = probe_index;
    if (i == 0 || i + 1 >= n || !field.ok[i])
        throw RangeError("probe index must be an interior solved node");

    const LPath geo = solver.solve(field.x[i], field.v_init[i]);
    rep.L = geo.L;
    rep.l = reduced_distance(geo);
    rep.K = detail_lg::k_integral(solver, geo);

    // background slice at tau_bar
    const detail_lg::Slice sl = detail_lg::make_slice(bt, tau_bar, 1e-4 * tau_bar);
    const double hx = 1.0 / double(n - 1);
    const double gxx = sl.at(sl.gxx, field.x[i]);
    const double R = sl.at(sl.R, field.x[i]);

    // |grad L|^2 by central differences of the field
    const double dL = (field.L[i + 1] - field.L[i - 1]) / (2 * hx);
    const double grad2 = dL * dL / gxx;

    // gradient identity |grad L| = 2 sqrt(tb) |X|
    const double x_speed2 = gxx * sqr(geo.xp.back() / (2.0 * stb));  // |X|^2, X = dx/dtau
    rep.grad_check = std::fabs(grad2 - 4.0 * tau_bar * x_speed2);

    rep.residual_a = std::fabs(grad2 - (-4.0 * tau_bar * R + 2.0 / stb * rep.L - 4.0 / stb * rep.K));

    // dL/d tau_bar by re-solving at perturbed tau_bar
    {
        const double delta = 1e-3 * tau_bar;
        LGeodesicSolver sp(bt, tau_bar + delta, steps);
        LGeodesicSolver sm(bt, tau_bar - delta, steps);
        const double Lp = sp.solve(field.x[i], field.v_init[i]).L;
        const double Lm = sm.solve(field.x[i], field.v_init[i]).L;
        const double dLdt = (Lp - Lm) / (2 * delta);
        rep.residual_b =
            std::fabs(dLdt - (2.0 * stb * R - rep.L / (2.0 * tau_bar) + rep.K / tau_bar));
    }

    // Lap L <= n/sqrt(tb) - 2 sqrt(tb) R - K/tb
    {
        const double wm = 0.5 * (sl.at(sl.w, field.x[i]) + sl.at(sl.w, field.x[i] - hx));
        const double wp = 0.5 * (sl.at(sl.w, field.x[i]) + sl.at(sl.w, field.x[i] + hx));
        const double gm = 0.5 * (gxx + sl.at(sl.gxx, field.x[i] - hx));
        const double gp = 0.5 * (gxx + sl.at(sl.gxx, field.x[i] + hx));
        const double flux_p = wp / gp * (field.L[i + 1] - field.L[i]) / hx;
        const double flux_m = wm / gm * (field.L[i] - field.L[i - 1]) / hx;
        const double lap = (flux_p - flux_m) / (hx * sl.at(sl.w, field.x[i]));
        const int nd = manifold_dim(bt.nearest_state(tau_bar));
        rep.margin_77 = nd / stb - 2.0 * stb * R - rep.K / tau_bar - lap;
    }

    double lmin = 1e300;
    for (std::size_t j = 0; j < n; ++j)
        if (field.ok[j]) lmin = std::min(lmin, field.l[j]);
    rep.min_l = lmin;
    rep.min_l_bound_ok = lmin <= 0.5 * manifold_dim(bt.nearest_state(tau_bar)) + 5e-3;
    return rep;
}

// ---------------------------------------------------------------------------
// reduced volume

struct ReducedVolumeResult {
    Vec tau;
    Vec v_tilde;
    Vec min_l;
    bool monotone_ok = true;   // non-increasing in tau within slack
    bool upper_bound_ok = true;  // <= (4 pi)^{n/2} (1 + 1e-3)
    bool valid = true;           // < 1% of the grid measure failed
};

inline ReducedVolumeResult reduced_volume(const BackwardTrajectory& bt, const Vec& tau_list,
                                          std::size_t steps = 512, double monotone_slack = 1e-4) {
    ReducedVolumeResult out;
    const std::size_t n = bt.n_nodes();
    for (double tau : tau_list) {
        LGeodesicSolver solver(bt, tau, steps);
        const LField field = reduced_distance_field(solver, n);
        const FlowState st = bt.state_at(tau);
        const int nd = manifold_dim(st);
        const auto d = discrete_geometry(st);
        Vec integrand(n, 0.0);
        double failed_measure = 0.0, total_measure = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double cell = d.quad[i] * d.w[i];
            total_measure += cell;
            if (!field.ok[i]) {
                failed_measure += cell;
                continue;
            }
            integrand[i] = std::pow(tau, -0.5 * nd) * std::exp(-field.l[i]);
        }
        if (failed_measure > 0.01 * total_measure) out.valid = false;
        out.tau.push_back(tau);
        out.v_tilde.push_back(d.integrate(integrand));
        double lmin = 1e300;
        for (std::size_t i = 0; i < n; ++i)
            if (field.ok[i]) lmin = std::min(lmin, field.l[i]);
        out.min_l.push_back(lmin);
        const double bound = std::pow(4.0 * M_PI, 0.5 * nd) * (1.0 + 1e-3);
        if (out.v_tilde.back() > bound) out.upper_bound_ok = false;
    }
    for (std::size_t k = 0; k + 1 < out.v_tilde.size(); ++k)
        if (out.tau[k] < out.tau[k + 1] && out.v_tilde[k + 1] > out.v_tilde[k] + monotone_slack)
            out.monotone_ok = false;
    return out;
}

// ---------------------------------------------------------------------------
// kappa-noncollapsing reports

struct CollapseReport {
    double r = 0.0;
    bool admissible = false;     // |Rm| <= r^{-2} on the ball and time slab
    double ratio = 0.0;          // r^{-n} Vol(B(x0, r))
    double kappa = 0.0;
    bool kappa_flag = false;     // ratio >= kappa (only when admissible)
    double max_rm_on_ball = 0.0;
};

// ball volume around the base pole (node 0) out to metric radius r
inline double ball_volume_from_pole(const FlowState& s, double r) {
    // metric distance grows along the profile coordinate
    const std::size_t n = s.n_nodes();
    const double h = s.h();
    double dist = 0.0;
    std::size_t last = 0;
    double frac = 0.0;
    for (std::size_t i = 0; i + 1 < n; ++i) {
        const double seg =
            0.5 * (std::sqrt(g_rr(s, i)) + std::sqrt(g_rr(s, i + 1))) * h;
        if (dist + seg >= r) {
            last = i;
            frac = (r - dist) / seg;
            break;
        }
        dist += seg;
        last = i + 1;
        frac = 0.0;
        if (i + 2 == n && dist < r) throw RangeError("ball radius exceeds the diameter");
    }
    // fine resampled quadrature of the measure density up to the cut
    const double coord_end = s.grid[last] + frac * h;
    const std::size_t fine = 2048;
    Vec base_x(n), base_w(n);
    for (std::size_t i = 0; i < n; ++i) {
        base_x[i] = s.grid[i];
        base_w[i] = measure_density(s, i);
    }
    Pchip wp(base_x, base_w);
    Vec vals(fine + 1);
    const double hf = coord_end / double(fine);
    for (std::size_t j = 0; j <= fine; ++j) vals[j] = wp(double(j) * hf);
    return simpson(vals, hf);
}

// static background: the slab is the same metric at every slice
inline std::vector<CollapseReport> kappa_report_static(const FlowState& s, const Vec& r_list,
                                                       double kappa) {
    std::vector<CollapseReport> out;
    for (double r : r_list) {
        CollapseReport rep;
        rep.r = r;
        rep.kappa = kappa;
        double max_rm = 0.0, dist = 0.0;
        const double h = s.h();
        for (std::size_t i = 0; i < s.n_nodes(); ++i) {
            if (i > 0) dist += 0.5 * (std::sqrt(g_rr(s, i - 1)) + std::sqrt(g_rr(s, i))) * h;
            if (dist > r) break;
            max_rm = std::max(max_rm, node_curvature(s, i).max_abs_sec);
        }
        rep.max_rm_on_ball = max_rm;
        rep.admissible = max_rm <= 1.0 / (r * r) + 1e-12;
        rep.ratio = ball_volume_from_pole(s, r) / std::pow(r, manifold_dim(s));
        rep.kappa_flag = rep.admissible && rep.ratio >= kappa;
        out.push_back(rep);
    }
    return out;
}

inline std::vector<CollapseReport> kappa_report(const FlowTrajectory& traj, double t0,
                                                const Vec& r_list, double kappa) {
    // locate the t0 state
    const FlowState* at = nullptr;
    for (const auto& st : traj.states)
        if (std::fabs(st.t - t0) <= 1e-9 * std::max(1.0, std::fabs(t0)) + 1e-12) at = &st;
    if (!at) throw SlabOutOfRange("t0 is not a stored output time");
    std::vector<CollapseReport> out;
    for (double r : r_list) {
        CollapseReport rep;
        rep.r = r;
        rep.kappa = kappa;
        if (t0 - r * r < traj.states.front().t - 1e-12)
            throw SlabOutOfRange("trajectory does not cover [t0 - r^2, t0]");
        // curvature admissibility over the parabolic slab
        double max_rm = 0.0;
        for (const auto& st : traj.states) {
            if (st.t < t0 - r * r - 1e-12 || st.t > t0 + 1e-12) continue;
            // restrict to the ball at time t0 by meridian distance
            double dist = 0.0;
            const double h = at->h();
            for (std::size_t i = 0; i < st.n_nodes(); ++i) {
                if (i > 0)
                    dist += 0.5 *
                            (std::sqrt(g_rr(*at, i - 1)) + std::sqrt(g_rr(*at, i))) * h;
                if (dist > r) break;
                max_rm = std::max(max_rm, node_curvature(st, i).max_abs_sec);
            }
        }
        rep.max_rm_on_ball = max_rm;
        rep.admissible = max_rm <= 1.0 / (r * r) + 1e-12;
        const int nd = manifold_dim(*at);
        rep.ratio = ball_volume_from_pole(*at, r) / std::pow(r, nd);
        rep.kappa_flag = rep.admissible && rep.ratio >= kappa;
        out.push_back(rep);
    }
    return out;
}

// ---------------------------------------------------------------------------
// distance-derivative bound (forward difference quotients)

inline CheckReport distance_derivative_check(const FlowTrajectory& traj, std::size_t ia,
                                             std::size_t ib, double tolerance = 1e-9) {
    CheckReport rep;
    rep.name = "distance-derivative";
    rep.tolerance = tolerance;
    const auto& states = traj.states;
    for (std::size_t k = 0; k + 1 < states.size(); ++k) {
        const double d0 = distance_between(states[k], ia, ib);
        const double d1 = distance_between(states[k + 1], ia, ib);
        const double quotient = (d1 - d0) / (states[k + 1].t - states[k].t);
        // measured Ricci upper bound (n-1) kappa
        const int nd = manifold_dim(states[k]);
        double ric_max = 0.0;
        for (std::size_t i = 0; i < states[k].n_nodes(); ++i) {
            if (states[k].reduction == Reduction::Warped3) {
                const auto kk = warped3_sectionals(states[k], i);
                ric_max = std::max(ric_max, std::max(2.0 * kk.k_rad, kk.k_rad + kk.k_tan));
            } else {
                ric_max = std::max(ric_max, 0.5 * node_curvature(states[k], i).R);
            }
        }
        const double kappa = std::max(ric_max / double(nd - 1), 0.0);
        const double bound = -4.0 * (nd - 1) * std::sqrt(2.0 * kappa / 3.0);
        rep.record(quotient - bound, states[k].t, k);
    }
    return rep.finalize();
}

}  // namespace ricci
