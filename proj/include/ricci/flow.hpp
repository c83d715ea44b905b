#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "ricci/common.hpp"
#include "ricci/geometries.hpp"
#include "ricci/interpolate.hpp"
#include "ricci/quadrature.hpp"
#include "ricci/tensor.hpp"

// Time integration of Ricci flow on symmetry-reduced state spaces.
//
// Reductions:
//   Surface      g = e^{2u} * base, u = u(profile coordinate); bases are the
//                round S2 (polar angle), the flat radial chart (disk/window,
//                dimension 2 or 3), and the flat torus (periodic x).
//   Warped3      g = psi^2 ds^2 + phi^2 g_{S^2}; re-meshed to arclength
//                (psi == 1) after every accepted step.
//   Homogeneous  diagonal left-invariant 3-metrics in a Milnor frame.
//   CurvOde      Hamilton's curvature-eigenvalue ODE, Laplacian dropped.

namespace ricci {

enum class Reduction { Surface, Warped3, Homogeneous, CurvOde };
enum class SurfaceBase { RoundS2, FlatRadial, FlatTorus };
enum class EdgePolicy { None, CigarExact };

struct FlowState {
    double t = 0.0;
    Reduction reduction = Reduction::Surface;

    // Surface
    SurfaceBase base = SurfaceBase::RoundS2;
    int ambient_dim = 2;   // FlatRadial window dimension, FlatTorus product dim
    double length = M_PI;  // chart extent: pi (S2), rho_max (radial), side L (torus)
    Vec grid;
    Vec u;
    EdgePolicy edge = EdgePolicy::None;

    // Warped3
    Vec phi, psi;
    bool closed = true;  // false: cylinder test state with free ends

    // Homogeneous / CurvOde
    HomogeneousState hom;
    std::array<double, 3> alpha{};

    std::size_t n_nodes() const { return grid.size(); }
    double h() const { return grid.size() > 1 ? grid[1] - grid[0] : 0.0; }
    bool periodic() const {
        return reduction == Reduction::Surface && base == SurfaceBase::FlatTorus;
    }
};

// ---------------------------------------------------------------------------
// initial data

inline Vec uniform_grid(std::size_t n_nodes, double a, double b) {
    Vec g(n_nodes);
    for (std::size_t i = 0; i < n_nodes; ++i)
        g[i] = a + (b - a) * double(i) / double(n_nodes - 1);
    return g;
}

inline FlowState surface_round_s2(std::size_t n, double r0,
                                  const std::function<double(double)>& u_pert = nullptr) {
    FlowState s;
    s.reduction = Reduction::Surface;
    s.base = SurfaceBase::RoundS2;
    s.length = M_PI;
    s.grid = uniform_grid(n + 1, 0.0, M_PI);
    s.u.assign(n + 1, std::log(r0));
    if (u_pert)
        for (std::size_t i = 0; i < s.u.size(); ++i) s.u[i] += u_pert(s.grid[i]);
    return s;
}

inline FlowState surface_flat_radial(std::size_t n, int dim, double rho_max,
                                     const std::function<double(double)>& u0 = nullptr,
                                     EdgePolicy edge = EdgePolicy::None) {
    FlowState s;
    s.reduction = Reduction::Surface;
    s.base = SurfaceBase::FlatRadial;
    s.ambient_dim = dim;
    s.length = rho_max;
    s.grid = uniform_grid(n + 1, 0.0, rho_max);
    s.u.assign(n + 1, 0.0);
    s.edge = edge;
    if (u0)
        for (std::size_t i = 0; i < s.u.size(); ++i) s.u[i] = u0(s.grid[i]);
    return s;
}

inline FlowState surface_torus(std::size_t n, int dim, double side,
                               const std::function<double(double)>& u0 = nullptr) {
    FlowState s;
    s.reduction = Reduction::Surface;
    s.base = SurfaceBase::FlatTorus;
    s.ambient_dim = dim;
    s.length = side;
    s.grid.resize(n);
    for (std::size_t i = 0; i < n; ++i) s.grid[i] = side * double(i) / double(n);
    s.u.assign(n, 0.0);
    if (u0)
        for (std::size_t i = 0; i < n; ++i) s.u[i] = u0(s.grid[i]);
    return s;
}

inline FlowState warped3_round(std::size_t n, double r0) {
    FlowState s;
    s.reduction = Reduction::Warped3;
    s.grid = uniform_grid(n + 1, 0.0, M_PI * r0);
    s.phi.resize(n + 1);
    s.psi.assign(n + 1, 1.0);
    for (std::size_t i = 0; i < s.phi.size(); ++i) s.phi[i] = r0 * std::sin(s.grid[i] / r0);
    s.phi.front() = s.phi.back() = 0.0;
    return s;
}

// corseted sphere: phi(s) = sin(s) (1 - a sin^2 s); |phi'| = 1 at the poles
inline FlowState warped3_dumbbell(std::size_t n, double a) {
    FlowState s;
    s.reduction = Reduction::Warped3;
    s.grid = uniform_grid(n + 1, 0.0, M_PI);
    s.phi.resize(n + 1);
    s.psi.assign(n + 1, 1.0);
    for (std::size_t i = 0; i < s.phi.size(); ++i) {
        const double x = s.grid[i];
        s.phi[i] = std::sin(x) * (1.0 - a * sqr(std::sin(x)));
    }
    s.phi.front() = s.phi.back() = 0.0;
    return s;
}

inline FlowState warped3_cylinder(std::size_t n, double radius, double half_length) {
    FlowState s;
    s.reduction = Reduction::Warped3;
    s.closed = false;
    s.grid = uniform_grid(n + 1, -half_length, half_length);
    s.phi.assign(n + 1, radius);
    s.psi.assign(n + 1, 1.0);
    return s;
}

inline FlowState homogeneous_state(const HomogeneousState& hs) {
    FlowState s;
    s.reduction = Reduction::Homogeneous;
    s.hom = hs;
    return s;
}

inline FlowState curv_ode_state(double a1, double a2, double a3) {
    FlowState s;
    s.reduction = Reduction::CurvOde;
    s.alpha = {a1, a2, a3};
    return s;
}

// ---------------------------------------------------------------------------
// profile derivatives with parity ghosts

namespace fd {

// derivative of a node profile; parity: +1 even, -1 odd across both ends
inline double d1(const Vec& f, std::size_t i, double h, int parity, bool periodic) {
    const std::size_t n = f.size();
    if (periodic) {
        const double fp = f[(i + 1) % n], fm = f[(i + n - 1) % n];
        return (fp - fm) / (2 * h);
    }
    if (i == 0) return parity > 0 ? 0.0 : (f[1] - parity * f[1]) / (2 * h);
    if (i == n - 1) return parity > 0 ? 0.0 : (parity * f[n - 2] - f[n - 2]) / (2 * h);
    return (f[i + 1] - f[i - 1]) / (2 * h);
}

inline double d2(const Vec& f, std::size_t i, double h, int parity, bool periodic) {
    const std::size_t n = f.size();
    if (periodic) {
        const double fp = f[(i + 1) % n], fm = f[(i + n - 1) % n];
        return (fp - 2 * f[i] + fm) / (h * h);
    }
    if (i == 0) return (parity * f[1] - 2 * f[0] + f[1]) / (h * h);
    if (i == n - 1) return (f[n - 2] - 2 * f[n - 1] + parity * f[n - 2]) / (h * h);
    return (f[i + 1] - 2 * f[i] + f[i - 1]) / (h * h);
}

// even-extension extrapolation to a boundary node from the interior
inline double extrapolate_even(double f1, double f2) { return (4.0 * f1 - f2) / 3.0; }

// fourth-order centered first derivative of an odd-at-both-ends profile
// (phi on a closed warped product vanishes at the poles). The high order
// matters because 1 - phi_s^2 cancels near the poles.
inline double d1_odd4(const Vec& f, std::size_t i, double h) {
    const std::size_t n = f.size();
    auto at = [&](long j) -> double {
        if (j < 0) return -f[std::size_t(-j)];
        if (j >= long(n)) return -f[2 * n - 2 - std::size_t(j)];
        return f[std::size_t(j)];
    };
    const long i_ = long(i);
    return (-at(i_ + 2) + 8 * at(i_ + 1) - 8 * at(i_ - 1) + at(i_ - 2)) / (12.0 * h);
}

}  // namespace fd

// ---------------------------------------------------------------------------
// pointwise curvature from the reduction closed forms

struct NodeCurvature {
    double R = 0.0;
    double max_abs_sec = 0.0;
    double min_sec = 0.0;
};

inline double surface_scalar_at(const FlowState& s, std::size_t i) {
    const double h = s.h();
    switch (s.base) {
        case SurfaceBase::RoundS2: {
            const double lb_u = [&] {
                if (i == 0 || i + 1 == s.n_nodes()) return 2.0 * fd::d2(s.u, i, h, +1, false);
                return fd::d2(s.u, i, h, +1, false) +
                       fd::d1(s.u, i, h, +1, false) / std::tan(s.grid[i]);
            }();
            return std::exp(-2.0 * s.u[i]) * (2.0 - 2.0 * lb_u);
        }
        case SurfaceBase::FlatRadial: {
            const int n = s.ambient_dim;
            const double du = fd::d1(s.u, i, h, +1, false);
            const double lap0 = [&] {
                if (i == 0) return double(n) * fd::d2(s.u, i, h, +1, false);
                return fd::d2(s.u, i, h, +1, false) + (n - 1) * du / s.grid[i];
            }();
            // g = e^{2u} delta: R = e^{-2u} (-2(n-1) Lap0 u - (n-1)(n-2) |grad0 u|^2)
            return std::exp(-2.0 * s.u[i]) *
                   (-2.0 * (n - 1) * lap0 - double((n - 1) * (n - 2)) * du * du);
        }
        case SurfaceBase::FlatTorus: {
            const double lap0 = fd::d2(s.u, i, h, +1, true);
            return -2.0 * std::exp(-2.0 * s.u[i]) * lap0;
        }
    }
    return 0.0;
}

// both sectional curvatures of a warped-product state at a node
struct WarpedSectionals {
    double k_rad = 0.0;  // planes containing the meridian direction
    double k_tan = 0.0;  // spherical plane
};

inline WarpedSectionals warped3_sectionals(const FlowState& s, std::size_t i) {
    const double h = s.h();
    const std::size_t n = s.n_nodes();
    auto k_pair = [&](std::size_t j) {
        const double dphi = s.closed ? fd::d1_odd4(s.phi, j, h)
                                     : (s.phi[j + 1] - s.phi[j - 1]) / (2 * h);
        const double ddphi = (s.phi[j + 1] - 2 * s.phi[j] + s.phi[j - 1]) / (h * h);
        WarpedSectionals k;
        k.k_rad = -ddphi / s.phi[j];
        k.k_tan = (1.0 - dphi * dphi) / sqr(s.phi[j]);
        return k;
    };
    if (s.closed && (i == 0 || i + 1 == n)) {
        // parity-respecting extrapolation from the two nearest interior nodes
        const std::size_t j1 = (i == 0) ? 1 : n - 2;
        const std::size_t j2 = (i == 0) ? 2 : n - 3;
        const auto a = k_pair(j1), b = k_pair(j2);
        return {fd::extrapolate_even(a.k_rad, b.k_rad), fd::extrapolate_even(a.k_tan, b.k_tan)};
    }
    if (!s.closed && (i == 0 || i + 1 == n)) return k_pair(i == 0 ? 1 : n - 2);
    return k_pair(i);
}

inline NodeCurvature warped3_curvature_at(const FlowState& s, std::size_t i) {
    NodeCurvature out;
    const auto k = warped3_sectionals(s, i);
    out.R = 4.0 * k.k_rad + 2.0 * k.k_tan;
    out.max_abs_sec = std::max(std::fabs(k.k_rad), std::fabs(k.k_tan));
    out.min_sec = std::min(k.k_rad, k.k_tan);
    return out;
}

inline NodeCurvature node_curvature(const FlowState& s, std::size_t i) {
    NodeCurvature out;
    switch (s.reduction) {
        case Reduction::Surface: {
            out.R = surface_scalar_at(s, i);
            out.max_abs_sec = 0.5 * std::fabs(out.R);
            out.min_sec = 0.5 * out.R;
            break;
        }
        case Reduction::Warped3:
            out = warped3_curvature_at(s, i);
            break;
        case Reduction::Homogeneous: {
            const auto hr = homogeneous_ricci(s.hom);
            const auto& r = hr.ricci_diag;
            const double k12 = 0.5 * (r[0] + r[1] - r[2]);
            const double k13 = 0.5 * (r[0] + r[2] - r[1]);
            const double k23 = 0.5 * (r[1] + r[2] - r[0]);
            out.R = hr.scalar;
            out.max_abs_sec = std::max({std::fabs(k12), std::fabs(k13), std::fabs(k23)});
            out.min_sec = std::min({k12, k13, k23});
            break;
        }
        case Reduction::CurvOde: {
            out.R = s.alpha[0] + s.alpha[1] + s.alpha[2];
            double mx = 0.0, mn = s.alpha[0] / 2;
            for (double a : s.alpha) {
                mx = std::max(mx, std::fabs(a) / 2);
                mn = std::min(mn, a / 2);
            }
            out.max_abs_sec = mx;
            out.min_sec = mn;
            break;
        }
    }
    return out;
}

// Chart sample at a grid node for the tensor-core consumers. Pole and axis
// nodes are out of chart; callers extrapolate.
inline MetricSample chart_sample(const FlowState& s, std::size_t i) {
    const double h = s.h();
    Mat3 g{};
    Arr3 dg{};
    Arr4 d2g{};
    switch (s.reduction) {
        case Reduction::Surface: {
            const bool per = s.periodic();
            const double uu = s.u[i];
            const double du = fd::d1(s.u, i, h, +1, per);
            const double ddu = fd::d2(s.u, i, h, +1, per);
            const double e2u = std::exp(2.0 * uu);
            if (s.base == SurfaceBase::RoundS2) {
                const double th = s.grid[i];
                if (std::sin(th) < 1e-9) throw OutOfChart("pole node");
                const double s2 = sqr(std::sin(th));
                g[0][0] = e2u;
                g[1][1] = e2u * s2;
                dg[0][0][0] = 2 * du * e2u;
                dg[0][1][1] = e2u * (2 * du * s2 + std::sin(2 * th));
                d2g[0][0][0][0] = e2u * (2 * ddu + 4 * du * du);
                d2g[0][0][1][1] =
                    e2u * ((2 * ddu + 4 * du * du) * s2 + 4 * du * std::sin(2 * th) +
                           2 * std::cos(2 * th));
                return MetricSample(2, g, dg, d2g);
            }
            if (s.base == SurfaceBase::FlatTorus) {
                g[0][0] = g[1][1] = e2u;
                dg[0][0][0] = dg[0][1][1] = 2 * du * e2u;
                d2g[0][0][0][0] = d2g[0][0][1][1] = e2u * (2 * ddu + 4 * du * du);
                return MetricSample(2, g, dg, d2g);
            }
            // FlatRadial in polar coordinates (rho, angle[, angle2])
            const double rho = s.grid[i];
            if (rho < 1e-9) throw OutOfChart("radial axis node");
            const int d = s.ambient_dim;
            const double e = e2u;
            if (d == 2) {
                g[0][0] = e;
                g[1][1] = e * rho * rho;
                dg[0][0][0] = 2 * du * e;
                dg[0][1][1] = e * (2 * du * rho * rho + 2 * rho);
                d2g[0][0][0][0] = e * (2 * ddu + 4 * du * du);
                d2g[0][0][1][1] =
                    e * ((2 * ddu + 4 * du * du) * rho * rho + 8 * du * rho + 2);
                return MetricSample(2, g, dg, d2g);
            }
            // d == 3 window at theta = pi/2 (flat u == 0 is the only flowed case)
            g[0][0] = e;
            g[1][1] = e * rho * rho;
            g[2][2] = e * rho * rho;
            dg[0][0][0] = 2 * du * e;
            dg[0][1][1] = dg[0][2][2] = e * (2 * du * rho * rho + 2 * rho);
            d2g[0][0][0][0] = e * (2 * ddu + 4 * du * du);
            d2g[0][0][1][1] = d2g[0][0][2][2] =
                e * ((2 * ddu + 4 * du * du) * rho * rho + 8 * du * rho + 2);
            d2g[1][1][2][2] = -2 * e * rho * rho;  // sin^2(theta) curvature at pi/2
            return MetricSample(3, g, dg, d2g);
        }
        case Reduction::Warped3: {
            const std::size_t n = s.n_nodes();
            if (s.closed && (i == 0 || i + 1 == n)) throw OutOfChart("pole node");
            const double pp = s.phi[i];
            const double psi = s.psi[i];
            const double dphi = fd::d1(s.phi, i, h, -1, false);
            const double ddphi = fd::d2(s.phi, i, h, -1, false);
            const double dpsi = fd::d1(s.psi, i, h, +1, false);
            const double ddpsi = fd::d2(s.psi, i, h, +1, false);
            g[0][0] = psi * psi;
            g[1][1] = pp * pp;
            g[2][2] = pp * pp;  // theta = pi/2
            dg[0][0][0] = 2 * psi * dpsi;
            dg[0][1][1] = dg[0][2][2] = 2 * pp * dphi;
            d2g[0][0][0][0] = 2 * (dpsi * dpsi + psi * ddpsi);
            d2g[0][0][1][1] = d2g[0][0][2][2] = 2 * (dphi * dphi + pp * ddphi);
            d2g[1][1][2][2] = -2 * pp * pp;
            return MetricSample(3, g, dg, d2g);
        }
        default:
            break;
    }
    if (s.reduction == Reduction::Homogeneous) {
        const auto& l = s.hom.brackets;
        ChartPoint origin;
        origin.dim = 3;
        if (l[2] == 1.0)
            return sample(MetricFamily{FamilyKind::Nil, 3, {s.hom.A, s.hom.B, s.hom.C}}, origin);
        if (l[0] == 1.0)
            return sample(MetricFamily{FamilyKind::Sol, 3, {s.hom.A, s.hom.B, s.hom.C}}, origin);
        Mat3 gf{};
        gf[0][0] = s.hom.A;
        gf[1][1] = s.hom.B;
        gf[2][2] = s.hom.C;
        return MetricSample(3, gf, Arr3{}, Arr4{});
    }
    throw UnsupportedReduction("no chart for this reduction");
}

// measure density w(i): dV = w d(coord), includes the quotiented directions
inline double measure_density(const FlowState& s, std::size_t i) {
    switch (s.reduction) {
        case Reduction::Surface:
            switch (s.base) {
                case SurfaceBase::RoundS2:
                    return 2.0 * M_PI * std::exp(2.0 * s.u[i]) * std::sin(s.grid[i]);
                case SurfaceBase::FlatRadial: {
                    const int n = s.ambient_dim;
                    const double omega = (n == 2) ? 2.0 * M_PI : 4.0 * M_PI;
                    return omega * std::pow(s.grid[i], n - 1) * std::exp(double(n) * s.u[i]);
                }
                case SurfaceBase::FlatTorus: {
                    const double transverse = std::pow(s.length, s.ambient_dim - 1);
                    return transverse * std::exp(2.0 * s.u[i]);
                }
            }
            return 0.0;
        case Reduction::Warped3:
            return 4.0 * M_PI * s.psi[i] * sqr(s.phi[i]);
        default:
            throw UnsupportedReduction("no grid measure for this reduction");
    }
}

// metric coefficient of the profile direction
inline double g_rr(const FlowState& s, std::size_t i) {
    switch (s.reduction) {
        case Reduction::Surface:
            return std::exp(2.0 * s.u[i]);
        case Reduction::Warped3:
            return sqr(s.psi[i]);
        default:
            throw UnsupportedReduction("no profile metric for this reduction");
    }
}

inline double total_volume(const FlowState& s) {
    if (s.reduction == Reduction::Homogeneous)
        return std::sqrt(s.hom.A * s.hom.B * s.hom.C);
    if (s.reduction == Reduction::CurvOde) return 1.0;
    Vec w(s.n_nodes());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = measure_density(s, i);
    if (s.periodic()) return periodic_trapezoid(w, s.length / double(s.n_nodes()));
    return simpson(w, s.h());
}

// ---------------------------------------------------------------------------
// stepping

struct StepControl {
    double dt_max = 1e-3;
    double cfl = 0.2;          // dt <= cfl * (metric grid spacing)^2
    double reaction = 0.1;     // dt <= reaction / max |R|
    double ceiling = 1e6;      // blow-up threshold on |sectional|
};

namespace detail_flow {

inline void surface_rhs(const FlowState& s, Vec& dudt, bool normalized, double* r_avg_out) {
    const std::size_t n = s.n_nodes();
    dudt.assign(n, 0.0);
    Vec R(n);
    for (std::size_t i = 0; i < n; ++i) R[i] = surface_scalar_at(s, i);
    double r_avg = 0.0;
    if (normalized) {
        Vec rw(n), w(n);
        for (std::size_t i = 0; i < n; ++i) {
            w[i] = measure_density(s, i);
            rw[i] = R[i] * w[i];
        }
        double vol, rint;
        if (s.periodic()) {
            const double h = s.length / double(n);
            vol = periodic_trapezoid(w, h);
            rint = periodic_trapezoid(rw, h);
        } else {
            vol = simpson(w, s.h());
            rint = simpson(rw, s.h());
        }
        r_avg = rint / vol;
    }
    if (r_avg_out) *r_avg_out = r_avg;
    for (std::size_t i = 0; i < n; ++i) dudt[i] = -0.5 * (R[i] - r_avg);
    if (s.edge == EdgePolicy::CigarExact) dudt[n - 1] = 0.0;  // set outside by the exact profile
}

inline void warped3_rhs(const FlowState& s, Vec& dphidt, Vec& dpsidt) {
    const std::size_t n = s.n_nodes();
    const double h = s.h();
    dphidt.assign(n, 0.0);
    dpsidt.assign(n, 0.0);
    Vec ratio(n, 0.0);  // phi_ss / phi
    for (std::size_t i = 1; i + 1 < n; ++i) {
        const double ap = (s.phi[i + 1] - s.phi[i]) / h * 2.0 / (s.psi[i + 1] + s.psi[i]);
        const double am = (s.phi[i] - s.phi[i - 1]) / h * 2.0 / (s.psi[i] + s.psi[i - 1]);
        const double phi_ss = (ap - am) / (h * s.psi[i]);
        const double phi_s = (s.closed ? fd::d1_odd4(s.phi, i, h)
                                       : (s.phi[i + 1] - s.phi[i - 1]) / (2 * h)) /
                             s.psi[i];
        dphidt[i] = phi_ss - (1.0 - phi_s * phi_s) / s.phi[i];
        ratio[i] = phi_ss / s.phi[i];
    }
    if (s.closed) {
        dphidt[0] = dphidt[n - 1] = 0.0;
        ratio[0] = fd::extrapolate_even(ratio[1], ratio[2]);
        ratio[n - 1] = fd::extrapolate_even(ratio[n - 2], ratio[n - 3]);
    } else {
        // free ends: copy the neighbouring rates
        dphidt[0] = dphidt[1];
        dphidt[n - 1] = dphidt[n - 2];
        ratio[0] = ratio[1];
        ratio[n - 1] = ratio[n - 2];
    }
    for (std::size_t i = 0; i < n; ++i) dpsidt[i] = 2.0 * s.psi[i] * ratio[i];
}

inline void remesh_arclength(FlowState& s) {
    const std::size_t n = s.n_nodes();
    const double h = s.h();
    Vec arc(n, 0.0);
    for (std::size_t i = 1; i < n; ++i)
        arc[i] = arc[i - 1] + 0.5 * h * (s.psi[i - 1] + s.psi[i]);
    const double total = arc[n - 1];
    Vec new_grid = uniform_grid(n, 0.0, total);
    Vec new_phi(n);
    if (s.closed && n >= 8) {
        // resample through the odd extension across both poles so the
        // interpolant respects the closure parity
        Vec ax(n + 4), fy(n + 4);
        ax[0] = -arc[2];
        ax[1] = -arc[1];
        fy[0] = -s.phi[2];
        fy[1] = -s.phi[1];
        for (std::size_t i = 0; i < n; ++i) {
            ax[i + 2] = arc[i];
            fy[i + 2] = s.phi[i];
        }
        ax[n + 2] = 2 * total - arc[n - 2];
        ax[n + 3] = 2 * total - arc[n - 3];
        fy[n + 2] = -s.phi[n - 2];
        fy[n + 3] = -s.phi[n - 3];
        Pchip interp(ax, fy);
        for (std::size_t i = 0; i < n; ++i) new_phi[i] = interp(new_grid[i]);
    } else {
        Pchip interp(arc, s.phi);
        for (std::size_t i = 0; i < n; ++i) new_phi[i] = interp(new_grid[i]);
    }
    if (s.closed) {
        new_phi[0] = new_phi[n - 1] = 0.0;
        // fourth-order one-sided slope condition |phi'| = 1 at the poles
        const double hh = new_grid[1] - new_grid[0];
        new_phi[1] = (12.0 * hh + 36.0 * new_phi[2] - 16.0 * new_phi[3] + 3.0 * new_phi[4]) / 48.0;
        new_phi[n - 2] = (12.0 * hh + 36.0 * new_phi[n - 3] - 16.0 * new_phi[n - 4] +
                          3.0 * new_phi[n - 5]) /
                         48.0;
    }
    s.grid = std::move(new_grid);
    s.phi = std::move(new_phi);
    s.psi.assign(n, 1.0);
}

inline double cigar_edge_u(double rho, double t) {
    return -0.5 * std::log(std::exp(4.0 * t) + rho * rho);
}

}  // namespace detail_flow

inline double max_abs_scalar(const FlowState& s) {
    if (s.reduction == Reduction::Homogeneous || s.reduction == Reduction::CurvOde)
        return std::fabs(node_curvature(s, 0).R);
    double m = 0.0;
    for (std::size_t i = 0; i < s.n_nodes(); ++i)
        m = std::max(m, std::fabs(node_curvature(s, i).R));
    return m;
}

inline double max_abs_sectional(const FlowState& s) {
    if (s.reduction == Reduction::Homogeneous || s.reduction == Reduction::CurvOde)
        return node_curvature(s, 0).max_abs_sec;
    double m = 0.0;
    for (std::size_t i = 0; i < s.n_nodes(); ++i)
        m = std::max(m, node_curvature(s, i).max_abs_sec);
    return m;
}

// stability limit for one explicit step (diffusion + reaction)
inline double stability_limit(const FlowState& s, const StepControl& ctl) {
    double dt = 1e300;
    if (s.reduction == Reduction::Surface || s.reduction == Reduction::Warped3) {
        const double h = s.periodic() ? s.length / double(s.n_nodes()) : s.h();
        double min_grr = 1e300;
        for (std::size_t i = 0; i < s.n_nodes(); ++i) min_grr = std::min(min_grr, g_rr(s, i));
        dt = std::min(dt, ctl.cfl * h * h * min_grr);
    }
    const double rmax = max_abs_scalar(s);
    if (rmax > 0.0) dt = std::min(dt, ctl.reaction / rmax);
    return dt;
}

inline double cfl_limit(const FlowState& s, const StepControl& ctl) {
    return std::min(ctl.dt_max, stability_limit(s, ctl));
}

// One explicit RK4 step. Throws CflViolation when dt exceeds the stability
// limit and BlowUp when the sectional ceiling is crossed.
inline FlowState step(const FlowState& s, double dt, const StepControl& ctl = StepControl{},
                      bool normalized = false) {
    if (dt <= 0.0) throw CflViolation("dt must be positive");
    if (dt > stability_limit(s, ctl) * (1.0 + 1e-12))
        throw CflViolation("dt exceeds the stability limit");
    if (max_abs_sectional(s) > ctl.ceiling) throw BlowUp("curvature above ceiling");

    FlowState out = s;
    switch (s.reduction) {
        case Reduction::Surface: {
            const double v_target = normalized ? total_volume(s) : 0.0;
            auto rhs = [&](const FlowState& st, Vec& d) {
                detail_flow::surface_rhs(st, d, normalized, nullptr);
            };
            Vec k1, k2, k3, k4;
            FlowState tmp = s;
            rhs(s, k1);
            auto advance = [&](const Vec& k, double f) {
                for (std::size_t i = 0; i < s.u.size(); ++i) tmp.u[i] = s.u[i] + f * dt * k[i];
                tmp.t = s.t + f * dt;
                if (s.edge == EdgePolicy::CigarExact)
                    tmp.u.back() = detail_flow::cigar_edge_u(s.grid.back(), tmp.t);
            };
            advance(k1, 0.5);
            rhs(tmp, k2);
            advance(k2, 0.5);
            rhs(tmp, k3);
            advance(k3, 1.0);
            rhs(tmp, k4);
            for (std::size_t i = 0; i < s.u.size(); ++i)
                out.u[i] = s.u[i] + dt / 6.0 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]);
            out.t = s.t + dt;
            if (s.edge == EdgePolicy::CigarExact)
                out.u.back() = detail_flow::cigar_edge_u(s.grid.back(), out.t);
            if (normalized) {
                const double v = total_volume(out);
                const double c = std::pow(v_target / v, 2.0 / double(s.ambient_dim));
                for (auto& x : out.u) x += 0.5 * std::log(c);
            }
            break;
        }
        case Reduction::Warped3: {
            const std::size_t n = s.n_nodes();
            Vec kp1, ks1, kp2, ks2, kp3, ks3, kp4, ks4;
            FlowState tmp = s;
            detail_flow::warped3_rhs(s, kp1, ks1);
            auto advance = [&](const Vec& kp, const Vec& ks, double f) {
                for (std::size_t i = 0; i < n; ++i) {
                    tmp.phi[i] = s.phi[i] + f * dt * kp[i];
                    tmp.psi[i] = s.psi[i] + f * dt * ks[i];
                }
            };
            advance(kp1, ks1, 0.5);
            detail_flow::warped3_rhs(tmp, kp2, ks2);
            advance(kp2, ks2, 0.5);
            detail_flow::warped3_rhs(tmp, kp3, ks3);
            advance(kp3, ks3, 1.0);
            detail_flow::warped3_rhs(tmp, kp4, ks4);
            for (std::size_t i = 0; i < n; ++i) {
                out.phi[i] = s.phi[i] + dt / 6.0 * (kp1[i] + 2 * kp2[i] + 2 * kp3[i] + kp4[i]);
                out.psi[i] = s.psi[i] + dt / 6.0 * (ks1[i] + 2 * ks2[i] + 2 * ks3[i] + ks4[i]);
            }
            out.t = s.t + dt;
            detail_flow::remesh_arclength(out);
            break;
        }
        case Reduction::Homogeneous: {
            auto rhs = [](const HomogeneousState& hs) {
                const auto hr = homogeneous_ricci(hs);
                return std::array<double, 3>{-2.0 * hr.ricci_diag[0] * hs.A,
                                             -2.0 * hr.ricci_diag[1] * hs.B,
                                             -2.0 * hr.ricci_diag[2] * hs.C};
            };
            HomogeneousState h0 = s.hom;
            auto add = [&](const std::array<double, 3>& k, double f) {
                HomogeneousState hh = h0;
                hh.A += f * dt * k[0];
                hh.B += f * dt * k[1];
                hh.C += f * dt * k[2];
                return hh;
            };
            const auto k1 = rhs(h0);
            const auto k2 = rhs(add(k1, 0.5));
            const auto k3 = rhs(add(k2, 0.5));
            const auto k4 = rhs(add(k3, 1.0));
            out.hom.A = h0.A + dt / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]);
            out.hom.B = h0.B + dt / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]);
            out.hom.C = h0.C + dt / 6 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2]);
            out.t = s.t + dt;
            break;
        }
        case Reduction::CurvOde: {
            auto rhs = [](const std::array<double, 3>& a) {
                return std::array<double, 3>{a[0] * a[0] + a[1] * a[2],
                                             a[1] * a[1] + a[2] * a[0],
                                             a[2] * a[2] + a[0] * a[1]};
            };
            auto add = [&](const std::array<double, 3>& a, const std::array<double, 3>& k,
                           double f) {
                return std::array<double, 3>{a[0] + f * dt * k[0], a[1] + f * dt * k[1],
                                             a[2] + f * dt * k[2]};
            };
            const auto k1 = rhs(s.alpha);
            const auto k2 = rhs(add(s.alpha, k1, 0.5));
            const auto k3 = rhs(add(s.alpha, k2, 0.5));
            const auto k4 = rhs(add(s.alpha, k3, 1.0));
            for (int i = 0; i < 3; ++i)
                out.alpha[i] =
                    s.alpha[i] + dt / 6 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]);
            out.t = s.t + dt;
            break;
        }
    }
    if (!all_finite(out.u) || !all_finite(out.phi)) throw BlowUp("non-finite state");
    return out;
}

inline FlowState step_normalized(const FlowState& s, double dt,
                                 const StepControl& ctl = StepControl{}) {
    if (s.reduction != Reduction::Surface)
        throw UnsupportedReduction("normalized flow implemented for surface reductions");
    return step(s, dt, ctl, /*normalized=*/true);
}

// ---------------------------------------------------------------------------
// trajectories

enum class RunStatus { Completed, Extinct, BlownUp, Failed };

inline std::string run_status_name(RunStatus s) {
    switch (s) {
        case RunStatus::Completed: return "Completed";
        case RunStatus::Extinct: return "Extinct";
        case RunStatus::BlownUp: return "BlownUp";
        case RunStatus::Failed: return "Failed";
    }
    return "?";
}

struct StateDiag {
    double t = 0.0;
    double volume = 0.0;
    double r_min = 0.0;
    double r_max = 0.0;
    double max_sec = 0.0;
    double dt = 0.0;
    std::size_t argmax_sec = 0;
};

struct RunParams {
    StepControl ctl;
    double t_end = 0.1;
    double dt_min = 1e-12;
    double cadence = 1e-2;   // output spacing in t
    bool normalized = false;
    bool dense_store = false;  // keep every accepted step (coupled-field runs)
};

struct FlowTrajectory {
    std::vector<FlowState> states;  // output-cadence states, first = initial
    std::vector<StateDiag> diag;
    std::vector<FlowState> dense;   // every accepted step when dense_store
    RunStatus status = RunStatus::Completed;
    bool extinction_flag = false;
    double extinction_time = -1.0;
    std::string message;
};

inline StateDiag diagnostics(const FlowState& s, double dt = 0.0) {
    StateDiag d;
    d.t = s.t;
    d.dt = dt;
    d.volume = total_volume(s);
    if (s.reduction == Reduction::Homogeneous || s.reduction == Reduction::CurvOde) {
        const auto nc = node_curvature(s, 0);
        d.r_min = d.r_max = nc.R;
        d.max_sec = nc.max_abs_sec;
    } else {
        d.r_min = 1e300;
        d.r_max = -1e300;
        for (std::size_t i = 0; i < s.n_nodes(); ++i) {
            const auto nc = node_curvature(s, i);
            d.r_min = std::min(d.r_min, nc.R);
            d.r_max = std::max(d.r_max, nc.R);
            if (nc.max_abs_sec > d.max_sec) {
                d.max_sec = nc.max_abs_sec;
                d.argmax_sec = i;
            }
        }
    }
    return d;
}

// Adaptive-dt evolution until t_end, extinction, or the blow-up ceiling.
inline FlowTrajectory run_flow(FlowState s, const RunParams& p) {
    FlowTrajectory traj;
    traj.states.push_back(s);
    traj.diag.push_back(diagnostics(s));
    if (p.dense_store) traj.dense.push_back(s);
    double next_output = s.t + p.cadence;
    try {
        while (s.t < p.t_end) {
            double dt = cfl_limit(s, p.ctl);
            dt = std::min(dt, p.t_end - s.t);
            if (dt < p.dt_min) throw NonConvergence("dt underflow below dt_min");
            if (max_abs_sectional(s) > p.ctl.ceiling) throw BlowUp("ceiling");
            s = step(s, dt, p.ctl, p.normalized);
            if (p.dense_store) traj.dense.push_back(s);
            if (s.t >= next_output - 1e-14 || s.t >= p.t_end - 1e-14) {
                traj.states.push_back(s);
                traj.diag.push_back(diagnostics(s, dt));
                while (next_output <= s.t + 1e-14) next_output += p.cadence;
            }
        }
        traj.status = RunStatus::Completed;
    } catch (const BlowUp&) {
        traj.states.push_back(s);
        traj.diag.push_back(diagnostics(s));
        const auto& d = traj.diag.back();
        const bool global = d.r_min > 0.0 && d.r_min >= 0.1 * d.r_max;
        traj.status = global ? RunStatus::Extinct : RunStatus::BlownUp;
        traj.extinction_flag = true;
        traj.extinction_time = s.t;
        traj.message = "curvature ceiling reached";
    } catch (const NonConvergence& e) {
        traj.status = RunStatus::Failed;
        traj.message = e.what();
    }
    return traj;
}

// ---------------------------------------------------------------------------
// parabolic rescaling (zoom): g -> lambda g, t -> lambda (t - t0)

inline FlowState parabolic_rescale(const FlowTrajectory& traj, std::size_t x0, double t0) {
    // locate the stored state at t0
    const FlowState* at = nullptr;
    for (const auto& st : traj.states)
        if (std::fabs(st.t - t0) <= 1e-12 + 1e-9 * std::fabs(t0)) at = &st;
    if (!at) throw NotMaximal("t0 is not a stored output time");
    const double lambda0 = node_curvature(*at, x0).R;
    if (lambda0 <= 0.0) throw NotMaximal("R(x0,t0) must be positive");
    for (const auto& st : traj.states) {
        if (st.t > t0 + 1e-14) continue;
        for (std::size_t i = 0; i < std::max<std::size_t>(st.n_nodes(), 1); ++i)
            if (node_curvature(st, i).R > lambda0 * (1.0 + 1e-9))
                throw NotMaximal("R exceeds R(x0,t0) in the past of t0");
    }
    FlowState out = *at;
    out.t = 0.0;
    switch (out.reduction) {
        case Reduction::Surface:
            for (auto& x : out.u) x += 0.5 * std::log(lambda0);
            break;
        case Reduction::Warped3:
            for (auto& x : out.grid) x *= std::sqrt(lambda0);
            for (auto& x : out.phi) x *= std::sqrt(lambda0);
            break;
        case Reduction::Homogeneous:
            out.hom.A *= lambda0;
            out.hom.B *= lambda0;
            out.hom.C *= lambda0;
            break;
        case Reduction::CurvOde:
            for (auto& a : out.alpha) a /= lambda0;
            break;
    }
    return out;
}

// ---------------------------------------------------------------------------
// epsilon-neck detection (C0 criterion on the rescaled radius profile)

struct NeckReport {
    bool found = false;
    std::size_t center_index = 0;
    double epsilon = 0.0;
    double rescaled_radius_error = 0.0;
    double length_in_rescaled_units = 0.0;
};

inline NeckReport detect_neck(const FlowState& s, double epsilon) {
    if (s.reduction != Reduction::Warped3)
        throw UnsupportedReduction("neck detection needs a warped-product state");
    if (!(epsilon > 0.0 && epsilon < 0.5)) throw RangeError("epsilon must be in (0, 1/2)");
    NeckReport best;
    best.epsilon = epsilon;
    const std::size_t n = s.n_nodes();
    const double h = s.h();
    const double target = std::sqrt(2.0);
    for (std::size_t c = 1; c + 1 < n; ++c) {
        const double lam = node_curvature(s, c).R;
        if (lam <= 0.0) continue;
        const double rt = std::sqrt(lam);
        auto dev = [&](std::size_t i) { return std::fabs(rt * s.phi[i] - target); };
        if (dev(c) >= epsilon) continue;
        double left = 0.0, right = 0.0, err = dev(c);
        for (std::size_t i = c; i-- > 0;) {
            if (dev(i) >= epsilon) break;
            left += rt * h * s.psi[i];
            err = std::max(err, dev(i));
        }
        for (std::size_t i = c + 1; i < n; ++i) {
            if (dev(i) >= epsilon) break;
            right += rt * h * s.psi[i];
            err = std::max(err, dev(i));
        }
        const double half = std::min(left, right);
        if (half >= 1.0 / epsilon) {
            if (!best.found || 2.0 * half > best.length_in_rescaled_units) {
                best.found = true;
                best.center_index = c;
                best.rescaled_radius_error = err;
                best.length_in_rescaled_units = 2.0 * half;
            }
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// meridian distances

inline double distance_between(const FlowState& s, std::size_t ia, std::size_t ib) {
    if (ia > ib) std::swap(ia, ib);
    switch (s.reduction) {
        case Reduction::Surface: {
            if (s.base == SurfaceBase::FlatTorus) {
                const double dx = std::fabs(s.grid[ib] - s.grid[ia]);
                return std::min(dx, s.length - dx) * std::exp(s.u[ia]);
            }
            Vec seg(ib - ia + 1);
            for (std::size_t i = ia; i <= ib; ++i) seg[i - ia] = std::exp(s.u[i]);
            return simpson(seg, s.h());
        }
        case Reduction::Warped3: {
            Vec seg(ib - ia + 1);
            for (std::size_t i = ia; i <= ib; ++i) seg[i - ia] = s.psi[i];
            return simpson(seg, s.h());
        }
        default:
            throw UnsupportedReduction("no meridian distance for this reduction");
    }
}

// flat-torus distance between full chart points (wrap per coordinate)
inline double torus_distance(int dim, double side, const ChartPoint& a, const ChartPoint& b) {
    double s = 0.0;
    for (int i = 0; i < dim; ++i) {
        double d = std::fabs(a.x[i] - b.x[i]);
        d = std::min(d, side - d);
        s += d * d;
    }
    return std::sqrt(s);
}

}  // namespace ricci
