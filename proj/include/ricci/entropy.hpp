#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <random>

#include "ricci/common.hpp"
#include "ricci/flow.hpp"
#include "ricci/linalg.hpp"
#include "ricci/report.hpp"

// The F and W functionals, lambda(g) and mu(g,tau), Laplacian spectra on
// reduced states, the conjugate-heat evolution of the potential, and the
// first-variation / monotonicity identities.

namespace ricci {

enum class FieldRole { Potential, HeatSolution, TestFunction };

struct ScalarField {
    Vec values;
    FieldRole role = FieldRole::Potential;
};

inline int manifold_dim(const FlowState& s) {
    switch (s.reduction) {
        case Reduction::Surface:
            return s.base == SurfaceBase::RoundS2 ? 2 : s.ambient_dim;
        case Reduction::Warped3:
        case Reduction::Homogeneous:
        case Reduction::CurvOde:
            return 3;
    }
    return 0;
}

// ---------------------------------------------------------------------------
// discrete geometry: Simpson quadrature for functional values, finite-volume
// dual-cell masses and midpoint edge conductances for the operator (the
// stiffness form has exact zero row sums, so total mass is a linear invariant
// of the conjugate-heat stepping).

inline Vec simpson_weights(std::size_t n, double h) {
    Vec c(n, 0.0);
    if (n < 2) return c;
    std::size_t m = n - 1;
    std::size_t start = 0;
    if (m % 2 == 1) {  // leading trapezoid cell, mirrors simpson()
        c[0] += 0.5 * h;
        c[1] += 0.5 * h;
        start = 1;
        m -= 1;
    }
    for (std::size_t i = start; i + 2 <= n - 1; i += 2) {
        c[i] += h / 3.0;
        c[i + 1] += 4.0 * h / 3.0;
        c[i + 2] += h / 3.0;
    }
    return c;
}

namespace detail_geom {

// measure density and profile metric at the midpoint of edge (i, i+1 mod n)
inline std::pair<double, double> midpoint_density(const FlowState& s, std::size_t e) {
    const std::size_t n = s.n_nodes();
    const std::size_t i = e, j = (e + 1) % n;
    switch (s.reduction) {
        case Reduction::Surface: {
            const double ubar = 0.5 * (s.u[i] + s.u[j]);
            const double e2u = std::exp(2.0 * ubar);
            switch (s.base) {
                case SurfaceBase::RoundS2: {
                    const double th = 0.5 * (s.grid[i] + s.grid[j]);
                    return {2.0 * M_PI * e2u * std::sin(th), e2u};
                }
                case SurfaceBase::FlatRadial: {
                    const double rho = 0.5 * (s.grid[i] + s.grid[j]);
                    const int nd = s.ambient_dim;
                    const double omega = (nd == 2) ? 2.0 * M_PI : 4.0 * M_PI;
                    return {omega * std::pow(rho, nd - 1) * std::exp(double(nd) * ubar), e2u};
                }
                case SurfaceBase::FlatTorus: {
                    const double transverse = std::pow(s.length, s.ambient_dim - 1);
                    return {transverse * e2u, e2u};
                }
            }
            return {0.0, 1.0};
        }
        case Reduction::Warped3: {
            const double phib = 0.5 * (s.phi[i] + s.phi[j]);
            const double psib = 0.5 * (s.psi[i] + s.psi[j]);
            return {4.0 * M_PI * psib * sqr(phib), sqr(psib)};
        }
        default:
            throw UnsupportedReduction("no grid measure for this reduction");
    }
}

}  // namespace detail_geom

struct DiscreteGeometry {
    std::size_t n = 0;
    double h = 0.0;
    bool periodic = false;
    Vec w;     // node measure density
    Vec grr;   // node profile metric coefficient
    Vec quad;  // Simpson/trapezoid weight per node
    Vec R;     // scalar curvature

    double integrate(const Vec& f) const {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += quad[i] * w[i] * f[i];
        return s;
    }
    double volume() const {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += quad[i] * w[i];
        return s;
    }
    double grad2(const Vec& f, std::size_t i) const {
        const double df = fd::d1(f, i, h, +1, periodic);
        return df * df / grr[i];
    }
};

inline DiscreteGeometry discrete_geometry(const FlowState& s) {
    DiscreteGeometry d;
    d.n = s.n_nodes();
    d.periodic = s.periodic();
    d.h = d.periodic ? s.length / double(d.n) : s.h();
    d.w.resize(d.n);
    d.grr.resize(d.n);
    d.R.resize(d.n);
    for (std::size_t i = 0; i < d.n; ++i) {
        d.w[i] = measure_density(s, i);
        d.grr[i] = g_rr(s, i);
        d.R[i] = node_curvature(s, i).R;
    }
    if (d.periodic) {
        d.quad.assign(d.n, d.h);
    } else {
        d.quad = simpson_weights(d.n, d.h);
    }
    return d;
}

// edge-based stiffness of int |grad f|^2 dV plus dual-cell masses
struct GridOperators {
    std::size_t n = 0;
    bool periodic = false;
    Vec edge_a;  // conductance per edge, edge e joins (e, e+1 mod n)
    Vec M;       // dual-cell mass, strictly positive everywhere

    void apply_K(const Vec& v, Vec& out) const {
        out.assign(n, 0.0);
        const std::size_t edges = edge_a.size();
        for (std::size_t e = 0; e < edges; ++e) {
            const std::size_t i = e, j = (e + 1) % n;
            const double f = edge_a[e] * (v[i] - v[j]);
            out[i] += f;
            out[j] -= f;
        }
    }

    Matrix dense_K() const {
        Matrix K(n, n, 0.0);
        const std::size_t edges = edge_a.size();
        for (std::size_t e = 0; e < edges; ++e) {
            const std::size_t i = e, j = (e + 1) % n;
            K(i, i) += edge_a[e];
            K(j, j) += edge_a[e];
            K(i, j) -= edge_a[e];
            K(j, i) -= edge_a[e];
        }
        return K;
    }

    double quadratic(const Vec& v) const {
        double s = 0.0;
        const std::size_t edges = edge_a.size();
        for (std::size_t e = 0; e < edges; ++e) {
            const std::size_t i = e, j = (e + 1) % n;
            s += edge_a[e] * sqr(v[i] - v[j]);
        }
        return s;
    }
};

inline GridOperators assemble_operators(const FlowState& s) {
    GridOperators op;
    op.n = s.n_nodes();
    op.periodic = s.periodic();
    const double h = op.periodic ? s.length / double(op.n) : s.h();
    const std::size_t edges = op.periodic ? op.n : op.n - 1;
    op.edge_a.resize(edges);
    Vec wmid(edges);
    for (std::size_t e = 0; e < edges; ++e) {
        const auto [wm, grrm] = detail_geom::midpoint_density(s, e);
        wmid[e] = wm;
        op.edge_a[e] = (wm / grrm) / h;
    }
    op.M.assign(op.n, 0.0);
    for (std::size_t e = 0; e < edges; ++e) {
        op.M[e] += 0.5 * h * wmid[e];
        op.M[(e + 1) % op.n] += 0.5 * h * wmid[e];
    }
    if (!op.periodic) {
        // half dual cells at the ends; linear density toward a vanishing pole
        op.M[0] = 0.25 * h * wmid[0] + 0.25 * h * measure_density(s, 0);
        op.M[op.n - 1] = 0.25 * h * wmid[edges - 1] + 0.25 * h * measure_density(s, op.n - 1);
    }
    return op;
}

// ---------------------------------------------------------------------------
// shifted inverse iteration for the generalized pencil A x = lambda M x with
// deflation (M-orthogonal) against converged vectors.

namespace detail_eig {

inline double m_dot(const Vec& M, const Vec& a, const Vec& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += M[i] * a[i] * b[i];
    return s;
}

inline void m_orthogonalize(const Vec& M, Vec& x, const std::vector<Vec>& basis) {
    for (const auto& v : basis) {
        const double c = m_dot(M, x, v);
        for (std::size_t i = 0; i < x.size(); ++i) x[i] -= c * v[i];
    }
}

struct EigPair {
    double value = 0.0;
    Vec vector;
};

inline EigPair smallest_above(const Matrix& A, const Vec& M, double sigma,
                              const std::vector<Vec>& deflate, std::uint64_t seed = 12345) {
    const std::size_t n = M.size();
    auto factor = [&](double sh) {
        Matrix shifted = A;
        for (std::size_t i = 0; i < n; ++i) shifted(i, i) -= sh * M[i];
        return LuFactor(std::move(shifted));
    };
    LuFactor lu = factor(sigma);
    if (lu.singular()) {
        sigma -= 1e-6;
        lu = factor(sigma);
        if (lu.singular()) throw EigenSolveFailure("singular shifted operator");
    }

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Vec x(n);
    for (auto& v : x) v = 1.0 + 0.01 * u(rng);
    m_orthogonalize(M, x, deflate);

    double rho_prev = 1e300;
    for (int it = 0; it < 200; ++it) {
        Vec rhs(n);
        for (std::size_t i = 0; i < n; ++i) rhs[i] = M[i] * x[i];
        Vec y = lu.solve(rhs);
        m_orthogonalize(M, y, deflate);
        const double nn = std::sqrt(std::max(m_dot(M, y, y), 1e-300));
        for (auto& v : y) v /= nn;
        x = std::move(y);
        double num = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double Ax = 0.0;
            for (std::size_t j = 0; j < n; ++j) Ax += A(i, j) * x[j];
            num += x[i] * Ax;
        }
        const double rho = num / m_dot(M, x, x);
        if (std::fabs(rho - rho_prev) <= 1e-10 * std::max(1.0, std::fabs(rho)))
            return {rho, x};
        rho_prev = rho;
        if (it % 8 == 7) {  // Rayleigh shift refresh
            LuFactor next = factor(rho - 1e-8 * std::max(1.0, std::fabs(rho)));
            if (!next.singular()) lu = std::move(next);
        }
    }
    throw EigenSolveFailure("inverse iteration did not converge");
}

}  // namespace detail_eig

// ---------------------------------------------------------------------------
// functionals

inline void require_grid(const FlowState& s, const ScalarField& f) {
    if (f.values.size() != s.n_nodes()) throw GridMismatch("field size != grid size");
}

// F(g,f) = int (R + |grad f|^2) e^{-f} dV
inline double f_eval(const FlowState& s, const ScalarField& f) {
    require_grid(s, f);
    const auto d = discrete_geometry(s);
    Vec integrand(d.n);
    for (std::size_t i = 0; i < d.n; ++i)
        integrand[i] = (d.R[i] + d.grad2(f.values, i)) * std::exp(-f.values[i]);
    return d.integrate(integrand);
}

inline double compatibility_mass(const FlowState& s, const ScalarField& f, double tau) {
    const auto d = discrete_geometry(s);
    const double norm = std::pow(4.0 * M_PI * tau, -0.5 * manifold_dim(s));
    Vec integrand(d.n);
    for (std::size_t i = 0; i < d.n; ++i) integrand[i] = norm * std::exp(-f.values[i]);
    return d.integrate(integrand);
}

// W(g,f,tau) = int [tau(|grad f|^2 + R) + f - n] (4 pi tau)^{-n/2} e^{-f} dV
inline double w_eval(const FlowState& s, const ScalarField& f, double tau,
                     bool check_compat = true) {
    require_grid(s, f);
    if (tau <= 0.0) throw NonPositiveTau("w_eval needs tau > 0");
    const int n = manifold_dim(s);
    if (check_compat) {
        const double mass = compatibility_mass(s, f, tau);
        if (std::fabs(mass - 1.0) > 1e-4)
            throw NotCompatible("w_eval: (g, f, tau) not compatible", mass);
    }
    const auto d = discrete_geometry(s);
    const double norm = std::pow(4.0 * M_PI * tau, -0.5 * n);
    Vec integrand(d.n);
    for (std::size_t i = 0; i < d.n; ++i) {
        const double fi = f.values[i];
        integrand[i] = (tau * (d.grad2(f.values, i) + d.R[i]) + fi - n) * norm * std::exp(-fi);
    }
    return d.integrate(integrand);
}

// smallest eigenvalue of -4 Lap + R
struct LambdaResult {
    double lambda = 0.0;
    Vec minimizer;  // eigenvector, M-normalized
};

inline LambdaResult lambda_eval(const FlowState& s) {
    const auto d = discrete_geometry(s);
    const auto op = assemble_operators(s);
    Matrix A = op.dense_K();
    double rmin = 1e300;
    for (std::size_t i = 0; i < d.n; ++i) {
        for (std::size_t j = 0; j < d.n; ++j) A(i, j) *= 4.0;
    }
    for (std::size_t i = 0; i < d.n; ++i) {
        A(i, i) += d.R[i] * op.M[i];
        rmin = std::min(rmin, d.R[i]);
    }
    const auto pair = detail_eig::smallest_above(A, op.M, rmin - 1.0, {});
    return {pair.value, pair.vector};
}

struct SpectrumRecord {
    Vec eigenvalues;               // ascending, first k of -Lap
    std::vector<Vec> modes;        // M-normalized eigenvectors
    double operator_lambda = 0.0;  // smallest eigenvalue of -4 Lap + R
    bool lichnerowicz_checked = false;
    bool lichnerowicz_ok = true;
};

// first k eigenvalues of -Lap_g; a Ricci lower bound k > 0 raises the
// Lichnerowicz flag lambda_1 >= n k (up to discretization slack, since the
// round sphere attains equality)
inline SpectrumRecord spectrum(const FlowState& s, std::size_t k,
                               std::optional<double> ricci_lower = std::nullopt,
                               double lichnerowicz_slack = 1e-4) {
    const auto op = assemble_operators(s);
    const Matrix K = op.dense_K();
    SpectrumRecord rec;
    double sigma = -0.1;
    std::vector<Vec> found;
    for (std::size_t m = 0; m < k; ++m) {
        const auto pair = detail_eig::smallest_above(K, op.M, sigma, found, 1000 + m);
        rec.eigenvalues.push_back(pair.value);
        rec.modes.push_back(pair.vector);
        found.push_back(pair.vector);
        sigma = pair.value + std::max(1e-7, 1e-4 * std::max(1.0, pair.value));
    }
    rec.operator_lambda = lambda_eval(s).lambda;
    if (ricci_lower) {
        rec.lichnerowicz_checked = true;
        const int n = manifold_dim(s);
        if (*ricci_lower > 0.0 && rec.eigenvalues.size() > 1) {
            const double bound = n * (*ricci_lower);
            rec.lichnerowicz_ok = rec.eigenvalues[1] >= bound * (1.0 - lichnerowicz_slack);
        }
    }
    return rec;
}

// ---------------------------------------------------------------------------
// mu(g, tau): infimum of W over compatible f via u = e^{-f/2}, projected
// gradient descent with backtracking line search and seeded random restarts.

struct MuResult {
    double mu = 0.0;
    ScalarField minimizer_f;
    int restarts_used = 0;
    std::uint64_t seed = 0;
    bool converged = false;
    int iterations = 0;
};

inline MuResult mu_eval(const FlowState& s, double tau, std::uint64_t seed = 7771) {
    if (tau <= 0.0) throw NonPositiveTau("mu_eval needs tau > 0");
    const auto d = discrete_geometry(s);
    const auto op = assemble_operators(s);
    const int n = manifold_dim(s);
    const double c = std::pow(4.0 * M_PI * tau, -0.5 * n);

    auto mass_of = [&](const Vec& u) {
        double m = 0.0;
        for (std::size_t i = 0; i < d.n; ++i) m += op.M[i] * u[i] * u[i];
        return c * m;
    };
    auto w_of = [&](const Vec& u) {
        double val = 4.0 * tau * op.quadratic(u);
        for (std::size_t i = 0; i < d.n; ++i) {
            const double u2 = u[i] * u[i];
            const double logu2 = u2 > 0.0 ? std::log(u2) : 0.0;
            val += op.M[i] * (tau * d.R[i] * u2 - u2 * logu2 - double(n) * u2);
        }
        return c * val;
    };
    Vec ku;
    auto grad_of = [&](const Vec& u, Vec& g) {
        op.apply_K(u, ku);
        g.assign(d.n, 0.0);
        for (std::size_t i = 0; i < d.n; ++i) {
            const double u2 = u[i] * u[i];
            const double logu2 = u2 > 0.0 ? std::log(u2) : 0.0;
            g[i] = c * (8.0 * tau * ku[i] +
                        op.M[i] * (2.0 * tau * d.R[i] * u[i] - 2.0 * u[i] * logu2 -
                                   2.0 * u[i] - 2.0 * double(n) * u[i]));
        }
    };

    MuResult best;
    best.mu = 1e300;
    best.seed = seed;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    const int kRestarts = 4;  // constant start + 3 random restarts
    for (int restart = 0; restart < kRestarts; ++restart) {
        Vec u(d.n, 1.0);
        if (restart > 0) {
            const double x0 = unif(rng);
            const double width = 0.05 + 0.3 * unif(rng);
            const double amp = 0.5 + 4.0 * unif(rng);
            for (std::size_t i = 0; i < d.n; ++i) {
                double x = double(i) / double(d.n - 1) - x0;
                if (d.periodic) x -= std::round(x);
                u[i] = 1e-3 + amp * std::exp(-x * x / (2 * width * width));
            }
        }
        {
            const double m = mass_of(u);
            for (auto& v : u) v /= std::sqrt(m);
        }
        Vec g, ut, u_prev, g_prev;
        double w_cur = w_of(u);
        int it = 0;
        bool conv = false;
        double step0 = 0.5;
        for (; it < 600; ++it) {
            grad_of(u, g);
            // project the L^2(dV)-gradient onto the mass-sphere tangent
            double gu = 0.0, uu = 0.0;
            for (std::size_t i = 0; i < d.n; ++i) {
                gu += g[i] * u[i];
                uu += op.M[i] * u[i] * u[i];
            }
            const double proj = gu / std::max(uu, 1e-300);
            double gnorm2 = 0.0;
            for (std::size_t i = 0; i < d.n; ++i) {
                g[i] -= proj * op.M[i] * u[i];
                gnorm2 += g[i] * g[i] / std::max(op.M[i], 1e-300);
            }
            if (std::sqrt(gnorm2) <= 1e-10 * std::max(1.0, std::fabs(w_cur))) {
                conv = true;
                break;
            }
            // Barzilai-Borwein step from the previous iterate when available
            if (!u_prev.empty()) {
                double sy = 0.0, yy = 0.0;
                for (std::size_t i = 0; i < d.n; ++i) {
                    const double si = u[i] - u_prev[i];
                    const double yi = (g[i] - g_prev[i]) / std::max(op.M[i], 1e-300);
                    sy += si * yi * op.M[i];
                    yy += yi * yi * op.M[i];
                }
                if (yy > 0.0 && sy > 0.0) step0 = std::min(10.0, std::max(1e-6, sy / yy));
            }
            u_prev = u;
            g_prev = g;
            double step = step0;
            bool improved = false;
            for (int ls = 0; ls < 60; ++ls) {
                ut = u;
                for (std::size_t i = 0; i < d.n; ++i) {
                    ut[i] -= step * g[i] / std::max(op.M[i], 1e-300);
                    if (ut[i] < 0.0) ut[i] = 0.0;
                }
                const double m = mass_of(ut);
                if (m > 0.0) {
                    const double inv = 1.0 / std::sqrt(m);
                    for (auto& v : ut) v *= inv;
                    const double w_new = w_of(ut);
                    if (w_new < w_cur - 1e-15) {
                        u = ut;
                        w_cur = w_new;
                        improved = true;
                        break;
                    }
                }
                step *= 0.5;
            }
            if (!improved) {
                conv = true;
                break;
            }
        }
        if (w_cur < best.mu) {
            best.mu = w_cur;
            best.restarts_used = restart + 1;
            best.converged = conv;
            best.iterations = it;
            best.minimizer_f.values.assign(d.n, 0.0);
            best.minimizer_f.role = FieldRole::Potential;
            for (std::size_t i = 0; i < d.n; ++i)
                best.minimizer_f.values[i] = u[i] > 1e-150 ? -2.0 * std::log(u[i]) : 690.0;
        }
    }
    if (!best.converged && best.mu == 1e300)
        throw NonConvergence("mu minimization failed on every restart");
    return best;
}

// ---------------------------------------------------------------------------
// conjugate heat, integrated backward along a stored forward trajectory.
// The evolved unknown is the mass density m_i = M_i(t) e^{-f_i} (F-coupled)
// or M_i(t) (4 pi tau)^{-n/2} e^{-f_i} (W-coupled); both satisfy
// dm/dt = K(t) (m / M(t)), whose total is conserved exactly by RK4.

enum class CoupledMode { F, W };

// One backward leg: given f at s_next (time t1), produce f at s (time t0 < t1).
// `substep` is the internal RK4 step.
inline ScalarField conjugate_heat_step(const FlowState& s, const FlowState& s_next,
                                       const ScalarField& f_next, double tau_next,
                                       double substep, CoupledMode mode) {
    if (s.reduction != Reduction::Surface)
        throw UnsupportedReduction("conjugate heat runs on surface reductions");
    require_grid(s_next, f_next);
    const int n = manifold_dim(s);
    const double t0 = s.t, t1 = s_next.t;
    if (!(t1 > t0)) throw CflViolation("states must be consecutive in time");
    const std::size_t nn = s.n_nodes();

    auto state_at = [&](double t) {
        FlowState out = s;
        const double lam = (t - t0) / (t1 - t0);
        for (std::size_t i = 0; i < nn; ++i)
            out.u[i] = (1 - lam) * s.u[i] + lam * s_next.u[i];
        out.t = t;
        return out;
    };

    const double norm1 = mode == CoupledMode::W ? std::pow(4.0 * M_PI * tau_next, -0.5 * n) : 1.0;
    Vec m(nn);
    {
        const auto op1 = assemble_operators(s_next);
        for (std::size_t i = 0; i < nn; ++i)
            m[i] = op1.M[i] * norm1 * std::exp(-f_next.values[i]);
    }

    Vec v(nn), k1(nn), k2(nn), k3(nn), k4(nn), tmp(nn), kv(nn);
    auto rhs = [&](double tt, const Vec& mm, Vec& out) {
        const FlowState st = state_at(tt);
        const auto ops = assemble_operators(st);
        for (std::size_t i = 0; i < nn; ++i) v[i] = mm[i] / ops.M[i];
        ops.apply_K(v, kv);
        out.resize(nn);
        for (std::size_t i = 0; i < nn; ++i) out[i] = -kv[i];  // dm/dsigma, sigma = -t
    };

    double t = t1;
    while (t > t0 + 1e-14) {
        const double dt = std::min(substep, t - t0);
        {
            const FlowState mid = state_at(t - 0.5 * dt);
            double min_grr = 1e300;
            for (std::size_t i = 0; i < nn; ++i) min_grr = std::min(min_grr, g_rr(mid, i));
            const double hh = mid.periodic() ? mid.length / double(nn) : mid.h();
            if (dt > 0.25 * hh * hh * min_grr * (1.0 + 1e-9))
                throw CflViolation("conjugate-heat substep exceeds the diffusion limit");
        }
        rhs(t, m, k1);
        for (std::size_t i = 0; i < nn; ++i) tmp[i] = m[i] + 0.5 * dt * k1[i];
        rhs(t - 0.5 * dt, tmp, k2);
        for (std::size_t i = 0; i < nn; ++i) tmp[i] = m[i] + 0.5 * dt * k2[i];
        rhs(t - 0.5 * dt, tmp, k3);
        for (std::size_t i = 0; i < nn; ++i) tmp[i] = m[i] + dt * k3[i];
        rhs(t - dt, tmp, k4);
        for (std::size_t i = 0; i < nn; ++i)
            m[i] += dt / 6.0 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]);
        t -= dt;
    }

    const auto op0 = assemble_operators(s);
    ScalarField out;
    out.role = f_next.role;
    out.values.resize(nn);
    const double tau0 = tau_next + (t1 - t0);  // tau grows backward in time
    const double norm0 = mode == CoupledMode::W ? std::pow(4.0 * M_PI * tau0, -0.5 * n) : 1.0;
    for (std::size_t i = 0; i < nn; ++i) {
        const double dens0 = m[i] / op0.M[i];
        out.values[i] = -std::log(std::max(dens0 / norm0, 1e-300));
    }
    return out;
}

// Backward replay through a stored state sequence; returns f at every state.
inline std::vector<ScalarField> coupled_potential(const std::vector<FlowState>& states,
                                                  const ScalarField& f_terminal,
                                                  double tau_terminal, CoupledMode mode,
                                                  double substep) {
    std::vector<ScalarField> fs(states.size());
    fs.back() = f_terminal;
    for (std::size_t k = states.size() - 1; k-- > 0;) {
        const double tau_next =
            mode == CoupledMode::W ? tau_terminal + (states.back().t - states[k + 1].t) : 1.0;
        fs[k] = conjugate_heat_step(states[k], states[k + 1], fs[k + 1], tau_next, substep, mode);
    }
    return fs;
}

// conserved mass of the coupled system, measured with the dual-cell weights
// that the conservation law is exact for
inline double coupled_mass(const FlowState& s, const ScalarField& f, double tau,
                           CoupledMode mode) {
    const auto op = assemble_operators(s);
    const double norm =
        mode == CoupledMode::W ? std::pow(4.0 * M_PI * tau, -0.5 * manifold_dim(s)) : 1.0;
    double total = 0.0;
    for (std::size_t i = 0; i < op.n; ++i) total += op.M[i] * norm * std::exp(-f.values[i]);
    return total;
}

// ---------------------------------------------------------------------------
// pointwise Ric + Hess f quantities

// int |Ric + Hess f|^2 e^{-f} dV  (F-monotonicity density)
inline double ric_hess_integral(const FlowState& s, const ScalarField& f) {
    const auto d = discrete_geometry(s);
    Vec integrand(d.n, 0.0);
    for (std::size_t i = 0; i < d.n; ++i) {
        if (d.w[i] <= 1e-14) continue;  // pole nodes carry no measure
        MetricSample m;
        try {
            m = chart_sample(s, i);
        } catch (const OutOfChart&) {
            continue;
        }
        const auto cb = curvature(m);
        FieldPartials fp;
        fp.grad[0] = fd::d1(f.values, i, d.h, +1, d.periodic);
        fp.hess[0][0] = fd::d2(f.values, i, d.h, +1, d.periodic);
        const auto hl = hessian_laplacian(m, fp);
        double t2 = 0.0;
        for (int a = 0; a < m.dim; ++a)
            for (int b = 0; b < m.dim; ++b) {
                const double Tab = cb.ricci[a][b] + hl.hess[a][b];
                for (int p = 0; p < m.dim; ++p)
                    for (int q = 0; q < m.dim; ++q) {
                        const double Tpq = cb.ricci[p][q] + hl.hess[p][q];
                        t2 += m.g_inv[a][p] * m.g_inv[b][q] * Tab * Tpq;
                    }
            }
        integrand[i] = t2 * std::exp(-f.values[i]);
    }
    return d.integrate(integrand);
}

// int 2 tau |Ric + Hess f - g/(2 tau)|^2 (4 pi tau)^{-n/2} e^{-f} dV
inline double ric_hess_shrinker_integral(const FlowState& s, const ScalarField& f, double tau) {
    const auto d = discrete_geometry(s);
    const int n = manifold_dim(s);
    const double norm = std::pow(4.0 * M_PI * tau, -0.5 * n);
    Vec integrand(d.n, 0.0);
    for (std::size_t i = 0; i < d.n; ++i) {
        if (d.w[i] <= 1e-14) continue;
        MetricSample m;
        try {
            m = chart_sample(s, i);
        } catch (const OutOfChart&) {
            continue;
        }
        const auto cb = curvature(m);
        FieldPartials fp;
        fp.grad[0] = fd::d1(f.values, i, d.h, +1, d.periodic);
        fp.hess[0][0] = fd::d2(f.values, i, d.h, +1, d.periodic);
        const auto hl = hessian_laplacian(m, fp);
        double t2 = 0.0;
        for (int a = 0; a < m.dim; ++a)
            for (int b = 0; b < m.dim; ++b) {
                const double Tab = cb.ricci[a][b] + hl.hess[a][b] - m.g[a][b] / (2.0 * tau);
                for (int p = 0; p < m.dim; ++p)
                    for (int q = 0; q < m.dim; ++q) {
                        const double Tpq =
                            cb.ricci[p][q] + hl.hess[p][q] - m.g[p][q] / (2.0 * tau);
                        t2 += m.g_inv[a][p] * m.g_inv[b][q] * Tab * Tpq;
                    }
            }
        integrand[i] = 2.0 * tau * t2 * norm * std::exp(-f.values[i]);
    }
    return d.integrate(integrand);
}

// ---------------------------------------------------------------------------
// monotonicity probe

enum class MonotoneMode { F, W, Lambda };

struct MonotonicityResult {
    CheckReport monotone;
    CheckReport derivative_identity;  // F and W modes only
    Vec times;
    Vec values;
};

inline MonotonicityResult monotonicity_probe(const FlowTrajectory& traj, MonotoneMode mode,
                                             double tau_terminal = 1.0, double substep = 1e-5,
                                             double identity_rel_tol = 5e-3) {
    MonotonicityResult out;
    const auto& states = traj.states;
    out.monotone.name = "monotone";
    out.monotone.tolerance = 1e-8;
    out.derivative_identity.name = "derivative-identity";
    out.derivative_identity.tolerance = identity_rel_tol;

    if (mode == MonotoneMode::Lambda) {
        for (const auto& s : states) {
            out.times.push_back(s.t);
            out.values.push_back(lambda_eval(s).lambda);
        }
    } else {
        const CoupledMode cm = mode == MonotoneMode::F ? CoupledMode::F : CoupledMode::W;
        ScalarField f_term;
        const auto& last = states.back();
        f_term.values.assign(last.n_nodes(), 0.0);
        const double mass0 = coupled_mass(last, f_term, tau_terminal, cm);
        for (auto& v : f_term.values) v = std::log(mass0);
        const auto fs = coupled_potential(states, f_term, tau_terminal, cm, substep);
        for (std::size_t k = 0; k < states.size(); ++k) {
            out.times.push_back(states[k].t);
            if (mode == MonotoneMode::F) {
                out.values.push_back(f_eval(states[k], fs[k]));
            } else {
                const double tau_k = tau_terminal + (last.t - states[k].t);
                out.values.push_back(w_eval(states[k], fs[k], tau_k, false));
            }
        }
        for (std::size_t k = 1; k + 1 < states.size(); ++k) {
            const double lhs =
                (out.values[k + 1] - out.values[k - 1]) / (out.times[k + 1] - out.times[k - 1]);
            double rhs;
            if (mode == MonotoneMode::F) {
                rhs = 2.0 * ric_hess_integral(states[k], fs[k]);
            } else {
                const double tau_k = tau_terminal + (last.t - states[k].t);
                rhs = ric_hess_shrinker_integral(states[k], fs[k], tau_k);
            }
            const double rel = std::fabs(lhs - rhs) / std::max(1e-12, std::fabs(rhs));
            out.derivative_identity.record(-rel, out.times[k], k);
        }
    }
    for (std::size_t k = 0; k + 1 < out.values.size(); ++k)
        out.monotone.record(out.values[k + 1] - out.values[k], out.times[k], k);
    out.monotone.finalize();
    out.derivative_identity.finalize();
    return out;
}

// ---------------------------------------------------------------------------
// first variation of F and W against finite-difference quotients.
// Variations stay inside the conformal reduction class: v = c(x) g with a
// profile c, plus a potential variation h and (for W) a scale variation sigma.

struct VariationCheckResult {
    double analytic = 0.0;
    CheckReport report;        // margin = -relative error of the extrapolated quotient
    double richardson_slope = 0.0;  // ~1 confirms first-order convergence
};

namespace detail_var {

// delta F formula of the conformal variation at fixed quadrature
inline double delta_f_analytic(const FlowState& s, const ScalarField& f, const Vec& cprof,
                               const Vec& hprof) {
    const auto d = discrete_geometry(s);
    Vec integrand(d.n, 0.0);
    for (std::size_t i = 0; i < d.n; ++i) {
        if (d.w[i] <= 1e-14) continue;
        MetricSample m;
        try {
            m = chart_sample(s, i);
        } catch (const OutOfChart&) {
            continue;
        }
        const auto cb = curvature(m);
        FieldPartials fp;
        fp.grad[0] = fd::d1(f.values, i, d.h, +1, d.periodic);
        fp.hess[0][0] = fd::d2(f.values, i, d.h, +1, d.periodic);
        const auto hl = hessian_laplacian(m, fp);
        // v_ij = c g_ij: v^{ij}(R_ij + Hess_ij) = c (R + Lap f); tr v = c n
        const double vdotT = cprof[i] * (cb.scalar + hl.lap);
        const double trv = cprof[i] * double(m.dim);
        const double core = 2.0 * hl.lap - d.grad2(f.values, i) + d.R[i];
        integrand[i] =
            std::exp(-f.values[i]) * (-vdotT + (0.5 * trv - hprof[i]) * core);
    }
    return d.integrate(integrand);
}

inline double delta_w_analytic(const FlowState& s, const ScalarField& f, double tau,
                               const Vec& cprof, const Vec& hprof, double sigma) {
    const auto d = discrete_geometry(s);
    const int n = manifold_dim(s);
    const double norm = std::pow(4.0 * M_PI * tau, -0.5 * n);
    Vec integrand(d.n, 0.0);
    for (std::size_t i = 0; i < d.n; ++i) {
        if (d.w[i] <= 1e-14) continue;
        MetricSample m;
        try {
            m = chart_sample(s, i);
        } catch (const OutOfChart&) {
            continue;
        }
        const auto cb = curvature(m);
        FieldPartials fp;
        fp.grad[0] = fd::d1(f.values, i, d.h, +1, d.periodic);
        fp.hess[0][0] = fd::d2(f.values, i, d.h, +1, d.periodic);
        const auto hl = hessian_laplacian(m, fp);
        const double g2 = d.grad2(f.values, i);
        const double vdotT = cprof[i] * (cb.scalar + hl.lap);
        const double trv = cprof[i] * double(m.dim);
        const double bracket = tau * (2.0 * hl.lap - g2 + d.R[i]) + f.values[i] - n;
        integrand[i] = (sigma * (d.R[i] + g2) - tau * vdotT + hprof[i] +
                        bracket * (0.5 * trv - hprof[i] - n * sigma / (2.0 * tau))) *
                       norm * std::exp(-f.values[i]);
    }
    return d.integrate(integrand);
}

inline FlowState perturb_conformal(const FlowState& s, const Vec& cprof, double eps) {
    FlowState out = s;
    for (std::size_t i = 0; i < s.u.size(); ++i)
        out.u[i] = s.u[i] + 0.5 * std::log(1.0 + eps * cprof[i]);
    return out;
}

}  // namespace detail_var

// compares the Thm-6.1-style analytic delta F against one-sided quotients
// over eps_list (descending); Richardson extrapolation sharpens the quotient
inline VariationCheckResult first_variation_check_f(const FlowState& s, const ScalarField& f,
                                                    const Vec& cprof, const Vec& hprof,
                                                    const Vec& eps_list, double rel_tol = 1e-4) {
    VariationCheckResult out;
    out.analytic = detail_var::delta_f_analytic(s, f, cprof, hprof);
    const double f0 = f_eval(s, f);
    Vec quotients;
    for (double eps : eps_list) {
        FlowState se = detail_var::perturb_conformal(s, cprof, eps);
        ScalarField fe = f;
        for (std::size_t i = 0; i < fe.values.size(); ++i) fe.values[i] += eps * hprof[i];
        quotients.push_back((f_eval(se, fe) - f0) / eps);
    }
    // slope of |quotient - analytic| vs eps in log-log
    double slope = 0.0;
    int cnt = 0;
    for (std::size_t k = 0; k + 1 < eps_list.size(); ++k) {
        const double e1 = std::fabs(quotients[k] - out.analytic);
        const double e2 = std::fabs(quotients[k + 1] - out.analytic);
        if (e1 > 1e-14 && e2 > 1e-14) {
            slope += std::log(e1 / e2) / std::log(eps_list[k] / eps_list[k + 1]);
            ++cnt;
        }
    }
    out.richardson_slope = cnt ? slope / cnt : 1.0;
    const std::size_t last = eps_list.size() - 1;
    const double extrap =
        last >= 1 ? 2.0 * quotients[last] - quotients[last - 1] : quotients[last];
    const double rel =
        std::fabs(extrap - out.analytic) / std::max(1e-12, std::fabs(out.analytic));
    out.report.name = "delta-F";
    out.report.tolerance = rel_tol;
    out.report.record(-rel, s.t, 0);
    out.report.finalize();
    return out;
}

inline VariationCheckResult first_variation_check_w(const FlowState& s, const ScalarField& f,
                                                    double tau, const Vec& cprof,
                                                    const Vec& hprof, double sigma,
                                                    const Vec& eps_list, double rel_tol = 1e-4) {
    VariationCheckResult out;
    out.analytic = detail_var::delta_w_analytic(s, f, tau, cprof, hprof, sigma);
    const double w0 = w_eval(s, f, tau, false);
    Vec quotients;
    for (double eps : eps_list) {
        FlowState se = detail_var::perturb_conformal(s, cprof, eps);
        ScalarField fe = f;
        for (std::size_t i = 0; i < fe.values.size(); ++i) fe.values[i] += eps * hprof[i];
        quotients.push_back((w_eval(se, fe, tau + eps * sigma, false) - w0) / eps);
    }
    double slope = 0.0;
    int cnt = 0;
    for (std::size_t k = 0; k + 1 < eps_list.size(); ++k) {
        const double e1 = std::fabs(quotients[k] - out.analytic);
        const double e2 = std::fabs(quotients[k + 1] - out.analytic);
        if (e1 > 1e-14 && e2 > 1e-14) {
            slope += std::log(e1 / e2) / std::log(eps_list[k] / eps_list[k + 1]);
            ++cnt;
        }
    }
    out.richardson_slope = cnt ? slope / cnt : 1.0;
    const std::size_t last = eps_list.size() - 1;
    const double extrap =
        last >= 1 ? 2.0 * quotients[last] - quotients[last - 1] : quotients[last];
    const double rel =
        std::fabs(extrap - out.analytic) / std::max(1e-12, std::fabs(out.analytic));
    out.report.name = "delta-W";
    out.report.tolerance = rel_tol;
    out.report.record(-rel, s.t, 0);
    out.report.finalize();
    return out;
}

// ---------------------------------------------------------------------------
// eigenvalue evolution rates (general variation, and the Ricci flow case)

// d lambda/dt = -int v_ij grad^i f grad^j f + (lambda/2) ... for the reduced
// conformal setting v_ij = c g_ij + beta * (-2 Ric): both terms contract
// cleanly against grad f along the profile direction.
inline double eigenvalue_rate_general(const FlowState& s, const Vec& cprof, double ric_coeff,
                                      const Vec& f_alpha, double lambda) {
    const auto d = discrete_geometry(s);
    Vec t1(d.n, 0.0), t2(d.n, 0.0), t3(d.n, 0.0);
    for (std::size_t i = 0; i < d.n; ++i) {
        if (d.w[i] <= 1e-14) continue;
        MetricSample m;
        try {
            m = chart_sample(s, i);
        } catch (const OutOfChart&) {
            continue;
        }
        const auto cb = curvature(m);
        const double df = fd::d1(f_alpha, i, d.h, +1, d.periodic);
        const double grad2 = df * df / d.grr[i];
        // v(grad f, grad f) with v = c g + ric_coeff * Ric
        const double ric_rr = cb.ricci[0][0] / m.g[0][0];  // Ric(e_r, e_r), unit radial
        const double v_gradgrad = cprof[i] * grad2 + ric_coeff * ric_rr * grad2;
        // tr v = c n + ric_coeff R
        const double trv = cprof[i] * double(m.dim) + ric_coeff * cb.scalar;
        t1[i] = -v_gradgrad;
        t2[i] = -0.5 * lambda * trv * sqr(f_alpha[i]);
        t3[i] = 0.5 * trv * grad2;
    }
    return d.integrate(t1) + d.integrate(t2) + d.integrate(t3);
}

// Ricci-flow case v = -2 Ric: rate = 2 int Ric(grad f, grad f)
//                                  + lambda int R f^2 - int R |grad f|^2
inline double eigenvalue_rate_ricci_flow(const FlowState& s, const Vec& f_alpha, double lambda) {
    return eigenvalue_rate_general(s, Vec(s.n_nodes(), 0.0), -2.0, f_alpha, lambda);
}

}  // namespace ricci
