#pragma once

#include <cmath>
#include <string>

#include "ricci/common.hpp"
#include "ricci/tensor.hpp"

// Closed-form metric families and exact flows. These are the oracles the
// rest of the stack is checked against, so every chart here carries analytic
// partials.

namespace ricci {

enum class FamilyKind { Flat, Torus, Sphere, Hyperbolic, Cigar, Nil, Sol };

inline std::string family_name(FamilyKind k) {
    switch (k) {
        case FamilyKind::Flat: return "flat";
        case FamilyKind::Torus: return "torus";
        case FamilyKind::Sphere: return "sphere";
        case FamilyKind::Hyperbolic: return "hyperbolic";
        case FamilyKind::Cigar: return "cigar";
        case FamilyKind::Nil: return "nil";
        case FamilyKind::Sol: return "sol";
    }
    return "?";
}

inline FamilyKind family_from_name(const std::string& s) {
    if (s == "flat") return FamilyKind::Flat;
    if (s == "torus") return FamilyKind::Torus;
    if (s == "sphere") return FamilyKind::Sphere;
    if (s == "hyperbolic") return FamilyKind::Hyperbolic;
    if (s == "cigar") return FamilyKind::Cigar;
    if (s == "nil") return FamilyKind::Nil;
    if (s == "sol") return FamilyKind::Sol;
    throw SchemaError("unknown family: " + s);
}

struct MetricFamily {
    FamilyKind kind = FamilyKind::Flat;
    int dim = 2;
    Vec params;  // sphere/hyperbolic: {r}; torus: {side}; cigar: {a}; nil/sol: {A,B,C}

    double param(std::size_t i, double dflt) const {
        return i < params.size() ? params[i] : dflt;
    }
};

namespace detail {
constexpr double kChartEps = 1e-9;
}

inline MetricSample sample(const MetricFamily& fam, const ChartPoint& p) {
    const int d = fam.dim;
    if (p.dim != d) throw OutOfChart("point dimension mismatch");
    Mat3 g{};
    Arr3 dg{};
    Arr4 d2g{};
    switch (fam.kind) {
        case FamilyKind::Flat:
        case FamilyKind::Torus: {
            for (int i = 0; i < d; ++i) g[i][i] = 1.0;
            break;
        }
        case FamilyKind::Sphere: {
            const double r2 = sqr(fam.param(0, 1.0));
            if (d == 1) {
                g[0][0] = r2;
            } else if (d == 2) {
                const double th = p.x[0];
                if (std::sin(th) <= detail::kChartEps) throw OutOfChart("polar chart pole");
                g[0][0] = r2;
                g[1][1] = r2 * sqr(std::sin(th));
                dg[0][1][1] = r2 * std::sin(2 * th);
                d2g[0][0][1][1] = 2 * r2 * std::cos(2 * th);
            } else {
                const double ch = p.x[0], th = p.x[1];
                if (std::sin(ch) <= detail::kChartEps || std::sin(th) <= detail::kChartEps)
                    throw OutOfChart("polar chart pole");
                const double s2c = sqr(std::sin(ch)), s2t = sqr(std::sin(th));
                g[0][0] = r2;
                g[1][1] = r2 * s2c;
                g[2][2] = r2 * s2c * s2t;
                dg[0][1][1] = r2 * std::sin(2 * ch);
                dg[0][2][2] = r2 * std::sin(2 * ch) * s2t;
                dg[1][2][2] = r2 * s2c * std::sin(2 * th);
                d2g[0][0][1][1] = 2 * r2 * std::cos(2 * ch);
                d2g[0][0][2][2] = 2 * r2 * std::cos(2 * ch) * s2t;
                d2g[1][1][2][2] = 2 * r2 * s2c * std::cos(2 * th);
                d2g[0][1][2][2] = d2g[1][0][2][2] = r2 * std::sin(2 * ch) * std::sin(2 * th);
            }
            break;
        }
        case FamilyKind::Hyperbolic: {
            const double r2 = sqr(fam.param(0, 1.0));
            if (d == 1) {
                g[0][0] = r2;
            } else if (d == 2) {
                const double rho = p.x[0];
                if (std::sinh(rho) <= detail::kChartEps) throw OutOfChart("polar chart origin");
                g[0][0] = r2;
                g[1][1] = r2 * sqr(std::sinh(rho));
                dg[0][1][1] = r2 * std::sinh(2 * rho);
                d2g[0][0][1][1] = 2 * r2 * std::cosh(2 * rho);
            } else {
                const double rho = p.x[0], th = p.x[1];
                if (std::sinh(rho) <= detail::kChartEps || std::sin(th) <= detail::kChartEps)
                    throw OutOfChart("polar chart origin");
                const double sh2 = sqr(std::sinh(rho)), s2t = sqr(std::sin(th));
                g[0][0] = r2;
                g[1][1] = r2 * sh2;
                g[2][2] = r2 * sh2 * s2t;
                dg[0][1][1] = r2 * std::sinh(2 * rho);
                dg[0][2][2] = r2 * std::sinh(2 * rho) * s2t;
                dg[1][2][2] = r2 * sh2 * std::sin(2 * th);
                d2g[0][0][1][1] = 2 * r2 * std::cosh(2 * rho);
                d2g[0][0][2][2] = 2 * r2 * std::cosh(2 * rho) * s2t;
                d2g[1][1][2][2] = 2 * r2 * sh2 * std::cos(2 * th);
                d2g[0][1][2][2] = d2g[1][0][2][2] = r2 * std::sinh(2 * rho) * std::sin(2 * th);
            }
            break;
        }
        case FamilyKind::Cigar: {
            if (d != 2) throw OutOfChart("cigar is 2d");
            const double a = fam.param(0, 1.0);
            const double x = p.x[0], y = p.x[1];
            const double F = 1.0 / (a + x * x + y * y);
            const double xk[2] = {x, y};
            for (int i = 0; i < 2; ++i) g[i][i] = F;
            for (int k = 0; k < 2; ++k) {
                const double Fk = -2.0 * xk[k] * F * F;
                for (int i = 0; i < 2; ++i) dg[k][i][i] = Fk;
            }
            for (int k = 0; k < 2; ++k)
                for (int l = 0; l < 2; ++l) {
                    const double Fkl = -2.0 * (k == l ? 1.0 : 0.0) * F * F +
                                       8.0 * xk[k] * xk[l] * F * F * F;
                    for (int i = 0; i < 2; ++i) d2g[k][l][i][i] = Fkl;
                }
            break;
        }
        case FamilyKind::Nil: {
            if (d != 3) throw OutOfChart("nil is 3d");
            const double A = fam.param(0, 1.0), B = fam.param(1, 1.0), C = fam.param(2, 1.0);
            const double x = p.x[0];
            g[0][0] = A;
            g[1][1] = B + C * x * x;
            g[1][2] = g[2][1] = -C * x;
            g[2][2] = C;
            dg[0][1][1] = 2 * C * x;
            dg[0][1][2] = dg[0][2][1] = -C;
            d2g[0][0][1][1] = 2 * C;
            break;
        }
        case FamilyKind::Sol: {
            if (d != 3) throw OutOfChart("sol is 3d");
            const double A = fam.param(0, 1.0), B = fam.param(1, 1.0), C = fam.param(2, 1.0);
            const double z = p.x[2];
            g[0][0] = A * std::exp(2 * z);
            g[1][1] = B * std::exp(-2 * z);
            g[2][2] = C;
            dg[2][0][0] = 2 * A * std::exp(2 * z);
            dg[2][1][1] = -2 * B * std::exp(-2 * z);
            d2g[2][2][0][0] = 4 * A * std::exp(2 * z);
            d2g[2][2][1][1] = 4 * B * std::exp(-2 * z);
            break;
        }
    }
    return MetricSample(d, g, dg, d2g);
}

// Closed-form scalar curvature, used as the oracle side of tests.
inline double closed_form_scalar(const MetricFamily& fam, const ChartPoint& p) {
    const int n = fam.dim;
    switch (fam.kind) {
        case FamilyKind::Flat:
        case FamilyKind::Torus: return 0.0;
        case FamilyKind::Sphere: return n * (n - 1) / sqr(fam.param(0, 1.0));
        case FamilyKind::Hyperbolic: return -n * (n - 1) / sqr(fam.param(0, 1.0));
        case FamilyKind::Cigar: {
            const double a = fam.param(0, 1.0);
            return 4.0 * a / (a + sqr(p.x[0]) + sqr(p.x[1]));
        }
        case FamilyKind::Nil: {
            const double A = fam.param(0, 1.0), B = fam.param(1, 1.0), C = fam.param(2, 1.0);
            return -C / (2.0 * A * B);
        }
        case FamilyKind::Sol: {
            // unit Sol only; the A=B case scales as -2/C
            return -2.0 / fam.param(2, 1.0);
        }
    }
    return 0.0;
}

struct ExactFlow {
    MetricFamily family;   // family at time t
    double t = 0.0;
    double scale = 1.0;            // rho^2(t) relative to t = 0
    double extinction_time = -1.0; // < 0 when none
};

inline double sphere_extinction_time(int n, double r0) {
    return r0 * r0 / (2.0 * (n - 1));
}

inline ExactFlow exact_flow(const MetricFamily& fam, double t) {
    ExactFlow out;
    out.family = fam;
    out.t = t;
    switch (fam.kind) {
        case FamilyKind::Sphere: {
            const double r0 = fam.param(0, 1.0);
            const int n = fam.dim;
            if (n < 2) break;
            const double T = sphere_extinction_time(n, r0);
            out.extinction_time = T;
            const double r2 = r0 * r0 - 2.0 * (n - 1) * t;
            if (t >= T || r2 <= 0.0) throw BeyondExtinction("sphere extinct at t = " + std::to_string(T));
            out.scale = r2 / (r0 * r0);
            out.family.params = {std::sqrt(r2)};
            break;
        }
        case FamilyKind::Hyperbolic: {
            const double r0 = fam.param(0, 1.0);
            const int n = fam.dim;
            if (n < 2) break;
            const double r2 = r0 * r0 + 2.0 * (n - 1) * t;
            if (r2 <= 0.0) throw BeyondExtinction("hyperbolic family undefined at this t");
            out.scale = r2 / (r0 * r0);
            out.family.params = {std::sqrt(r2)};
            break;
        }
        case FamilyKind::Cigar: {
            // steady soliton: metric at time t is delta/(e^{4t} a0 + rho^2)
            const double a0 = fam.param(0, 1.0);
            out.family.params = {a0 * std::exp(4.0 * t)};
            out.scale = 1.0;
            break;
        }
        case FamilyKind::Flat:
        case FamilyKind::Torus:
            break;
        case FamilyKind::Nil:
        case FamilyKind::Sol:
            throw RangeError("no closed-form flow for nil/sol; integrate the homogeneous ODE");
    }
    return out;
}

// Einstein rescaling rho^2(t) = 1 - 2 lambda t.
inline double einstein_scale(double lambda, double t) {
    const double rho2 = 1.0 - 2.0 * lambda * t;
    if (rho2 <= 0.0) throw BeyondExtinction("einstein family extinct");
    return rho2;
}

// -------------------------------------------------------------------------
// Homogeneous 3-metrics in a Milnor frame: [e2,e3] = l1 e1, [e3,e1] = l2 e2,
// [e1,e2] = l3 e3 with diagonal metric coefficients (A,B,C).

struct HomogeneousState {
    std::array<double, 3> brackets{};  // (l1, l2, l3)
    double A = 1.0, B = 1.0, C = 1.0;

    static HomogeneousState nil(double A = 1, double B = 1, double C = 1) {
        return {{0.0, 0.0, 1.0}, A, B, C};
    }
    static HomogeneousState sol(double A = 1, double B = 1, double C = 1) {
        return {{1.0, -1.0, 0.0}, A, B, C};
    }
    static HomogeneousState flat(double A = 1, double B = 1, double C = 1) {
        return {{0.0, 0.0, 0.0}, A, B, C};
    }
};

struct HomogeneousRicci {
    std::array<double, 3> ricci_diag{};  // principal Ricci curvatures (orthonormal frame)
    double scalar = 0.0;
};

inline HomogeneousRicci homogeneous_ricci(const HomogeneousState& hs) {
    const auto& l = hs.brackets;
    const bool is_nil = l[0] == 0.0 && l[1] == 0.0 && l[2] == 1.0;
    const bool is_sol = l[0] == 1.0 && l[1] == -1.0 && l[2] == 0.0;
    const bool is_flat = l[0] == 0.0 && l[1] == 0.0 && l[2] == 0.0;
    if (!is_nil && !is_sol && !is_flat)
        throw UnsupportedBrackets("only nil, sol and flat bracket triples are supported");
    if (hs.A <= 0 || hs.B <= 0 || hs.C <= 0)
        throw NonPositiveDefinite("homogeneous metric coefficients must be positive");

    const double coef[3] = {hs.A, hs.B, hs.C};
    double mu[3];
    for (int i = 0; i < 3; ++i) {
        const int j = (i + 1) % 3, k = (i + 2) % 3;
        mu[i] = l[i] * std::sqrt(coef[i] / (coef[j] * coef[k]));
    }
    const double half_sum = 0.5 * (mu[0] + mu[1] + mu[2]);
    double sigma[3];
    for (int i = 0; i < 3; ++i) sigma[i] = half_sum - mu[i];
    HomogeneousRicci out;
    for (int i = 0; i < 3; ++i) {
        const int j = (i + 1) % 3, k = (i + 2) % 3;
        out.ricci_diag[i] = 2.0 * sigma[j] * sigma[k];
        out.scalar += out.ricci_diag[i];
    }
    return out;
}

// -------------------------------------------------------------------------
// Gaussian shrinker data on flat R^n.

struct GaussianData {
    int n = 2;
    double tau = 1.0;
    bool normalized = true;  // adds (n/2) log(4 pi tau) so the measure has unit mass

    double f(double rho) const {
        double v = rho * rho / (4.0 * tau);
        if (normalized) v += 0.5 * n * std::log(4.0 * M_PI * tau);
        return v;
    }
    double grad_norm2(double rho) const { return sqr(rho / (2.0 * tau)); }
    double lap() const { return 0.5 * n / tau; }
    // weight of the measure (4 pi tau)^{-n/2} e^{-f_unnormalized}
    double normalization() const { return std::pow(4.0 * M_PI * tau, -0.5 * n); }
    double cutoff_radius() const { return 12.0 * std::sqrt(tau); }
};

inline GaussianData gaussian_data(int n, double tau, bool normalized = true) {
    if (tau <= 0.0) throw NonPositiveTau("gaussian data needs tau > 0");
    return GaussianData{n, tau, normalized};
}

}  // namespace ricci
