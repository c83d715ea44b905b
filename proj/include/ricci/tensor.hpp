#pragma once

#include <array>
#include <cmath>
#include <functional>

#include "ricci/common.hpp"
#include "ricci/linalg.hpp"

// Pointwise curvature from metric components in a coordinate chart, d <= 3.
//
// Sign conventions: riemann[i][j][k][l] is normalized so that the sectional
// curvature of the coordinate plane (i,j) is riemann[i][j][i][j] divided by
// g_ii g_jj - g_ij^2, and ricci_ij = g^kl riemann[i][k][j][l]. Round spheres
// come out positive. Curvature-operator eigenvalues alpha are normalized so
// the unit round 3-sphere gives alpha = (2,2,2), i.e. twice the sectional
// curvature of the complementary plane.

namespace ricci {

constexpr int kMaxDim = 3;

using Mat3 = std::array<std::array<double, kMaxDim>, kMaxDim>;
using Arr3 = std::array<Mat3, kMaxDim>;        // [k][i][j]
using Arr4 = std::array<Arr3, kMaxDim>;        // [k][l][i][j]

inline Mat3 zero_mat() { return Mat3{}; }

struct ChartPoint {
    int dim = 0;
    std::array<double, kMaxDim> x{};
};

struct FieldPartials {
    std::array<double, kMaxDim> grad{};  // d_i f
    Mat3 hess{};                         // d_i d_j f (coordinate, pre-connection)
};

struct MetricSample {
    int dim = 0;
    Mat3 g{};
    Mat3 g_inv{};
    Arr3 dg{};   // dg[k][i][j] = d_k g_ij
    Arr4 d2g{};  // d2g[k][l][i][j] = d_k d_l g_ij

    MetricSample() = default;
    MetricSample(int d, const Mat3& g_, const Arr3& dg_, const Arr4& d2g_)
        : dim(d), g(g_), dg(dg_), d2g(d2g_) {
        validate();
        g_inv = invert();
    }

  private:
    void validate() const {
        for (int i = 0; i < dim; ++i)
            for (int j = 0; j < dim; ++j) {
                if (!finite(g[i][j])) throw NonPositiveDefinite("metric has non-finite entries");
                if (std::fabs(g[i][j] - g[j][i]) > 1e-12 * (1.0 + std::fabs(g[i][j])))
                    throw NonPositiveDefinite("metric not symmetric");
            }
        // Sylvester criterion
        double m1 = g[0][0];
        if (m1 <= 0.0) throw NonPositiveDefinite("metric not positive definite");
        if (dim >= 2) {
            double m2 = g[0][0] * g[1][1] - g[0][1] * g[1][0];
            if (m2 <= 0.0) throw NonPositiveDefinite("metric not positive definite");
        }
        if (dim >= 3) {
            if (det3() <= 0.0) throw NonPositiveDefinite("metric not positive definite");
        }
        for (int k = 0; k < dim; ++k)
            for (int i = 0; i < dim; ++i)
                for (int j = 0; j < dim; ++j)
                    if (std::fabs(dg[k][i][j] - dg[k][j][i]) > 1e-10)
                        throw NonPositiveDefinite("dg not symmetric in metric indices");
    }

    double det3() const {
        return g[0][0] * (g[1][1] * g[2][2] - g[1][2] * g[2][1]) -
               g[0][1] * (g[1][0] * g[2][2] - g[1][2] * g[2][0]) +
               g[0][2] * (g[1][0] * g[2][1] - g[1][1] * g[2][0]);
    }

    Mat3 invert() const {
        Mat3 inv{};
        if (dim == 1) {
            inv[0][0] = 1.0 / g[0][0];
        } else if (dim == 2) {
            const double det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
            inv[0][0] = g[1][1] / det;
            inv[1][1] = g[0][0] / det;
            inv[0][1] = inv[1][0] = -g[0][1] / det;
        } else {
            const double det = det3();
            inv[0][0] = (g[1][1] * g[2][2] - g[1][2] * g[2][1]) / det;
            inv[0][1] = (g[0][2] * g[2][1] - g[0][1] * g[2][2]) / det;
            inv[0][2] = (g[0][1] * g[1][2] - g[0][2] * g[1][1]) / det;
            inv[1][1] = (g[0][0] * g[2][2] - g[0][2] * g[2][0]) / det;
            inv[1][2] = (g[0][2] * g[1][0] - g[0][0] * g[1][2]) / det;
            inv[2][2] = (g[0][0] * g[1][1] - g[0][1] * g[1][0]) / det;
            inv[1][0] = inv[0][1];
            inv[2][0] = inv[0][2];
            inv[2][1] = inv[1][2];
        }
        return inv;
    }

  public:
    double det() const {
        if (dim == 1) return g[0][0];
        if (dim == 2) return g[0][0] * g[1][1] - g[0][1] * g[1][0];
        return det3();
    }
    double sqrt_det() const { return std::sqrt(det()); }
};

struct CurvatureBundle {
    int dim = 0;
    Arr3 gamma{};                             // gamma[k][i][j] = Gamma^k_ij
    std::array<Arr3, kMaxDim> riemann{};      // riemann[i][j][k][l]
    Mat3 ricci{};
    double scalar = 0.0;
    std::array<double, 3> sectional{};        // coordinate planes (0,1),(0,2),(1,2)
    std::array<double, 3> alpha{};            // d == 3 only, ascending
};

struct VariationField {
    Mat3 v{};        // metric variation v_ij
    Arr3 dv{};       // dv[k][i][j] = d_k v_ij
    Arr4 d2v{};      // d2v[k][l][i][j]
    double h = 0.0;  // potential variation
    double trace_v = 0.0;

    static VariationField make(const MetricSample& m, const Mat3& v, const Arr3& dv,
                               const Arr4& d2v, double h = 0.0) {
        VariationField w;
        w.v = v;
        w.dv = dv;
        w.d2v = d2v;
        w.h = h;
        for (int i = 0; i < m.dim; ++i)
            for (int j = 0; j < m.dim; ++j) {
                if (std::fabs(v[i][j] - v[j][i]) > 1e-12)
                    throw NonPositiveDefinite("variation not symmetric");
                w.trace_v += m.g_inv[i][j] * v[i][j];
            }
        return w;
    }
};

struct VariationResponse {
    double delta_R = 0.0;
    double delta_dV_factor = 0.0;  // v/2
    Arr3 delta_gamma{};
};

inline Arr3 christoffel(const MetricSample& m) {
    Arr3 gam{};
    const int d = m.dim;
    for (int k = 0; k < d; ++k)
        for (int i = 0; i < d; ++i)
            for (int j = i; j < d; ++j) {
                double s = 0.0;
                for (int l = 0; l < d; ++l)
                    s += m.g_inv[k][l] * (m.dg[i][j][l] + m.dg[j][i][l] - m.dg[l][i][j]);
                gam[k][i][j] = 0.5 * s;
                gam[k][j][i] = gam[k][i][j];
            }
    return gam;
}

namespace detail {

// d_m g^kl = -g^ka (d_m g_ab) g^bl
inline Arr3 d_g_inv(const MetricSample& m) {
    Arr3 out{};
    const int d = m.dim;
    for (int mm = 0; mm < d; ++mm)
        for (int k = 0; k < d; ++k)
            for (int l = 0; l < d; ++l) {
                double s = 0.0;
                for (int a = 0; a < d; ++a)
                    for (int b = 0; b < d; ++b)
                        s += m.g_inv[k][a] * m.dg[mm][a][b] * m.g_inv[b][l];
                out[mm][k][l] = -s;
            }
    return out;
}

// d_m Gamma^k_ij
inline Arr4 d_christoffel(const MetricSample& m) {
    Arr4 out{};
    const int d = m.dim;
    const Arr3 dginv = d_g_inv(m);
    for (int mm = 0; mm < d; ++mm)
        for (int k = 0; k < d; ++k)
            for (int i = 0; i < d; ++i)
                for (int j = 0; j < d; ++j) {
                    double s = 0.0;
                    for (int l = 0; l < d; ++l) {
                        s += dginv[mm][k][l] * (m.dg[i][j][l] + m.dg[j][i][l] - m.dg[l][i][j]);
                        s += m.g_inv[k][l] * (m.d2g[mm][i][j][l] + m.d2g[mm][j][i][l] -
                                              m.d2g[mm][l][i][j]);
                    }
                    out[mm][k][i][j] = 0.5 * s;
                }
    return out;
}

// Gram-Schmidt of the coordinate basis against g; rows are frame vectors.
inline Mat3 orthonormal_frame(const MetricSample& m) {
    const int d = m.dim;
    Mat3 e{};
    for (int a = 0; a < d; ++a) {
        std::array<double, kMaxDim> v{};
        v[a] = 1.0;
        for (int b = 0; b < a; ++b) {
            double ip = 0.0;
            for (int i = 0; i < d; ++i)
                for (int j = 0; j < d; ++j) ip += m.g[i][j] * v[i] * e[b][j];
            for (int i = 0; i < d; ++i) v[i] -= ip * e[b][i];
        }
        double nn = 0.0;
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) nn += m.g[i][j] * v[i] * v[j];
        const double inv = 1.0 / std::sqrt(nn);
        for (int i = 0; i < d; ++i) e[a][i] = v[i] * inv;
    }
    return e;
}

}  // namespace detail

inline CurvatureBundle curvature(const MetricSample& m) {
    CurvatureBundle cb;
    const int d = m.dim;
    cb.dim = d;
    cb.gamma = christoffel(m);
    const Arr4 dgam = detail::d_christoffel(m);

    // standard R^l_ijk, then lower and flip sign into the stored convention
    std::array<Arr3, kMaxDim> rup{};  // rup[l][i][j][k] = R^l_ijk
    for (int l = 0; l < d; ++l)
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j)
                for (int k = 0; k < d; ++k) {
                    double r = dgam[i][l][j][k] - dgam[j][l][i][k];
                    for (int a = 0; a < d; ++a)
                        r += cb.gamma[l][i][a] * cb.gamma[a][j][k] -
                             cb.gamma[l][j][a] * cb.gamma[a][i][k];
                    rup[l][i][j][k] = r;
                }
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
            for (int k = 0; k < d; ++k)
                for (int l = 0; l < d; ++l) {
                    double s = 0.0;
                    for (int mth = 0; mth < d; ++mth) s += m.g[l][mth] * rup[mth][i][j][k];
                    cb.riemann[i][j][k][l] = -s;
                }

    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
            double s = 0.0;
            for (int k = 0; k < d; ++k)
                for (int l = 0; l < d; ++l) s += m.g_inv[k][l] * cb.riemann[i][k][j][l];
            cb.ricci[i][j] = s;
        }

    cb.scalar = 0.0;
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) cb.scalar += m.g_inv[i][j] * cb.ricci[i][j];

    int plane = 0;
    for (int i = 0; i < d; ++i)
        for (int j = i + 1; j < d; ++j) {
            const double denom = m.g[i][i] * m.g[j][j] - m.g[i][j] * m.g[i][j];
            cb.sectional[plane++] = cb.riemann[i][j][i][j] / denom;
        }

    if (d == 3) {
        const Mat3 e = detail::orthonormal_frame(m);
        auto rf = [&](int a, int b, int c, int dd) {
            double s = 0.0;
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j)
                    for (int k = 0; k < 3; ++k)
                        for (int l = 0; l < 3; ++l)
                            s += cb.riemann[i][j][k][l] * e[a][i] * e[b][j] * e[c][k] * e[dd][l];
            return s;
        };
        static constexpr int pair_a[3] = {1, 2, 0};
        static constexpr int pair_b[3] = {2, 0, 1};
        Matrix op(3, 3);
        for (int I = 0; I < 3; ++I)
            for (int J = 0; J < 3; ++J)
                op(I, J) = 2.0 * rf(pair_a[I], pair_b[I], pair_a[J], pair_b[J]);
        const Vec ev = symmetric_eigenvalues(op);
        for (int i = 0; i < 3; ++i) cb.alpha[i] = ev[i];
    }
    return cb;
}

struct HessLap {
    Mat3 hess{};
    double lap = 0.0;
};

inline HessLap hessian_laplacian(const MetricSample& m, const FieldPartials& f) {
    HessLap out;
    const Arr3 gam = christoffel(m);
    const int d = m.dim;
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
            double s = f.hess[i][j];
            for (int k = 0; k < d; ++k) s -= f.grad[k] * gam[k][i][j];
            out.hess[i][j] = s;
        }
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) out.lap += m.g_inv[i][j] * out.hess[i][j];
    return out;
}

// Linear responses of R, the volume form, and Gamma to a metric variation.
// delta_R = -Lap(tr v) + div div v - <Ric, v>.
inline VariationResponse variation_responses(const MetricSample& m, const VariationField& w) {
    VariationResponse out;
    const int d = m.dim;
    const CurvatureBundle cb = curvature(m);
    const Arr3& gam = cb.gamma;
    const Arr4 dgam = detail::d_christoffel(m);
    const Arr3 dginv = detail::d_g_inv(m);

    out.delta_dV_factor = 0.5 * w.trace_v;

    // delta Gamma^k_ij = 1/2 g^kl (cov_i v_jl + cov_j v_il - cov_l v_ij)
    Arr3 cov{};  // cov[a][i][j] = nabla_a v_ij
    for (int a = 0; a < d; ++a)
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) {
                double s = w.dv[a][i][j];
                for (int p = 0; p < d; ++p)
                    s -= gam[p][a][i] * w.v[p][j] + gam[p][a][j] * w.v[i][p];
                cov[a][i][j] = s;
            }
    for (int k = 0; k < d; ++k)
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) {
                double s = 0.0;
                for (int l = 0; l < d; ++l)
                    s += m.g_inv[k][l] * (cov[i][j][l] + cov[j][i][l] - cov[l][i][j]);
                out.delta_gamma[k][i][j] = 0.5 * s;
            }

    // second covariant derivative of v
    auto cov2 = [&](int b, int a, int i, int j) {
        double s = w.d2v[b][a][i][j];
        for (int p = 0; p < d; ++p) {
            s -= dgam[b][p][a][i] * w.v[p][j] + gam[p][a][i] * w.dv[b][p][j];
            s -= dgam[b][p][a][j] * w.v[i][p] + gam[p][a][j] * w.dv[b][i][p];
        }
        double t = s;  // = d_b (cov_a v_ij)
        for (int q = 0; q < d; ++q) {
            t -= gam[q][b][a] * cov[q][i][j];
            t -= gam[q][b][i] * cov[a][q][j];
            t -= gam[q][b][j] * cov[a][i][q];
        }
        return t;
    };

    double divdiv = 0.0;
    for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b)
            for (int i = 0; i < d; ++i)
                for (int j = 0; j < d; ++j)
                    divdiv += m.g_inv[a][i] * m.g_inv[b][j] * cov2(a, b, i, j);

    // Laplacian of the scalar trace v = g^ij v_ij
    FieldPartials tr;
    {
        std::array<double, kMaxDim> dtr{};
        Mat3 d2tr{};
        for (int a = 0; a < d; ++a) {
            double s = 0.0;
            for (int i = 0; i < d; ++i)
                for (int j = 0; j < d; ++j)
                    s += dginv[a][i][j] * w.v[i][j] + m.g_inv[i][j] * w.dv[a][i][j];
            dtr[a] = s;
        }
        // d_b d_a g^ij = -d_b(g^ia dg[a]... ) expand via product rule on dginv
        for (int b = 0; b < d; ++b)
            for (int a = 0; a < d; ++a) {
                double s = 0.0;
                for (int i = 0; i < d; ++i)
                    for (int j = 0; j < d; ++j) {
                        // d_b dginv[a][i][j]
                        double dd = 0.0;
                        for (int p = 0; p < d; ++p)
                            for (int q = 0; q < d; ++q) {
                                dd -= dginv[b][i][p] * m.dg[a][p][q] * m.g_inv[q][j];
                                dd -= m.g_inv[i][p] * m.d2g[b][a][p][q] * m.g_inv[q][j];
                                dd -= m.g_inv[i][p] * m.dg[a][p][q] * dginv[b][q][j];
                            }
                        s += dd * w.v[i][j];
                        s += dginv[a][i][j] * w.dv[b][i][j] + dginv[b][i][j] * w.dv[a][i][j];
                        s += m.g_inv[i][j] * w.d2v[b][a][i][j];
                    }
                d2tr[b][a] = s;
            }
        tr.grad = dtr;
        tr.hess = d2tr;
    }
    const double lap_tr = hessian_laplacian(m, tr).lap;

    double ric_v = 0.0;
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
            for (int a = 0; a < d; ++a)
                for (int b = 0; b < d; ++b)
                    ric_v += m.g_inv[i][a] * m.g_inv[j][b] * cb.ricci[a][b] * w.v[i][j];

    out.delta_R = -lap_tr + divdiv - ric_v;
    return out;
}

// Build a sample from a metric callable by central differences. Default step
// matches the finite-difference fallback used when a family has no analytic
// partials.
inline MetricSample finite_difference_sample(int dim,
                                             const std::function<Mat3(const ChartPoint&)>& gfun,
                                             const ChartPoint& p, double h = 1e-5) {
    auto at = [&](int k, double dk, int l, double dl) {
        ChartPoint q = p;
        q.x[k] += dk;
        if (l >= 0) q.x[l] += dl;
        return gfun(q);
    };
    const Mat3 g0 = gfun(p);
    Arr3 dg{};
    Arr4 d2g{};
    for (int k = 0; k < dim; ++k) {
        const Mat3 gp = at(k, h, -1, 0), gm = at(k, -h, -1, 0);
        for (int i = 0; i < dim; ++i)
            for (int j = 0; j < dim; ++j) {
                dg[k][i][j] = (gp[i][j] - gm[i][j]) / (2.0 * h);
                d2g[k][k][i][j] = (gp[i][j] - 2.0 * g0[i][j] + gm[i][j]) / (h * h);
            }
    }
    for (int k = 0; k < dim; ++k)
        for (int l = k + 1; l < dim; ++l) {
            const Mat3 gpp = at(k, h, l, h), gpm = at(k, h, l, -h);
            const Mat3 gmp = at(k, -h, l, h), gmm = at(k, -h, l, -h);
            for (int i = 0; i < dim; ++i)
                for (int j = 0; j < dim; ++j) {
                    const double v =
                        (gpp[i][j] - gpm[i][j] - gmp[i][j] + gmm[i][j]) / (4.0 * h * h);
                    d2g[k][l][i][j] = v;
                    d2g[l][k][i][j] = v;
                }
        }
    return MetricSample(dim, g0, dg, d2g);
}

}  // namespace ricci
