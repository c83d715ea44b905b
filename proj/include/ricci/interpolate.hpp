#pragma once

#include <cstddef>

#include "ricci/common.hpp"

namespace ricci {

// Monotone cubic Hermite interpolation (Fritsch-Carlson slopes). Used for
// state lookups between stored trajectory snapshots and for re-meshing
// profiles to the arclength gauge.
class Pchip {
  public:
    Pchip() = default;
    Pchip(Vec x, Vec y) : x_(std::move(x)), y_(std::move(y)) {
        const std::size_t n = x_.size();
        m_.assign(n, 0.0);
        if (n < 2) return;
        Vec d(n - 1);
        for (std::size_t i = 0; i + 1 < n; ++i)
            d[i] = (y_[i + 1] - y_[i]) / (x_[i + 1] - x_[i]);
        m_[0] = d[0];
        m_[n - 1] = d[n - 2];
        for (std::size_t i = 1; i + 1 < n; ++i) {
            if (d[i - 1] * d[i] <= 0.0) {
                m_[i] = 0.0;
            } else {
                const double w1 = 2.0 * (x_[i + 1] - x_[i]) + (x_[i] - x_[i - 1]);
                const double w2 = (x_[i + 1] - x_[i]) + 2.0 * (x_[i] - x_[i - 1]);
                m_[i] = (w1 + w2) / (w1 / d[i - 1] + w2 / d[i]);
            }
        }
    }

    double operator()(double x) const {
        const std::size_t n = x_.size();
        if (n == 0) return 0.0;
        if (n == 1 || x <= x_.front()) {
            if (n == 1) return y_[0];
            // linear extension keeps lookups defined slightly off the ends
        }
        std::size_t i = locate(x);
        const double h = x_[i + 1] - x_[i];
        const double t = (x - x_[i]) / h;
        const double t2 = t * t, t3 = t2 * t;
        const double h00 = 2 * t3 - 3 * t2 + 1;
        const double h10 = t3 - 2 * t2 + t;
        const double h01 = -2 * t3 + 3 * t2;
        const double h11 = t3 - t2;
        return h00 * y_[i] + h10 * h * m_[i] + h01 * y_[i + 1] + h11 * h * m_[i + 1];
    }

    double derivative(double x) const {
        std::size_t i = locate(x);
        const double h = x_[i + 1] - x_[i];
        const double t = (x - x_[i]) / h;
        const double t2 = t * t;
        const double dh00 = (6 * t2 - 6 * t) / h;
        const double dh10 = 3 * t2 - 4 * t + 1;
        const double dh01 = (-6 * t2 + 6 * t) / h;
        const double dh11 = 3 * t2 - 2 * t;
        return dh00 * y_[i] + dh10 * m_[i] + dh01 * y_[i + 1] + dh11 * m_[i + 1];
    }

  private:
    std::size_t locate(double x) const {
        std::size_t lo = 0, hi = x_.size() - 1;
        if (x <= x_[0]) return 0;
        if (x >= x_[hi]) return hi - 1;
        while (hi - lo > 1) {
            const std::size_t mid = (lo + hi) / 2;
            (x_[mid] <= x ? lo : hi) = mid;
        }
        return lo;
    }

    Vec x_, y_, m_;
};

inline Vec resample(const Vec& x_old, const Vec& y_old, const Vec& x_new) {
    Pchip p(x_old, y_old);
    Vec out(x_new.size());
    for (std::size_t i = 0; i < x_new.size(); ++i) out[i] = p(x_new[i]);
    return out;
}

}  // namespace ricci
