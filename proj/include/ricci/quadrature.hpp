#pragma once

#include <cstddef>
#include <functional>

#include "ricci/common.hpp"

namespace ricci {

// Composite Simpson on a uniform grid of node values. Odd interval counts
// fall back to Simpson plus one trapezoid cell at the right end.
inline double simpson(const Vec& f, double h) {
    const std::size_t n = f.size();
    if (n < 2) return 0.0;
    std::size_t m = n - 1;  // intervals
    double s = 0.0;
    std::size_t i = 0;
    if (m % 2 == 1) {
        // leading trapezoid cell keeps the rule usable on odd counts
        s += 0.5 * h * (f[0] + f[1]);
        i = 1;
        m -= 1;
    }
    for (; i + 2 <= n - 1; i += 2) s += h / 3.0 * (f[i] + 4.0 * f[i + 1] + f[i + 2]);
    return s;
}

inline double simpson_fn(const std::function<double(double)>& f, double a, double b,
                         std::size_t intervals) {
    if (intervals % 2 == 1) ++intervals;
    const double h = (b - a) / double(intervals);
    double s = f(a) + f(b);
    for (std::size_t i = 1; i < intervals; ++i)
        s += f(a + double(i) * h) * (i % 2 == 1 ? 4.0 : 2.0);
    return s * h / 3.0;
}

// Periodic trapezoid: node i = i*h, i in [0, n), wraps. Exponentially
// accurate for smooth periodic integrands.
inline double periodic_trapezoid(const Vec& f, double h) {
    double s = 0.0;
    for (double x : f) s += x;
    return s * h;
}

}  // namespace ricci
