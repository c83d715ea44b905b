#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace ricci {

using Vec = std::vector<double>;

// Domain errors named after the failing precondition. Checkers never throw;
// they report. Solvers and constructors throw.
struct NonPositiveDefinite : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct OutOfChart : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct BeyondExtinction : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct UnsupportedBrackets : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NonPositiveTau : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct CflViolation : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct BlowUp : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NonConvergence : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NotMaximal : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct UnsupportedReduction : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct GridMismatch : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NotCompatible : std::runtime_error {
    double mass;
    explicit NotCompatible(const std::string& msg, double m)
        : std::runtime_error(msg), mass(m) {}
};
struct EigenSolveFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct TauOutOfRange : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ShootingDiverged : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NonMinimizing : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct SlabOutOfRange : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NegativeRicci : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NonPositiveInitialR : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct InitialNormalizationViolated : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct SchemaError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct RangeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline bool finite(double x) { return std::isfinite(x); }

inline bool all_finite(const Vec& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

inline double sqr(double x) { return x * x; }

// 64-bit FNV-1a, used for artifact content hashes in run manifests.
inline std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace ricci
