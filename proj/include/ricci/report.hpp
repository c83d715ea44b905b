#pragma once

#include <cstddef>
#include <string>

#include "ricci/common.hpp"

namespace ricci {

// Pass/fail record for a theorem-derived inequality or identity. Margins are
// signed: negative means violation; pass <=> worst_margin >= -tolerance.
struct CheckReport {
    std::string name;
    bool pass = true;
    double worst_margin = 1e300;
    double worst_t = 0.0;
    std::size_t worst_index = 0;
    std::size_t samples_checked = 0;
    double tolerance = 0.0;

    void record(double margin, double t, std::size_t index) {
        ++samples_checked;
        if (margin < worst_margin) {
            worst_margin = margin;
            worst_t = t;
            worst_index = index;
        }
    }

    CheckReport& finalize() {
        if (samples_checked == 0) worst_margin = 0.0;
        pass = worst_margin >= -tolerance;
        return *this;
    }
};

}  // namespace ricci
