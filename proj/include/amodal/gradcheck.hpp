#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace amodal {

struct GradCheckResult {
    std::string name;
    double max_rel_err = 0.0;
    bool pass = false;
};

// Central finite differences against the analytic gradients of every loss, on
// random 8x8 fixtures nudged away from clamp boundaries and max/kink ties.
std::vector<GradCheckResult> run_gradcheck(uint64_t seed = 7, double step = 1e-4,
                                           double tol = 1e-3);

}  // namespace amodal
