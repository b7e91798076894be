#pragma once
// Central finite-difference suite over every loss and the encoder+loss
// composition. Shared by the gradcheck command and the acceptance tests.

#include <cstdint>
#include <string>
#include <vector>

namespace mdp {

struct GradCaseResult {
    std::string name;     // e.g. "pixel_to_prototype[7]"
    double max_rel_err = 0.0;
    bool pass = false;
};

struct GradSuiteReport {
    std::vector<GradCaseResult> cases;
    double eps = 0.0, tol = 0.0;
    double seconds = 0.0;
    bool pass = false;
    double worst() const;
};

// `instances` seeded random instances per case; relative error denominator
// max(|numeric|, |analytic|, 1).
GradSuiteReport run_gradient_suite(uint64_t seed, size_t instances = 20,
                                   double eps = 1e-3, double tol = 1e-4);

} // namespace mdp
