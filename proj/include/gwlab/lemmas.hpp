#pragma once

#include <string>
#include <vector>

#include "gwlab/gray_wyner.hpp"

namespace gwlab {

struct IdentityCheck {
    std::string name;
    double value = 0.0;
    double tolerance = 0.0;
    bool pass = false;
    std::string detail;
};

struct IdentitySuiteOptions {
    GWOptions gw;
    SolverOptions rd;
    double derivative_step = 1e-3;
};

// Identity checks on the tilted densities at one operating point: mean and pointwise decompositions of the
// common-rate and joint densities, the Pangloss shift with its unit multipliers (only when the point lies on
// the Pangloss plane), and the source-derivative formula per support index.
std::vector<IdentityCheck> verify_identities(const JointSource& src, const GWLevels& levels,
                                             const IdentitySuiteOptions& opts = {});

// DSBS with p = 0.48, D = 0.15 and private rates h(0.25) - h(0.15).
std::vector<IdentityCheck> verify_identities_dsbs(double p = 0.48, double D = 0.15, double delta = 0.25,
                                                  const IdentitySuiteOptions& opts = {});

}  // namespace gwlab
