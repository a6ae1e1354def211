#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "gwlab/gray_wyner.hpp"

namespace gwlab {

struct SecondOrderRegion {
    double lambda1 = 1.0;
    double lambda2 = 1.0;
    // sqrt(V) Q^{-1}(eps)
    double threshold = 0.0;
};

SecondOrderRegion second_order_region(const GWPoint& point, double V, double eps);
// Half-space L0 + lambda1 L1 + lambda2 L2 >= threshold, boundary included.
bool second_order_contains(const SecondOrderRegion& region, const std::array<double, 3>& L);

struct ExcessApprox {
    double central = 0.0;
    // Berry-Esseen slack 6T / (sqrt(n) V^{3/2}).
    double slack = 0.0;
    double lower = 0.0;
    double upper = 0.0;
};

// Q((L0 + lambda1 L1 + lambda2 L2) / sqrt(V)); V = 0 is a domain error.
ExcessApprox gaussian_excess_approx(const GWPoint& point, double V, double T, double n, const std::array<double, 3>& L);

struct ExponentOptions {
    int restarts = 50;
    std::uint64_t seed = 0x6578'706fULL;
    unsigned threads = 1;
    // Inner common-rate solves; restarts default to the structured start only.
    GWOptions inner = [] {
        GWOptions o;
        o.restarts = 0;
        return o;
    }();
    double initial_step = 0.1;
    std::vector<double> penalty_schedule{1e1, 1e2, 1e3, 1e4, 1e5, 1e6};
    int max_steps_per_stage = 200;
    // Accepted shortfall of the common rate below r0 at the returned minimizer.
    double feasibility_tol = 1e-4;
};

struct ExponentResult {
    double value = 0.0;
    JointPmf argmin;
    bool feasible = true;
    // Feasible restart values, and how many restarts reached feasibility.
    std::vector<double> restart_values;
    int feasible_restarts = 0;
    long r0_evaluations = 0;
    // Common rate at the minimizer.
    double r0_at_argmin = 0.0;
    bool polished = false;
};

// min D(Q||P) over Q with least common rate >= r0 (within 1e-9), supp Q within supp P.
ExponentResult error_exponent(const JointSource& src, double r0, const GWLevels& levels,
                              const ExponentOptions& opts = {});

// Multi-resolution grid for 2x2 sources: steps 0.064 down to 0.001, with local boxes of +-4 steps
// around the incumbent below the coarsest level.
ExponentResult error_exponent_grid(const JointSource& src, double r0, const GWLevels& levels,
                                   const ExponentOptions& opts = {});

struct MdSequenceSpec {
    double theta0 = 0.0;
    double theta1 = 0.0;
    double theta2 = 0.0;
};

// theta^2 log2(e) / (2V), theta = theta0 + lambda1 theta1 + lambda2 theta2.
double md_constant(const MdSequenceSpec& seq, const GWPoint& point, double V);

struct MdRow {
    double n = 0.0;
    double rho = 0.0;
    double ratio = 0.0;
};

struct MdReport {
    std::vector<MdRow> rows;
    double constant = 0.0;
    // Fitted exponent a in rho_n ~ n^a.
    double fitted_exponent = 0.0;
    double final_relative_error = 0.0;
};

// Rejects samples unless rho_n decreases, n rho_n^2 increases, and the fitted exponent lies in (-1/2, 0).
MdReport md_rate_consistency(const MdSequenceSpec& seq, const GWPoint& point, double V,
                             const std::vector<std::pair<double, double>>& samples);

}  // namespace gwlab
