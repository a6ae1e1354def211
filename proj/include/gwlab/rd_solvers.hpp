#pragma once

#include <functional>
#include <vector>

#include "gwlab/probcore.hpp"

namespace gwlab {

struct SolverOptions {
    // Blahut duality gap (bits) at which a fixed-slope run counts as converged.
    double gap_tol = 1e-12;
    long max_iters = 100000;
    // Optional hook called on every iteration of each fixed-slope run; iteration restarts at 0 per run.
    std::function<void(long iteration, double lagrangian)> on_iteration;
};

struct RDSolution {
    double rate = 0.0;
    double distortion = 0.0;
    // Lagrange multiplier at which the distortion constraint is met (-dR/dD).
    double slope = 0.0;
    // channel[w] is |X| x |X^|; the unconditional solver reports a single block.
    std::vector<Matrix> channel;
    // Row w holds the reproduction marginal given w.
    Matrix output;
    long iterations = 0;
    bool converged = true;
};

struct JointRDSolution {
    double rate = 0.0;
    double d1 = 0.0;
    double d2 = 0.0;
    double nu1 = 0.0;
    double nu2 = 0.0;
    // Rows indexed x*|Y|+y, columns xh*|Y^|+yh.
    Matrix channel;
    // |X^| x |Y^|
    Matrix output;
    long iterations = 0;
    bool converged = true;
};

struct TiltedTable {
    Matrix values;
    double mean = 0.0;
    double variance = 0.0;
    double third_abs_moment = 0.0;
};

RDSolution rate_distortion(const Pmf& p, const DistortionMeasure& d, double D, const SolverOptions& opts = {});
// p_xw: |X| x |W| joint pmf.
RDSolution conditional_rate_distortion(const JointPmf& p_xw, const DistortionMeasure& d, double D,
                                       const SolverOptions& opts = {});
JointRDSolution joint_rate_distortion(const JointPmf& p_xy, const DistortionMeasure& dx, const DistortionMeasure& dy,
                                      double D1, double D2, const SolverOptions& opts = {});

TiltedTable joint_tilted_density(const JointRDSolution& sol, const JointPmf& p_xy, const DistortionMeasure& dx,
                                 const DistortionMeasure& dy, double D1, double D2);

// Per-source-letter values of -log sum_xh q(xh) 2^{ratio (D - d(x,xh))}.
std::vector<double> conditional_d_tilted(const std::vector<double>& out_marginal, const DistortionMeasure& d,
                                         double D, double gamma_over_lambda);

// Mean, variance and third absolute central moment of a table under p.
void fill_moments(TiltedTable& table, const JointPmf& p);

}  // namespace gwlab
