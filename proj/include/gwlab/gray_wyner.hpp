#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gwlab/probcore.hpp"
#include "gwlab/rd_solvers.hpp"

namespace gwlab {

// Test channel (W|XY, X^|XW, Y^|YW) stored as flat row-major tables, plus marginals induced under a source.
class TestChannelTriple {
  public:
    TestChannelTriple() = default;
    // Throws Error(shape) when |W| exceeds |X||Y|+2 or a table has the wrong size,
    // Error(domain) when a row is not a pmf.
    TestChannelTriple(std::size_t nx, std::size_t ny, std::size_t nw, std::size_t kx, std::size_t ky,
                      std::vector<double> w_given_xy, std::vector<double> xhat_given_xw,
                      std::vector<double> yhat_given_yw);

    std::size_t nx() const noexcept { return nx_; }
    std::size_t ny() const noexcept { return ny_; }
    std::size_t nw() const noexcept { return nw_; }
    std::size_t kx() const noexcept { return kx_; }
    std::size_t ky() const noexcept { return ky_; }

    double w_given_xy(std::size_t x, std::size_t y, std::size_t w) const { return v_[(x * ny_ + y) * nw_ + w]; }
    double xhat_given_xw(std::size_t x, std::size_t w, std::size_t xh) const { return a_[(x * nw_ + w) * kx_ + xh]; }
    double yhat_given_yw(std::size_t y, std::size_t w, std::size_t yh) const { return b_[(y * nw_ + w) * ky_ + yh]; }
    const std::vector<double>& w_table() const noexcept { return v_; }
    const std::vector<double>& xhat_table() const noexcept { return a_; }
    const std::vector<double>& yhat_table() const noexcept { return b_; }

    // Recomputes P_W, P_{X^|W}, P_{Y^|W} under p_xy. Letters with P_W = 0 get uniform reproduction marginals.
    void induce(const JointPmf& p_xy);
    const std::vector<double>& p_w() const noexcept { return pw_; }
    double xhat_given_w(std::size_t w, std::size_t xh) const { return qx_[w * kx_ + xh]; }
    double yhat_given_w(std::size_t w, std::size_t yh) const { return qy_[w * ky_ + yh]; }

    // Drops W letters whose induced mass is below `threshold` and renormalizes; keeps at least one letter.
    void prune(const JointPmf& p_xy, double threshold = 1e-9);
    // Same channel with W letters relabeled: new letter k is old letter order[k].
    TestChannelTriple permuted(const std::vector<std::size_t>& order) const;

  private:
    std::size_t nx_ = 0, ny_ = 0, nw_ = 0, kx_ = 0, ky_ = 0;
    std::vector<double> v_, a_, b_;
    std::vector<double> pw_, qx_, qy_;
};

struct GWMeasures {
    double common = 0.0;    // I(X,Y;W)
    double private1 = 0.0;  // I(X;X^|W)
    double private2 = 0.0;  // I(Y;Y^|W)
    double dist1 = 0.0;
    double dist2 = 0.0;
};

GWMeasures gw_measures(const TestChannelTriple& ch, const JointSource& src);

struct GWMultipliers {
    double lambda1 = 0.0;
    double lambda2 = 0.0;
    double gamma1 = 0.0;
    double gamma2 = 0.0;
};

struct GWLevels {
    double r1 = 0.0;
    double r2 = 0.0;
    double d1 = 0.0;
    double d2 = 0.0;
};

struct GWOptions {
    int restarts = 20;
    std::uint64_t seed = 0x6777'6c61'6200ULL;
    unsigned threads = 1;
    long max_mm_iters = 4000;
    // Stop when the common rate moves less than this between majorize-minimize steps.
    double mm_tol = 1e-13;
    // Largest constraint overshoot accepted as feasible.
    double feasibility_tol = 1e-7;
    double prune_threshold = 1e-9;
    // Upper box of the dual search; acts as an exact-penalty weight for infeasible iterates.
    double lambda_cap = 1e4;
    double gamma_cap = 1e6;
    // When set, one more run starts from this channel; useful when re-solving at a nearby source.
    std::optional<TestChannelTriple> warm_start;
};

struct GWPoint {
    double r0 = 0.0;
    double r1 = 0.0;
    double r2 = 0.0;
    double d1 = 0.0;
    double d2 = 0.0;
    double lambda1 = 0.0;
    double lambda2 = 0.0;
    double gamma1 = 0.0;
    double gamma2 = 0.0;
    TestChannelTriple channel;
    GWMeasures achieved;
    bool feasible = true;
    bool on_boundary = false;
    // Best common rate of each feasible run (structured start, random restarts, then the warm start if any).
    std::vector<double> restart_values;
    double restart_spread = 0.0;
    long iterations = 0;
    std::string note;
};

struct LagrangianResult {
    double objective = 0.0;
    TestChannelTriple channel;
    long iterations = 0;
    bool converged = false;
};

// Alternating tilt updates at fixed multipliers (all strictly positive) from a given channel.
LagrangianResult gw_lagrangian_solve(const JointSource& src, const GWMultipliers& mult, const GWLevels& levels,
                                     const TestChannelTriple& init, long max_iters = 100000, double tol = 1e-14);
// Same, from a Dirichlet(1) channel drawn with `seed`, using |W| = |X||Y|+2.
LagrangianResult gw_lagrangian_solve(const JointSource& src, const GWMultipliers& mult, const GWLevels& levels,
                                     std::uint64_t seed, long max_iters = 100000, double tol = 1e-14);
// Lagrangian value E_P[-log sum_w ...] of the tilt against the marginals induced by `ch`.
double gw_lagrangian_value(const JointSource& src, const GWMultipliers& mult, const GWLevels& levels,
                           const TestChannelTriple& ch);

// Least common rate. Negative levels give r0 = +inf with feasible = false; zero distortion levels are a domain error.
GWPoint min_common_rate(const JointSource& src, const GWLevels& levels, const GWOptions& opts = {});

struct MultiplierEstimate {
    GWMultipliers values;
    // Finite-difference signal smaller than ten times the solver tolerance for some coordinate.
    bool noisy = false;
    bool richardson_used = false;
};

// Central differences of min_common_rate (steps 1e-3), refined at 5e-4 when the two disagree by more than 10%.
MultiplierEstimate multipliers(const JointSource& src, const GWLevels& levels, const GWOptions& opts = {});

// j_XY table of a solved point, using the point's channel marginals and multipliers.
TiltedTable gw_tilted_density(const GWPoint& point, const JointPmf& p_xy, const DistortionMeasure& dx,
                              const DistortionMeasure& dy);

// Largest |j - rhs| over supported (x,y) and positive-mass (w,x^,y^) of the decomposition of j into
// log-likelihood ratios and distortion offsets.
double tilted_decomposition_residual(const GWPoint& point, const TiltedTable& table, const JointSource& src);

struct Dispersion {
    double variance = 0.0;
    double third_abs_moment = 0.0;
};
Dispersion dispersion(const TiltedTable& table, const JointPmf& p_xy);

struct DerivativeCheck {
    // Central difference of the least common rate along moving mass from support cell i to the last cell.
    double finite_difference = 0.0;
    // j(i) - j(m) - log2(e)
    double predicted = 0.0;
    // j(i) - j(m)
    double tilted_difference = 0.0;
    std::pair<std::size_t, std::size_t> cell_i;
    std::pair<std::size_t, std::size_t> cell_m;
};

// index ranges over the decreasing-probability support order; the last index returns zeros.
DerivativeCheck source_derivative_check(const JointSource& src, const GWPoint& point, std::size_t index,
                                        double step = 1e-3, const GWOptions& opts = {});

struct PanglossReport {
    bool member = false;
    double joint_rd = 0.0;
    double rd_x = 0.0;
    double rd_y = 0.0;
    // r0+r1+r2 - R_XY, r0+r1 - R_X, r0+r2 - R_Y
    double sum_gap = 0.0;
    double x_slack = 0.0;
    double y_slack = 0.0;
};

PanglossReport pangloss_membership(const JointSource& src, double r0, double r1, double r2, double d1, double d2);

}  // namespace gwlab
