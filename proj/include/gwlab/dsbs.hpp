#pragma once

#include <vector>

#include "gwlab/gray_wyner.hpp"

namespace gwlab {

// Closed forms for the doubly symmetric binary source with crossover p and Hamming distortions.

double dsbs_p1(double p);
double dsbs_joint_rd(double p, double D);

struct DsbsTilted {
    double diag = 0.0;
    double offdiag = 0.0;
};
// Requires D <= p1(p). Diagonal log2(2/(1-p)) - 2h(D), off-diagonal log2(2/p) - 2h(D).
DsbsTilted dsbs_tilted(double p, double D);
// Older display with denominators (2p-1)D(1-D) + (1-p)/2 and p/2 - (2p-1)D(1-D). Its mean misses the
// joint rate by O(D(1-D)(1-2p)); kept for comparison output only.
DsbsTilted dsbs_tilted_display(double p, double D);

struct DsbsVariance {
    // Displayed form: tilted logs centered at 1 + h(p) before the -2h(D) shift.
    double centered_at_one_plus_hp = 0.0;
    // Tilted values centered at the joint rate-distortion value.
    double centered_at_rate = 0.0;
};
DsbsVariance dsbs_variance(double p, double D);

// (R_XY(P,delta,delta), h(delta)-h(D), h(delta)-h(D)) with unit private weights; no channel attached.
GWPoint pangloss_triplet(double p, double D, double delta);

// First-order sum rate plus sqrt(V/n) Q^{-1}(eps).
double r_sum(double n, double eps, const GWPoint& point, double V);

struct FigureRow {
    double n = 0.0;
    std::vector<double> r_sum;  // one per requested eps
    double first_order = 0.0;
};

// Log-spaced blocklengths from n_min to n_max, `points` rows.
std::vector<FigureRow> dsbs_figure(double p, double D, double delta, const std::vector<double>& eps, double n_min = 10.0,
                                   double n_max = 1e4, int points = 50);

}  // namespace gwlab
