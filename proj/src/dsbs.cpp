#include "gwlab/dsbs.hpp"

#include <cmath>
#include <limits>

namespace gwlab {

namespace {

void check_p(double p) {
    if (!(p >= 0.0 && p <= 0.5)) throw Error(ErrorCode::domain, "dsbs: crossover must lie in [0, 1/2]");
}

double f(double x) { return -xlog2x(x); }

}  // namespace

double dsbs_p1(double p) {
    check_p(p);
    return 0.5 - 0.5 * std::sqrt(1.0 - 2.0 * p);
}

double dsbs_joint_rd(double p, double D) {
    check_p(p);
    if (!(D >= 0.0 && D <= 0.5)) throw Error(ErrorCode::domain, "dsbs_joint_rd: D must lie in [0, 1/2]");
    if (D <= dsbs_p1(p)) return 1.0 + binary_entropy(p) - 2.0 * binary_entropy(D);
    return std::max(0.0, f(1.0 - p) - 0.5 * (f(2.0 * D - p) + f(2.0 * (1.0 - D) - p)));
}

DsbsTilted dsbs_tilted(double p, double D) {
    check_p(p);
    if (!(D >= 0.0 && D <= dsbs_p1(p))) throw Error(ErrorCode::domain, "dsbs_tilted: D must lie in [0, p1]");
    // The optimal output puts mass ((1-p)/2 - D(1-D))/(1-2D)^2 on equal pairs, so the tilt sum collapses
    // to P_XY(x,y) 2^{2h(D)}.
    const double hd = 2.0 * binary_entropy(D);
    const double diag = p < 1.0 ? std::log2(2.0 / (1.0 - p)) : std::numeric_limits<double>::infinity();
    const double off = p > 0.0 ? std::log2(2.0 / p) : std::numeric_limits<double>::infinity();
    return {diag - hd, off - hd};
}

DsbsTilted dsbs_tilted_display(double p, double D) {
    check_p(p);
    if (!(D >= 0.0 && D <= dsbs_p1(p))) throw Error(ErrorCode::domain, "dsbs_tilted_display: D must lie in [0, p1]");
    const double a = 2.0 * p - 1.0;
    const double hd = 2.0 * binary_entropy(D);
    return {-std::log2(a * D - a * D * D + 0.5 * (1.0 - p)) - hd, -std::log2(a * D * D - a * D + 0.5 * p) - hd};
}

DsbsVariance dsbs_variance(double p, double D) {
    const DsbsTilted t = dsbs_tilted(p, D);
    if (p == 0.0) return {};
    const double hd = 2.0 * binary_entropy(D);
    const double c = 1.0 + binary_entropy(p);
    DsbsVariance v;
    v.centered_at_one_plus_hp = (1.0 - p) * std::pow(t.diag + hd - c, 2) + p * std::pow(t.offdiag + hd - c, 2);
    const double mean = (1.0 - p) * t.diag + p * t.offdiag;
    v.centered_at_rate = (1.0 - p) * std::pow(t.diag - mean, 2) + p * std::pow(t.offdiag - mean, 2);
    return v;
}

GWPoint pangloss_triplet(double p, double D, double delta) {
    const double p1 = dsbs_p1(p);
    if (!(D >= 0.0 && D <= delta && delta <= p1))
        throw Error(ErrorCode::domain, "pangloss_triplet: need 0 <= D <= delta <= p1");
    GWPoint pt;
    pt.r0 = dsbs_joint_rd(p, delta);
    pt.r1 = pt.r2 = binary_entropy(delta) - binary_entropy(D);
    pt.d1 = pt.d2 = D;
    pt.lambda1 = pt.lambda2 = 1.0;
    const double nu = D > 0.0 ? std::log2((1.0 - D) / D) : std::numeric_limits<double>::infinity();
    pt.gamma1 = pt.gamma2 = nu;
    pt.on_boundary = true;
    pt.note = "closed-form Pangloss triplet";
    return pt;
}

double r_sum(double n, double eps, const GWPoint& point, double V) {
    if (!(n >= 1.0)) throw Error(ErrorCode::domain, "r_sum: n must be at least 1");
    if (!(eps > 0.0 && eps < 1.0)) throw Error(ErrorCode::domain, "r_sum: eps must lie in (0,1)");
    if (!(V >= 0.0)) throw Error(ErrorCode::domain, "r_sum: negative dispersion");
    return point.r0 + point.r1 + point.r2 + std::sqrt(V / n) * q_inverse(eps);
}

std::vector<FigureRow> dsbs_figure(double p, double D, double delta, const std::vector<double>& eps, double n_min,
                                   double n_max, int points) {
    if (!(n_min >= 1.0 && n_max > n_min) || points < 2) throw Error(ErrorCode::domain, "dsbs_figure: bad n range");
    const GWPoint pt = pangloss_triplet(p, D, delta);
    const double V = dsbs_variance(p, D).centered_at_rate;
    std::vector<FigureRow> rows;
    for (int i = 0; i < points; ++i) {
        FigureRow row;
        row.n = n_min * std::pow(n_max / n_min, static_cast<double>(i) / (points - 1));
        for (double e : eps) row.r_sum.push_back(r_sum(row.n, e, pt, V));
        row.first_order = pt.r0 + pt.r1 + pt.r2;
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace gwlab
