#include "gwlab/lemmas.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "gwlab/dsbs.hpp"

namespace gwlab {

namespace {

std::string fmt(const char* f, double a, double b = 0.0) {
    char buf[160];
    std::snprintf(buf, sizeof buf, f, a, b);
    return buf;
}

IdentityCheck row(std::string name, double value, double tol, std::string detail = {}) {
    return {std::move(name), value, tol, std::isfinite(value) && value <= tol, std::move(detail)};
}

// Largest |i(x,y) - log(P(xh,yh|x,y)/P(xh,yh)) - nu1 (dx - D1) - nu2 (dy - D2)| over positive-mass pairs.
double joint_decomposition_residual(const JointRDSolution& sol, const TiltedTable& t, const JointSource& src,
                                    double D1, double D2) {
    const std::size_t ky = src.dy.reproductions();
    double worst = 0.0;
    for (std::size_t x = 0; x < src.pxy.nx(); ++x)
        for (std::size_t y = 0; y < src.pxy.ny(); ++y) {
            if (src.pxy(x, y) <= 0.0) continue;
            const std::size_t r = x * src.pxy.ny() + y;
            for (std::size_t a = 0; a < src.dx.reproductions(); ++a)
                for (std::size_t b = 0; b < ky; ++b) {
                    const double q = sol.output(a, b);
                    const double c = sol.channel(r, a * ky + b);
                    if (q <= 1e-12 || c <= 1e-12) continue;
                    const double rhs = std::log2(c / q) + sol.nu1 * (src.dx(x, a) - D1) + sol.nu2 * (src.dy(y, b) - D2);
                    worst = std::max(worst, std::fabs(t.values(x, y) - rhs));
                }
        }
    return worst;
}

}  // namespace

std::vector<IdentityCheck> verify_identities(const JointSource& src, const GWLevels& levels,
                                             const IdentitySuiteOptions& opts) {
    std::vector<IdentityCheck> out;
    const GWPoint point = min_common_rate(src, levels, opts.gw);
    if (!point.feasible || !std::isfinite(point.r0))
        throw Error(ErrorCode::infeasible, "verify_identities: no finite common rate at these levels");
    const TiltedTable j = gw_tilted_density(point, src.pxy, src.dx, src.dy);

    out.push_back(row("common-mean", std::fabs(j.mean - point.r0), 1e-4,
                      fmt("E[j]=%.12g R0=%.12g", j.mean, point.r0)));
    out.push_back(row("common-decomposition", tilted_decomposition_residual(point, j, src), 1e-3));

    const JointRDSolution jrd = joint_rate_distortion(src.pxy, src.dx, src.dy, levels.d1, levels.d2, opts.rd);
    const TiltedTable ij = joint_tilted_density(jrd, src.pxy, src.dx, src.dy, levels.d1, levels.d2);
    out.push_back(row("joint-mean", std::fabs(ij.mean - jrd.rate), 1e-5,
                      fmt("E[i]=%.12g R_XY=%.12g", ij.mean, jrd.rate)));
    out.push_back(row("joint-decomposition", joint_decomposition_residual(jrd, ij, src, levels.d1, levels.d2), 1e-4));

    const PanglossReport pg = pangloss_membership(src, point.r0, levels.r1, levels.r2, levels.d1, levels.d2);
    if (pg.member) {
        double worst = 0.0;
        for (const auto& [x, y] : src.pxy.support())
            worst = std::max(worst, std::fabs(j.values(x, y) - (ij.values(x, y) - levels.r1 - levels.r2)));
        out.push_back(row("pangloss-shift", worst, 1e-3));
        out.push_back(row("pangloss-lambda1", std::fabs(point.lambda1 - 1.0), 5e-2, fmt("lambda1=%.12g", point.lambda1)));
        out.push_back(row("pangloss-lambda2", std::fabs(point.lambda2 - 1.0), 5e-2, fmt("lambda2=%.12g", point.lambda2)));
        out.push_back(row("pangloss-gamma1", std::fabs(point.gamma1 - jrd.nu1), 5e-2,
                          fmt("gamma1=%.12g nu1=%.12g", point.gamma1, jrd.nu1)));
        out.push_back(row("pangloss-gamma2", std::fabs(point.gamma2 - jrd.nu2), 5e-2,
                          fmt("gamma2=%.12g nu2=%.12g", point.gamma2, jrd.nu2)));
    } else {
        IdentityCheck skip{"pangloss-shift", pg.sum_gap, 1e-4, true, "skipped: point is off the Pangloss plane"};
        out.push_back(skip);
    }

    const SortedSupport ss = sorted_support(src.pxy);
    for (std::size_t i = 0; i + 1 < ss.m; ++i) {
        const DerivativeCheck dc = source_derivative_check(src, point, i, opts.derivative_step, opts.gw);
        char name[64];
        std::snprintf(name, sizeof name, "source-derivative[%zu]", i);
        out.push_back(row(name, std::fabs(dc.finite_difference - dc.predicted), 5e-2,
                          fmt("fd=%.12g j(i)-j(m)=%.12g", dc.finite_difference, dc.tilted_difference)));
    }
    return out;
}

std::vector<IdentityCheck> verify_identities_dsbs(double p, double D, double delta, const IdentitySuiteOptions& opts) {
    const double r = binary_entropy(delta) - binary_entropy(D);
    return verify_identities(dsbs_source(p), GWLevels{r, r, D, D}, opts);
}

}  // namespace gwlab
