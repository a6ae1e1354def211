#include <doctest.h>

#include <cmath>

#include "generators.hpp"
#include "gwlab/dsbs.hpp"
#include "gwlab/gray_wyner.hpp"

using namespace gwlab;

namespace {

const DistortionMeasure kHam2 = DistortionMeasure::hamming(2);

double pangloss_private(double delta, double D) { return binary_entropy(delta) - binary_entropy(D); }

GWLevels pangloss_levels(double delta = 0.25, double D = 0.15) {
    const double r = pangloss_private(delta, D);
    return {r, r, D, D};
}

// W letters pair up as (0,1), (2,3), (4,5) under the joint bit flip.
std::size_t partner(std::size_t w) { return w ^ 1U; }

// Random channel invariant under flipping X, Y, X^, Y^ together with the W pairing above.
TestChannelTriple symmetric_channel(std::uint64_t index) {
    auto r = gen::rng(index, 21);
    const std::size_t nw = 6;
    std::vector<double> v(4 * nw), a(2 * nw * 2), b(2 * nw * 2);
    for (std::size_t y = 0; y < 2; ++y) {
        const auto row = gen::pmf(r, nw, 0.05);
        for (std::size_t w = 0; w < nw; ++w) {
            v[(0 * 2 + y) * nw + w] = row[w];
            v[(1 * 2 + (1 - y)) * nw + partner(w)] = row[w];
        }
    }
    for (std::size_t w = 0; w < nw; ++w) {
        const auto ra = gen::pmf(r, 2, 0.05);
        const auto rb = gen::pmf(r, 2, 0.05);
        for (std::size_t k = 0; k < 2; ++k) {
            a[(0 * nw + w) * 2 + k] = ra[k];
            a[(1 * nw + partner(w)) * 2 + (1 - k)] = ra[k];
            b[(0 * nw + w) * 2 + k] = rb[k];
            b[(1 * nw + partner(w)) * 2 + (1 - k)] = rb[k];
        }
    }
    return TestChannelTriple(2, 2, nw, 2, 2, v, a, b);
}

JointSource product_source(const std::vector<double>& px, const std::vector<double>& py) {
    Matrix m(px.size(), py.size());
    for (std::size_t x = 0; x < px.size(); ++x)
        for (std::size_t y = 0; y < py.size(); ++y) m(x, y) = px[x] * py[y];
    return {JointPmf(m), DistortionMeasure::hamming(px.size()), DistortionMeasure::hamming(py.size())};
}

GWOptions quick(int restarts = 4) {
    GWOptions o;
    o.restarts = restarts;
    return o;
}

}  // namespace

TEST_CASE("test channel construction") {
    const std::vector<double> v(4 * 6, 1.0 / 6.0), a(2 * 6 * 2, 0.5), b(2 * 6 * 2, 0.5);
    CHECK_NOTHROW(TestChannelTriple(2, 2, 6, 2, 2, v, a, b));
    try {
        TestChannelTriple(2, 2, 7, 2, 2, std::vector<double>(4 * 7, 1.0 / 7.0), std::vector<double>(28, 0.5),
                          std::vector<double>(28, 0.5));
        FAIL("cardinality bound not enforced");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::shape);
    }
    auto bad = v;
    bad[0] = 0.5;
    try {
        TestChannelTriple(2, 2, 6, 2, 2, bad, a, b);
        FAIL("row that is not a pmf accepted");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::domain);
    }
    CHECK_THROWS_AS(TestChannelTriple(2, 2, 6, 2, 2, v, std::vector<double>(5, 0.2), b), Error);
}

TEST_CASE("lagrangian solve with large rate multipliers stays non-negative") {
    const JointSource src = dsbs_source(0.3);
    const GWMultipliers mult{1e3, 1e3, 0.1, 0.1};
    const GWLevels lv{0.1, 0.1, 0.2, 0.2};
    const LagrangianResult res = gw_lagrangian_solve(src, mult, lv, std::uint64_t{5});
    // The value carries the offsets -lambda*R - gamma*D; the functional without them is a sum of informations and
    // expected distortions.
    const double offsets = mult.lambda1 * lv.r1 + mult.lambda2 * lv.r2 + mult.gamma1 * lv.d1 + mult.gamma2 * lv.d2;
    CHECK(res.objective + offsets >= 0.0);
    // Private links are priced out; the common link carries almost everything.
    const GWMeasures m = gw_measures(res.channel, src);
    CHECK(m.private1 <= 1e-3);
    CHECK(m.private2 <= 1e-3);
}

TEST_CASE("lagrangian solve keeps the bit-flip symmetry of its start") {
    const JointSource src = dsbs_source(0.48);
    for (std::uint64_t k = 0; k < 3; ++k) {
        const LagrangianResult res =
            gw_lagrangian_solve(src, {1.0, 1.0, 2.5, 2.5}, pangloss_levels(), symmetric_channel(k), 20000, 1e-14);
        const TestChannelTriple& ch = res.channel;
        REQUIRE(ch.nw() == 6);
        double worst = 0.0;
        for (std::size_t x = 0; x < 2; ++x)
            for (std::size_t y = 0; y < 2; ++y)
                for (std::size_t w = 0; w < 6; ++w)
                    worst = std::max(worst, std::fabs(ch.w_given_xy(x, y, w) - ch.w_given_xy(1 - x, 1 - y, partner(w))));
        for (std::size_t x = 0; x < 2; ++x)
            for (std::size_t w = 0; w < 6; ++w)
                for (std::size_t c = 0; c < 2; ++c) {
                    worst = std::max(worst, std::fabs(ch.xhat_given_xw(x, w, c) - ch.xhat_given_xw(1 - x, partner(w), 1 - c)));
                    worst = std::max(worst, std::fabs(ch.yhat_given_yw(x, w, c) - ch.yhat_given_yw(1 - x, partner(w), 1 - c)));
                }
        CHECK(worst <= 1e-6);
    }
}

TEST_CASE("lagrangian solve reaches a fixed point") {
    const JointSource src = dsbs_source(0.3);
    const GWMultipliers mult{0.8, 0.6, 3.0, 2.0};
    const GWLevels lv{0.1, 0.15, 0.1, 0.12};
    const LagrangianResult res = gw_lagrangian_solve(src, mult, lv, std::uint64_t{9});
    REQUIRE(res.converged);
    const LagrangianResult again = gw_lagrangian_solve(src, mult, lv, res.channel, 1);
    CHECK(std::fabs(again.objective - res.objective) < 1e-10);
}

TEST_CASE("property: lagrangian objective never increases along the updates") {
    for (std::uint64_t k = 0; k < 8; ++k) {
        auto r = gen::rng(k, 22);
        const JointSource src{gen::joint(r, 2, 2, 0.02), kHam2, kHam2};
        const GWMultipliers mult{gen::uniform(r, 0.2, 1.0), gen::uniform(r, 0.2, 1.0), gen::uniform(r, 1.0, 5.0),
                                 gen::uniform(r, 1.0, 5.0)};
        const GWLevels lv{0.1, 0.1, 0.1, 0.1};
        TestChannelTriple ch = gw_lagrangian_solve(src, mult, lv, k, 0).channel;
        double prev = gw_lagrangian_value(src, mult, lv, ch);
        for (int step = 0; step < 30; ++step) {
            const LagrangianResult next = gw_lagrangian_solve(src, mult, lv, ch, 1);
            CHECK(next.objective <= prev + 1e-12);
            prev = next.objective;
            ch = next.channel;
        }
    }
}

TEST_CASE("min common rate examples") {
    const JointSource src = dsbs_source(0.3);
    const double rx = rate_distortion(src.pxy.marginal_x(), kHam2, 0.1).rate;
    const GWPoint zero = min_common_rate(src, {rx + 1e-3, rx + 1e-3, 0.1, 0.1}, quick());
    CHECK(zero.feasible);
    CHECK(zero.r0 <= 1e-9);

    const JointSource d48 = dsbs_source(0.48);
    const GWPoint pg = min_common_rate(d48, pangloss_levels());
    CHECK(std::fabs(pg.r0 - dsbs_joint_rd(0.48, 0.25)) <= 2e-3);

    const GWPoint lossless = min_common_rate(src, {0.0, 0.0, 1e-5, 1e-5}, quick());
    CHECK(std::fabs(lossless.r0 - entropy(src.pxy.flat())) <= 1e-3);

    const GWPoint neg = min_common_rate(src, {-0.1, 0.1, 0.1, 0.1}, quick());
    CHECK_FALSE(neg.feasible);
    CHECK(std::isinf(neg.r0));
    try {
        min_common_rate(src, {0.1, 0.1, 0.0, 0.1}, quick());
        FAIL("zero distortion level accepted");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::domain);
    }
}

TEST_CASE("multipliers at the Pangloss point and with slack") {
    const JointSource src = dsbs_source(0.48);
    const MultiplierEstimate m = multipliers(src, pangloss_levels());
    CHECK(std::fabs(m.values.lambda1 - 1.0) <= 5e-2);
    CHECK(std::fabs(m.values.lambda2 - 1.0) <= 5e-2);
    const JointRDSolution jrd = joint_rate_distortion(src.pxy, kHam2, kHam2, 0.15, 0.15);
    CHECK(std::fabs(m.values.gamma1 - jrd.nu1) <= 5e-2);
    CHECK(std::fabs(m.values.gamma2 - jrd.nu2) <= 5e-2);

    // r1 well above what X alone needs at this level.
    const JointSource s3 = dsbs_source(0.3);
    const double rx = rate_distortion(s3.pxy.marginal_x(), kHam2, 0.1).rate;
    const MultiplierEstimate slack = multipliers(s3, {rx + 0.2, 0.05, 0.1, 0.1}, quick());
    CHECK(slack.values.lambda1 == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(slack.values.lambda1 >= 0.0);
}

TEST_CASE("gray-wyner tilted density identities") {
    const JointSource src = dsbs_source(0.48);
    const GWPoint pt = min_common_rate(src, pangloss_levels());
    const TiltedTable j = gw_tilted_density(pt, src.pxy, kHam2, kHam2);
    CHECK(std::fabs(j.mean - pt.r0) <= 1e-4);
    CHECK(tilted_decomposition_residual(pt, j, src) <= 1e-3);
    const JointRDSolution jrd = joint_rate_distortion(src.pxy, kHam2, kHam2, 0.15, 0.15);
    const TiltedTable i = joint_tilted_density(jrd, src.pxy, kHam2, kHam2, 0.15, 0.15);
    for (const auto& [x, y] : src.pxy.support())
        CHECK(std::fabs(j.values(x, y) - (i.values(x, y) - pt.r1 - pt.r2)) <= 1e-3);
}

TEST_CASE("dispersion examples") {
    const JointPmf p = dsbs_source(0.3).pxy;
    TiltedTable flat{Matrix(2, 2, 0.7), 0.0, 0.0, 0.0};
    CHECK(dispersion(flat, p).variance == 0.0);

    const JointPmf halves(Matrix(2, 2, {0.5, 0.0, 0.0, 0.5}));
    TiltedTable pm{Matrix(2, 2, {3.0, 0.0, 0.0, 1.0}), 0.0, 0.0, 0.0};
    const Dispersion two = dispersion(pm, halves);
    CHECK(two.variance == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(two.third_abs_moment == doctest::Approx(1.0).epsilon(1e-15));

    const DsbsTilted c = dsbs_tilted(0.48, 0.15);
    TiltedTable closed{Matrix(2, 2, {c.diag, c.offdiag, c.offdiag, c.diag}), 0.0, 0.0, 0.0};
    CHECK(std::fabs(dispersion(closed, dsbs_source(0.48).pxy).variance - dsbs_variance(0.48, 0.15).centered_at_rate) <=
          1e-6);

    const JointSource src = dsbs_source(0.48);
    const GWPoint pt = min_common_rate(src, pangloss_levels());
    const Dispersion solved = dispersion(gw_tilted_density(pt, src.pxy, kHam2, kHam2), src.pxy);
    CHECK(std::fabs(solved.variance - 0.0033284129406655908) <= 1e-6);
}

TEST_CASE("source derivative: self index is zero") {
    const JointSource src = dsbs_source(0.48);
    const GWPoint pt = min_common_rate(src, pangloss_levels(), quick());
    const DerivativeCheck last = source_derivative_check(src, pt, 3, 1e-3, quick());
    CHECK(last.finite_difference == 0.0);
    CHECK(last.predicted == 0.0);
}

TEST_CASE("source derivative equals the tilted difference") {
    const JointSource src = dsbs_source(0.48);
    const GWPoint pt = min_common_rate(src, pangloss_levels(), quick());
    for (std::size_t i = 0; i < 3; ++i) {
        const DerivativeCheck dc = source_derivative_check(src, pt, i, 1e-3, quick());
        CHECK(std::fabs(dc.finite_difference - dc.tilted_difference) <= 5e-2);
    }
}

// The stated derivative carries an extra -log2(e); perturbing within the simplex cancels it, so the finite
// difference tracks j(i) - j(m) instead. These reproduce the stated form and are expected to fail.
TEST_CASE("source derivative matches j(i) - j(m) - log2(e) on a DSBS point" * doctest::should_fail()) {
    const JointSource src = dsbs_source(0.48);
    const GWPoint pt = min_common_rate(src, pangloss_levels(), quick());
    const DerivativeCheck dc = source_derivative_check(src, pt, 0, 1e-3, quick());
    CHECK(std::fabs(dc.finite_difference - dc.predicted) <= 5e-2);
}

TEST_CASE("source derivative of a uniform tilted table is -log2(e)" * doctest::should_fail()) {
    const JointSource src = dsbs_source(0.5);
    const GWPoint pt = min_common_rate(src, {0.1, 0.1, 0.15, 0.15}, quick());
    const DerivativeCheck dc = source_derivative_check(src, pt, 0, 1e-3, quick());
    CHECK(std::fabs(dc.finite_difference + kLog2E) <= 5e-2);
}

TEST_CASE("source derivative of a uniform tilted table vanishes") {
    const JointSource src = dsbs_source(0.5);
    const GWPoint pt = min_common_rate(src, {0.1, 0.1, 0.15, 0.15}, quick());
    for (std::size_t i = 0; i < 3; ++i) {
        const DerivativeCheck dc = source_derivative_check(src, pt, i, 1e-3, quick());
        CHECK(std::fabs(dc.tilted_difference) <= 1e-6);
        CHECK(std::fabs(dc.finite_difference) <= 5e-2);
    }
}

TEST_CASE("pangloss membership examples") {
    const JointSource src = dsbs_source(0.48);
    const GWLevels lv = pangloss_levels();
    const double r0 = dsbs_joint_rd(0.48, 0.25);
    CHECK(pangloss_membership(src, r0, lv.r1, lv.r2, 0.15, 0.15).member);
    CHECK_FALSE(pangloss_membership(src, r0 + 0.01, lv.r1, lv.r2, 0.15, 0.15).member);

    const JointSource prod = product_source({0.3, 0.7}, {0.6, 0.4});
    const double rx = rate_distortion(prod.pxy.marginal_x(), kHam2, 0.1).rate;
    const double ry = rate_distortion(prod.pxy.marginal_y(), kHam2, 0.1).rate;
    const PanglossReport indep = pangloss_membership(prod, 0.0, rx, ry, 0.1, 0.1);
    CHECK(indep.member);

    const JointSource corr = dsbs_source(0.2);
    const double cx = rate_distortion(corr.pxy.marginal_x(), kHam2, 0.1).rate;
    const double cy = rate_distortion(corr.pxy.marginal_y(), kHam2, 0.1).rate;
    CHECK_FALSE(pangloss_membership(corr, 0.0, cx, cy, 0.1, 0.1).member);
}

TEST_CASE("property: least common rate is non-increasing in every argument") {
    const JointSource src = dsbs_source(0.3);
    const GWLevels base{0.1, 0.1, 0.1, 0.1};
    const GWOptions o = quick();
    for (int coord = 0; coord < 4; ++coord) {
        double prev = std::numeric_limits<double>::infinity();
        for (int i = 0; i < 5; ++i) {
            GWLevels lv = base;
            const double step = 0.02 * i;
            (coord == 0 ? lv.r1 : coord == 1 ? lv.r2 : coord == 2 ? lv.d1 : lv.d2) += step;
            const double r0 = min_common_rate(src, lv, o).r0;
            CHECK(r0 <= prev + 1e-4);
            prev = r0;
        }
    }
}

TEST_CASE("property: least common rate respects the Pangloss lower bound") {
    for (std::uint64_t k = 0; k < 10; ++k) {
        auto r = gen::rng(k, 23);
        const JointSource src{gen::joint(r, 2, 2, 0.02), kHam2, kHam2};
        const GWLevels lv{gen::uniform(r, 0.0, 0.3), gen::uniform(r, 0.0, 0.3), gen::uniform(r, 0.05, 0.3),
                          gen::uniform(r, 0.05, 0.3)};
        const GWPoint pt = min_common_rate(src, lv, quick());
        REQUIRE(pt.feasible);
        const double jrd = joint_rate_distortion(src.pxy, kHam2, kHam2, lv.d1, lv.d2).rate;
        CHECK(pt.r0 >= jrd - lv.r1 - lv.r2 - 2e-3);
    }
}

// Some random starts settle in distinct local optima of the non-convex problem, so the full spread exceeds 1e-3
// at these levels even though the reported best is reached by most runs.
TEST_CASE("property: restart spread stays below 1e-3 on DSBS instances" * doctest::should_fail()) {
    for (double p : {0.1, 0.3, 0.48}) {
        const GWPoint pt = min_common_rate(dsbs_source(p), {0.05, 0.08, 0.1, 0.12});
        CHECK(pt.restart_values.size() >= 2);
        CHECK(pt.restart_spread < 1e-3);
    }
}

TEST_CASE("property: most restarts reach the reported least common rate") {
    for (double p : {0.1, 0.3, 0.48}) {
        const GWPoint pt = min_common_rate(dsbs_source(p), {0.05, 0.08, 0.1, 0.12});
        std::size_t hits = 0;
        for (double v : pt.restart_values) hits += std::fabs(v - pt.r0) <= 1e-6;
        CHECK(2 * hits > pt.restart_values.size());
    }
    const GWPoint pg = min_common_rate(dsbs_source(0.48), pangloss_levels());
    CHECK(pg.restart_spread < 1e-3);
}

TEST_CASE("property: tilted density identities over DSBS settings") {
    struct Setting {
        double p, D, r1, r2;
    };
    const Setting grid[] = {{0.1, 0.05, 0.1, 0.1}, {0.2, 0.1, 0.05, 0.15}, {0.3, 0.1, 0.1, 0.1},
                            {0.4, 0.15, 0.08, 0.05}, {0.48, 0.15, pangloss_private(0.25, 0.15), pangloss_private(0.25, 0.15)}};
    for (const Setting& s : grid) {
        const JointSource src = dsbs_source(s.p);
        const GWPoint pt = min_common_rate(src, {s.r1, s.r2, s.D, s.D});
        REQUIRE(pt.feasible);
        if (pt.r0 <= 1e-9) continue;
        const TiltedTable j = gw_tilted_density(pt, src.pxy, kHam2, kHam2);
        CHECK(std::fabs(j.mean - pt.r0) <= 1e-4);
        CHECK(tilted_decomposition_residual(pt, j, src) <= 1e-3);
    }
}
