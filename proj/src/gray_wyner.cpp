#include "gwlab/gray_wyner.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

#include "gwlab/rng.hpp"
#include "internal.hpp"

namespace gwlab {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kLambdaFloor = 1e-10;
constexpr double kGammaFloor = 1e-12;

double safe_log2(double v) { return v > 0.0 ? std::log2(v) : kNegInf; }

void check_rows(const std::vector<double>& t, std::size_t rows, std::size_t cols, const char* what) {
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            const double v = t[r * cols + c];
            if (!(v >= 0.0)) throw Error(ErrorCode::domain, std::string(what) + ": negative or NaN entry");
            s += v;
        }
        if (std::fabs(s - 1.0) > 1e-9) throw Error(ErrorCode::domain, std::string(what) + ": row does not sum to 1");
    }
}

// Flat copy of the source used by the inner loops.
struct Problem {
    std::size_t nx, ny, kx, ky;
    std::vector<double> p;   // nx*ny
    std::vector<double> dx;  // nx*kx
    std::vector<double> dy;  // ny*ky
    double dx_max, dy_max;

    explicit Problem(const JointSource& s)
        : nx(s.pxy.nx()), ny(s.pxy.ny()), kx(s.dx.reproductions()), ky(s.dy.reproductions()),
          p(s.pxy.matrix().data()), dx(s.dx.matrix().data()), dy(s.dy.matrix().data()),
          dx_max(s.dx.d_max()), dy_max(s.dy.d_max()) {}
};

// Log-domain reproduction/auxiliary marginals induced by a channel.
struct LogMarginals {
    std::size_t nw = 0;
    std::vector<double> qw, qx, qy;
};

struct Tables {
    std::size_t nw = 0;
    std::vector<double> v, a, b;
};

void induce_raw(const Problem& pr, const Tables& t, std::vector<double>& pw, std::vector<double>& qx,
                std::vector<double>& qy) {
    const std::size_t nw = t.nw;
    pw.assign(nw, 0.0);
    qx.assign(nw * pr.kx, 0.0);
    qy.assign(nw * pr.ky, 0.0);
    for (std::size_t x = 0; x < pr.nx; ++x)
        for (std::size_t y = 0; y < pr.ny; ++y) {
            const double pxy = pr.p[x * pr.ny + y];
            if (pxy <= 0.0) continue;
            for (std::size_t w = 0; w < nw; ++w) {
                const double m = pxy * t.v[(x * pr.ny + y) * nw + w];
                if (m <= 0.0) continue;
                pw[w] += m;
                for (std::size_t k = 0; k < pr.kx; ++k) qx[w * pr.kx + k] += m * t.a[(x * nw + w) * pr.kx + k];
                for (std::size_t k = 0; k < pr.ky; ++k) qy[w * pr.ky + k] += m * t.b[(y * nw + w) * pr.ky + k];
            }
        }
    for (std::size_t w = 0; w < nw; ++w) {
        if (pw[w] > 0.0) {
            for (std::size_t k = 0; k < pr.kx; ++k) qx[w * pr.kx + k] /= pw[w];
            for (std::size_t k = 0; k < pr.ky; ++k) qy[w * pr.ky + k] /= pw[w];
        } else {
            for (std::size_t k = 0; k < pr.kx; ++k) qx[w * pr.kx + k] = 1.0 / static_cast<double>(pr.kx);
            for (std::size_t k = 0; k < pr.ky; ++k) qy[w * pr.ky + k] = 1.0 / static_cast<double>(pr.ky);
        }
    }
}

LogMarginals induce_log(const Problem& pr, const Tables& t) {
    std::vector<double> pw, qx, qy;
    induce_raw(pr, t, pw, qx, qy);
    LogMarginals m;
    m.nw = t.nw;
    for (double v : pw) m.qw.push_back(safe_log2(v));
    for (double v : qx) m.qx.push_back(safe_log2(v));
    for (double v : qy) m.qy.push_back(safe_log2(v));
    return m;
}

GWMeasures measures_raw(const Problem& pr, const Tables& t) {
    std::vector<double> pw, qx, qy;
    induce_raw(pr, t, pw, qx, qy);
    GWMeasures r;
    const std::size_t nw = t.nw;
    for (std::size_t x = 0; x < pr.nx; ++x)
        for (std::size_t y = 0; y < pr.ny; ++y) {
            const double pxy = pr.p[x * pr.ny + y];
            if (pxy <= 0.0) continue;
            for (std::size_t w = 0; w < nw; ++w) {
                const double v = t.v[(x * pr.ny + y) * nw + w];
                const double m = pxy * v;
                if (m <= 0.0 || pw[w] <= 0.0) continue;
                r.common += m * std::log2(v / pw[w]);
                for (std::size_t k = 0; k < pr.kx; ++k) {
                    const double a = t.a[(x * nw + w) * pr.kx + k];
                    if (m * a <= 0.0 || qx[w * pr.kx + k] <= 0.0) continue;
                    r.private1 += m * a * std::log2(a / qx[w * pr.kx + k]);
                    r.dist1 += m * a * pr.dx[x * pr.kx + k];
                }
                for (std::size_t k = 0; k < pr.ky; ++k) {
                    const double b = t.b[(y * nw + w) * pr.ky + k];
                    if (m * b <= 0.0 || qy[w * pr.ky + k] <= 0.0) continue;
                    r.private2 += m * b * std::log2(b / qy[w * pr.ky + k]);
                    r.dist2 += m * b * pr.dy[y * pr.ky + k];
                }
            }
        }
    r.common = std::max(0.0, r.common);
    r.private1 = std::max(0.0, r.private1);
    r.private2 = std::max(0.0, r.private2);
    return r;
}

using Vec4 = std::array<double, 4>;

struct TiltEval {
    double g = 0.0;
    Vec4 grad{};
    Tables tables;
};

// One exponential tilt of (W|XY, X^|XW, Y^|YW) against fixed marginals; g is the dual function value
// sum_xy P(xy) (-log Z(xy)) - theta . target and grad its gradient.
TiltEval tilt(const Problem& pr, const LogMarginals& m, const Vec4& th, const Vec4& target, bool keep_tables) {
    const std::size_t nw = m.nw;
    const double l1 = th[0], l2 = th[1];
    const double s1 = th[2] / l1, s2 = th[3] / l2;
    std::vector<double> lcx(pr.nx * nw), edx(pr.nx * nw), klx(pr.nx * nw);
    std::vector<double> lcy(pr.ny * nw), edy(pr.ny * nw), kly(pr.ny * nw);
    TiltEval ev;
    if (keep_tables) {
        ev.tables.nw = nw;
        ev.tables.v.assign(pr.nx * pr.ny * nw, 0.0);
        ev.tables.a.assign(pr.nx * nw * pr.kx, 0.0);
        ev.tables.b.assign(pr.ny * nw * pr.ky, 0.0);
    }
    std::vector<double> term(std::max(pr.kx, pr.ky));
    auto side = [&](std::size_t n, std::size_t k, const std::vector<double>& d, const std::vector<double>& lq, double s,
                    std::vector<double>& lc, std::vector<double>& ed, std::vector<double>& kl, std::vector<double>* out) {
        for (std::size_t x = 0; x < n; ++x)
            for (std::size_t w = 0; w < nw; ++w) {
                for (std::size_t j = 0; j < k; ++j) term[j] = lq[w * k + j] - s * d[x * k + j];
                const double l = detail::log2_sum_exp2(term.data(), k);
                double e = 0.0;
                for (std::size_t j = 0; j < k; ++j) {
                    if (term[j] == kNegInf) continue;
                    const double a = std::exp2(term[j] - l);
                    e += a * d[x * k + j];
                    if (out) (*out)[(x * nw + w) * k + j] = a;
                }
                lc[x * nw + w] = l;
                ed[x * nw + w] = e;
                kl[x * nw + w] = std::max(0.0, -l - s * e);
            }
    };
    side(pr.nx, pr.kx, pr.dx, m.qx, s1, lcx, edx, klx, keep_tables ? &ev.tables.a : nullptr);
    side(pr.ny, pr.ky, pr.dy, m.qy, s2, lcy, edy, kly, keep_tables ? &ev.tables.b : nullptr);

    std::vector<double> e(nw);
    double c1 = 0.0, c2 = 0.0, e1 = 0.0, e2 = 0.0, obj = 0.0;
    for (std::size_t x = 0; x < pr.nx; ++x)
        for (std::size_t y = 0; y < pr.ny; ++y) {
            const double pxy = pr.p[x * pr.ny + y];
            if (pxy <= 0.0 && !keep_tables) continue;
            for (std::size_t w = 0; w < nw; ++w)
                e[w] = m.qw[w] == kNegInf ? kNegInf : m.qw[w] + l1 * lcx[x * nw + w] + l2 * lcy[y * nw + w];
            const double lz = detail::log2_sum_exp2(e.data(), nw);
            obj -= pxy > 0.0 ? pxy * lz : 0.0;
            for (std::size_t w = 0; w < nw; ++w) {
                if (e[w] == kNegInf) continue;
                const double v = std::exp2(e[w] - lz);
                if (keep_tables) ev.tables.v[(x * pr.ny + y) * nw + w] = v;
                if (pxy <= 0.0) continue;
                const double mass = pxy * v;
                c1 += mass * klx[x * nw + w];
                c2 += mass * kly[y * nw + w];
                e1 += mass * edx[x * nw + w];
                e2 += mass * edy[y * nw + w];
            }
        }
    ev.g = obj - (th[0] * target[0] + th[1] * target[1] + th[2] * target[2] + th[3] * target[3]);
    ev.grad = {c1 - target[0], c2 - target[1], e1 - target[2], e2 - target[3]};
    return ev;
}

struct DualBox {
    Vec4 lo{kLambdaFloor, kLambdaFloor, kGammaFloor, kGammaFloor};
    Vec4 hi{1e4, 1e4, 1e6, 1e6};
};

Vec4 clamp(const Vec4& t, const DualBox& box) {
    Vec4 r;
    for (int i = 0; i < 4; ++i) r[i] = std::clamp(t[i], box.lo[i], box.hi[i]);
    return r;
}

// Maximizes the concave dual over the box. Steps are Levenberg-Marquardt-damped Newton steps in log
// coordinates, which keeps multipliers that collapse toward zero well scaled.
TiltEval maximize_dual(const Problem& pr, const LogMarginals& m, Vec4& theta, const Vec4& target, const DualBox& box) {
    Vec4 zlo, zhi, z;
    for (int i = 0; i < 4; ++i) {
        zlo[i] = std::log(box.lo[i]);
        zhi[i] = std::log(box.hi[i]);
    }
    auto to_theta = [](const Vec4& zz) {
        Vec4 t;
        for (int i = 0; i < 4; ++i) t[i] = std::exp(zz[i]);
        return t;
    };
    theta = clamp(theta, box);
    for (int i = 0; i < 4; ++i) z[i] = std::log(theta[i]);
    auto zgrad = [](const TiltEval& e, const Vec4& t) {
        Vec4 g;
        for (int i = 0; i < 4; ++i) g[i] = e.grad[i] * t[i];
        return g;
    };
    TiltEval ev = tilt(pr, m, theta, target, false);
    double mu = 1e-9;
    for (int it = 0; it < 400; ++it) {
        const Vec4 gz = zgrad(ev, theta);
        std::array<bool, 4> free{};
        std::vector<int> idx;
        double pg = 0.0;
        for (int i = 0; i < 4; ++i) {
            const bool stuck_lo = z[i] <= zlo[i] && gz[i] <= 0.0;
            const bool stuck_hi = z[i] >= zhi[i] && gz[i] >= 0.0;
            free[i] = !(stuck_lo || stuck_hi);
            if (free[i]) {
                idx.push_back(i);
                pg = std::max(pg, std::fabs(ev.grad[i]));
            }
        }
        if (idx.empty() || pg < 1e-14) break;
        const int nf = static_cast<int>(idx.size());
        Eigen::MatrixXd N(nf, nf);
        Eigen::VectorXd gvec(nf);
        for (int a = 0; a < nf; ++a) {
            const int i = idx[a];
            gvec(a) = gz[i];
            const double h = 1e-5;
            Vec4 zp = z, zm = z;
            zp[i] = std::min(zhi[i], z[i] + h);
            zm[i] = std::max(zlo[i], z[i] - h);
            const Vec4 tp = to_theta(zp), tm = to_theta(zm);
            const Vec4 gp = zgrad(tilt(pr, m, tp, target, false), tp);
            const Vec4 gm = zgrad(tilt(pr, m, tm, target, false), tm);
            for (int b = 0; b < nf; ++b) N(b, a) = -(gp[idx[b]] - gm[idx[b]]) / (zp[i] - zm[i]);
        }
        N = 0.5 * (N + N.transpose());
        bool accepted = false;
        TiltEval cand;
        Vec4 cz{};
        for (int tries = 0; tries < 40; ++tries) {
            Eigen::MatrixXd M = N;
            const double scale = std::max(1.0, M.diagonal().cwiseAbs().maxCoeff());
            M.diagonal().array() += mu * scale;
            Eigen::LDLT<Eigen::MatrixXd> ldlt(M);
            Eigen::VectorXd step;
            if (ldlt.info() == Eigen::Success && ldlt.isPositive()) step = ldlt.solve(gvec);
            if (step.size() == nf && step.allFinite() && step.dot(gvec) > 0.0) {
                const double longest = step.cwiseAbs().maxCoeff();
                if (longest > 5.0) step *= 5.0 / longest;
                cz = z;
                for (int a = 0; a < nf; ++a) cz[idx[a]] = std::clamp(z[idx[a]] + step(a), zlo[idx[a]], zhi[idx[a]]);
                cand = tilt(pr, m, to_theta(cz), target, false);
                if (cand.g >= ev.g) {
                    accepted = true;
                    break;
                }
            }
            mu *= 10.0;
        }
        if (!accepted) break;
        mu = std::max(1e-12, mu * 0.1);
        const double gain = cand.g - ev.g;
        double move = 0.0;
        for (int i = 0; i < 4; ++i) move = std::max(move, std::fabs(cz[i] - z[i]));
        z = cz;
        theta = to_theta(z);
        ev = std::move(cand);
        if (gain <= 1e-16 * std::max(1.0, std::fabs(ev.g)) && move < 1e-10) break;
    }
    theta = to_theta(z);
    return tilt(pr, m, theta, target, true);
}

struct RunResult {
    Tables tables;
    Vec4 theta{};
    GWMeasures meas;
    long iterations = 0;
    double violation = kInf;
};

double violation(const GWMeasures& m, const GWLevels& lv) {
    return std::max({0.0, m.private1 - lv.r1, m.private2 - lv.r2, m.dist1 - lv.d1, m.dist2 - lv.d2});
}

// Majorize-minimize: each step minimizes the convex surrogate obtained by freezing the induced marginals,
// which upper-bounds the common rate and tightens the rate constraints, so feasible iterates stay feasible.
RunResult run_mm(const Problem& pr, Tables start, const GWLevels& lv, const GWOptions& opts) {
    const Vec4 target{lv.r1, lv.r2, lv.d1, lv.d2};
    DualBox box;
    box.hi = {opts.lambda_cap, opts.lambda_cap, opts.gamma_cap, opts.gamma_cap};
    RunResult rr;
    rr.tables = std::move(start);
    Vec4 theta{1.0, 1.0, 1.0, 1.0};
    double prev = kInf;
    for (long k = 0; k < opts.max_mm_iters; ++k) {
        const LogMarginals m = induce_log(pr, rr.tables);
        TiltEval ev = maximize_dual(pr, m, theta, target, box);
        rr.tables = std::move(ev.tables);
        rr.meas = measures_raw(pr, rr.tables);
        rr.iterations = k + 1;
        if (k > 1 && std::fabs(prev - rr.meas.common) < opts.mm_tol) break;
        prev = rr.meas.common;
    }
    rr.theta = theta;
    rr.violation = violation(rr.meas, lv);
    return rr;
}

Tables random_tables(const Problem& pr, std::size_t nw, std::uint64_t seed, std::uint64_t key) {
    CounterRng rng(seed, key);
    Tables t;
    t.nw = nw;
    for (std::size_t c = 0; c < pr.nx * pr.ny; ++c)
        for (double v : rng.dirichlet_ones(nw)) t.v.push_back(v);
    for (std::size_t c = 0; c < pr.nx * nw; ++c)
        for (double v : rng.dirichlet_ones(pr.kx)) t.a.push_back(v);
    for (std::size_t c = 0; c < pr.ny * nw; ++c)
        for (double v : rng.dirichlet_ones(pr.ky)) t.b.push_back(v);
    return t;
}

// W indexes reproduction pairs of a joint rate-distortion channel solved at slightly reduced levels,
// blended with a little uniform mass so every letter stays reachable.
Tables structured_tables(const Problem& pr, const JointSource& src, const GWLevels& lv, std::size_t nw) {
    const double dbar = std::max({pr.dx_max, pr.dy_max, 1e-300});
    const double eps = std::min(0.01, std::min(lv.d1, lv.d2) / (6.0 * dbar));
    const double keep = (1.0 - eps) * (1.0 - eps);
    const double d1 = std::max(0.0, (lv.d1 - (1.0 - keep) * pr.dx_max) / keep);
    const double d2 = std::max(0.0, (lv.d2 - (1.0 - keep) * pr.dy_max) / keep);
    const JointRDSolution jr = joint_rate_distortion(src.pxy, src.dx, src.dy, d1, d2);
    const std::size_t ncell = pr.kx * pr.ky;
    std::vector<std::size_t> cells(ncell);
    std::iota(cells.begin(), cells.end(), 0);
    std::stable_sort(cells.begin(), cells.end(), [&](std::size_t a, std::size_t b) {
        return jr.output.data()[a] > jr.output.data()[b];
    });
    Tables t;
    t.nw = nw;
    t.v.assign(pr.nx * pr.ny * nw, 0.0);
    t.a.assign(pr.nx * nw * pr.kx, eps / static_cast<double>(pr.kx));
    t.b.assign(pr.ny * nw * pr.ky, eps / static_cast<double>(pr.ky));
    for (std::size_t w = 0; w < nw; ++w) {
        const std::size_t cell = cells[w % ncell];
        for (std::size_t x = 0; x < pr.nx; ++x) t.a[(x * nw + w) * pr.kx + cell / pr.ky] += 1.0 - eps;
        for (std::size_t y = 0; y < pr.ny; ++y) t.b[(y * nw + w) * pr.ky + cell % pr.ky] += 1.0 - eps;
    }
    const std::size_t used = std::min(nw, ncell);
    for (std::size_t c = 0; c < pr.nx * pr.ny; ++c) {
        double s = 0.0;
        for (std::size_t w = 0; w < used; ++w) s += jr.channel(c, cells[w]);
        for (std::size_t w = 0; w < nw; ++w) {
            const double base = s > 0.0 && w < used ? jr.channel(c, cells[w]) / s : (w == 0 && s <= 0.0 ? 1.0 : 0.0);
            t.v[c * nw + w] = (1.0 - eps) * base + eps / static_cast<double>(nw);
        }
    }
    return t;
}

TestChannelTriple to_triple(const Problem& pr, const Tables& t) {
    return TestChannelTriple(pr.nx, pr.ny, t.nw, pr.kx, pr.ky, t.v, t.a, t.b);
}

Tables from_triple(const TestChannelTriple& ch) {
    return Tables{ch.nw(), ch.w_table(), ch.xhat_table(), ch.yhat_table()};
}

void check_source(const JointSource& src) {
    if (src.pxy.nx() != src.dx.sources() || src.pxy.ny() != src.dy.sources())
        throw Error(ErrorCode::shape, "source and distortion alphabets differ");
}

}  // namespace

TestChannelTriple::TestChannelTriple(std::size_t nx, std::size_t ny, std::size_t nw, std::size_t kx, std::size_t ky,
                                     std::vector<double> w_given_xy, std::vector<double> xhat_given_xw,
                                     std::vector<double> yhat_given_yw)
    : nx_(nx), ny_(ny), nw_(nw), kx_(kx), ky_(ky), v_(std::move(w_given_xy)), a_(std::move(xhat_given_xw)),
      b_(std::move(yhat_given_yw)) {
    if (nw == 0 || nw > nx * ny + 2) throw Error(ErrorCode::shape, "TestChannelTriple: |W| outside [1, |X||Y|+2]");
    if (v_.size() != nx * ny * nw || a_.size() != nx * nw * kx || b_.size() != ny * nw * ky)
        throw Error(ErrorCode::shape, "TestChannelTriple: table sizes do not match the alphabets");
    check_rows(v_, nx * ny, nw, "TestChannelTriple W|XY");
    check_rows(a_, nx * nw, kx, "TestChannelTriple X^|XW");
    check_rows(b_, ny * nw, ky, "TestChannelTriple Y^|YW");
}

void TestChannelTriple::induce(const JointPmf& p_xy) {
    if (p_xy.nx() != nx_ || p_xy.ny() != ny_) throw Error(ErrorCode::shape, "TestChannelTriple::induce: shape mismatch");
    Problem pr{JointSource{p_xy, DistortionMeasure(Matrix(nx_, kx_, 0.0)), DistortionMeasure(Matrix(ny_, ky_, 0.0))}};
    induce_raw(pr, Tables{nw_, v_, a_, b_}, pw_, qx_, qy_);
}

void TestChannelTriple::prune(const JointPmf& p_xy, double threshold) {
    induce(p_xy);
    std::vector<std::size_t> keep;
    for (std::size_t w = 0; w < nw_; ++w)
        if (pw_[w] >= threshold) keep.push_back(w);
    if (keep.empty()) keep.push_back(static_cast<std::size_t>(std::max_element(pw_.begin(), pw_.end()) - pw_.begin()));
    if (keep.size() == nw_) return;
    const std::size_t nk = keep.size();
    std::vector<double> v(nx_ * ny_ * nk), a(nx_ * nk * kx_), b(ny_ * nk * ky_);
    for (std::size_t c = 0; c < nx_ * ny_; ++c) {
        double s = 0.0;
        for (std::size_t k = 0; k < nk; ++k) s += v_[c * nw_ + keep[k]];
        for (std::size_t k = 0; k < nk; ++k)
            v[c * nk + k] = s > 0.0 ? v_[c * nw_ + keep[k]] / s : 1.0 / static_cast<double>(nk);
    }
    for (std::size_t x = 0; x < nx_; ++x)
        for (std::size_t k = 0; k < nk; ++k)
            for (std::size_t j = 0; j < kx_; ++j) a[(x * nk + k) * kx_ + j] = a_[(x * nw_ + keep[k]) * kx_ + j];
    for (std::size_t y = 0; y < ny_; ++y)
        for (std::size_t k = 0; k < nk; ++k)
            for (std::size_t j = 0; j < ky_; ++j) b[(y * nk + k) * ky_ + j] = b_[(y * nw_ + keep[k]) * ky_ + j];
    nw_ = nk;
    v_ = std::move(v);
    a_ = std::move(a);
    b_ = std::move(b);
    induce(p_xy);
}

TestChannelTriple TestChannelTriple::permuted(const std::vector<std::size_t>& order) const {
    if (order.size() != nw_) throw Error(ErrorCode::shape, "TestChannelTriple::permuted: order size mismatch");
    std::vector<double> v(v_.size()), a(a_.size()), b(b_.size());
    for (std::size_t c = 0; c < nx_ * ny_; ++c)
        for (std::size_t k = 0; k < nw_; ++k) v[c * nw_ + k] = v_[c * nw_ + order[k]];
    for (std::size_t x = 0; x < nx_; ++x)
        for (std::size_t k = 0; k < nw_; ++k)
            for (std::size_t j = 0; j < kx_; ++j) a[(x * nw_ + k) * kx_ + j] = a_[(x * nw_ + order[k]) * kx_ + j];
    for (std::size_t y = 0; y < ny_; ++y)
        for (std::size_t k = 0; k < nw_; ++k)
            for (std::size_t j = 0; j < ky_; ++j) b[(y * nw_ + k) * ky_ + j] = b_[(y * nw_ + order[k]) * ky_ + j];
    return TestChannelTriple(nx_, ny_, nw_, kx_, ky_, std::move(v), std::move(a), std::move(b));
}

GWMeasures gw_measures(const TestChannelTriple& ch, const JointSource& src) {
    check_source(src);
    Problem pr(src);
    if (ch.nx() != pr.nx || ch.ny() != pr.ny || ch.kx() != pr.kx || ch.ky() != pr.ky)
        throw Error(ErrorCode::shape, "gw_measures: channel does not match the source");
    return measures_raw(pr, from_triple(ch));
}

double gw_lagrangian_value(const JointSource& src, const GWMultipliers& mult, const GWLevels& levels,
                           const TestChannelTriple& ch) {
    check_source(src);
    Problem pr(src);
    const LogMarginals m = induce_log(pr, from_triple(ch));
    return tilt(pr, m, {mult.lambda1, mult.lambda2, mult.gamma1, mult.gamma2}, {levels.r1, levels.r2, levels.d1, levels.d2},
                false)
        .g;
}

LagrangianResult gw_lagrangian_solve(const JointSource& src, const GWMultipliers& mult, const GWLevels& levels,
                                     const TestChannelTriple& init, long max_iters, double tol) {
    check_source(src);
    if (!(mult.lambda1 > 0.0 && mult.lambda2 > 0.0 && mult.gamma1 > 0.0 && mult.gamma2 > 0.0))
        throw Error(ErrorCode::domain, "gw_lagrangian_solve: multipliers must be positive");
    Problem pr(src);
    const Vec4 th{mult.lambda1, mult.lambda2, mult.gamma1, mult.gamma2};
    const Vec4 target{levels.r1, levels.r2, levels.d1, levels.d2};
    Tables t = from_triple(init);
    LagrangianResult res;
    double prev = kInf;
    for (long k = 0; k < max_iters; ++k) {
        const LogMarginals m = induce_log(pr, t);
        TiltEval ev = tilt(pr, m, th, target, true);
        t = std::move(ev.tables);
        res.objective = ev.g;
        res.iterations = k + 1;
        if (std::fabs(prev - ev.g) < tol) {
            res.converged = true;
            break;
        }
        prev = ev.g;
    }
    // Report the value of the returned channel, not of the channel it was tilted from.
    res.channel = to_triple(pr, t);
    res.objective = gw_lagrangian_value(src, mult, levels, res.channel);
    res.channel.induce(src.pxy);
    return res;
}

LagrangianResult gw_lagrangian_solve(const JointSource& src, const GWMultipliers& mult, const GWLevels& levels,
                                     std::uint64_t seed, long max_iters, double tol) {
    check_source(src);
    Problem pr(src);
    const TestChannelTriple init = to_triple(pr, random_tables(pr, pr.nx * pr.ny + 2, seed, 0));
    return gw_lagrangian_solve(src, mult, levels, init, max_iters, tol);
}

GWPoint min_common_rate(const JointSource& src, const GWLevels& levels, const GWOptions& opts) {
    check_source(src);
    GWPoint pt;
    pt.r1 = levels.r1;
    pt.r2 = levels.r2;
    pt.d1 = levels.d1;
    pt.d2 = levels.d2;
    for (double v : {levels.r1, levels.r2, levels.d1, levels.d2})
        if (std::isnan(v)) throw Error(ErrorCode::domain, "min_common_rate: NaN level");
    if (levels.r1 < 0.0 || levels.r2 < 0.0 || levels.d1 < 0.0 || levels.d2 < 0.0) {
        pt.r0 = kInf;
        pt.feasible = false;
        pt.note = "negative rate or distortion level: no test channel meets the constraints";
        return pt;
    }
    if (levels.d1 == 0.0 || levels.d2 == 0.0)
        throw Error(ErrorCode::domain, "min_common_rate: distortion levels must be positive");
    Problem pr(src);

    const RDSolution rx = rate_distortion(src.pxy.marginal_x(), src.dx, levels.d1);
    const RDSolution ry = rate_distortion(src.pxy.marginal_y(), src.dy, levels.d2);
    if (rx.rate <= levels.r1 + 1e-12 && ry.rate <= levels.r2 + 1e-12) {
        Tables t;
        t.nw = 1;
        t.v.assign(pr.nx * pr.ny, 1.0);
        t.a = rx.channel[0].data();
        t.b = ry.channel[0].data();
        pt.channel = to_triple(pr, t);
        pt.channel.induce(src.pxy);
        pt.achieved = measures_raw(pr, t);
        pt.r0 = 0.0;
        pt.on_boundary = true;
        pt.restart_values = {0.0};
        pt.note = "constant auxiliary: private links alone meet both distortion levels";
        return pt;
    }

    const std::size_t nw = pr.nx * pr.ny + 2;
    const std::size_t restarts = static_cast<std::size_t>(std::max(0, opts.restarts));
    const bool warm = opts.warm_start && opts.warm_start->nx() == pr.nx && opts.warm_start->ny() == pr.ny &&
                      opts.warm_start->kx() == pr.kx && opts.warm_start->ky() == pr.ky;
    const std::size_t runs = restarts + 1 + (warm ? 1 : 0);
    std::vector<RunResult> results(runs);
    std::vector<std::string> failures(runs);
    detail::parallel_for(runs, opts.threads, [&](std::size_t r) {
        try {
            Tables start;
            if (r == 0)
                start = structured_tables(pr, src, levels, nw);
            else if (r <= restarts)
                start = random_tables(pr, nw, opts.seed, r);
            else
                start = from_triple(*opts.warm_start);
            results[r] = run_mm(pr, std::move(start), levels, opts);
        } catch (const std::exception& e) {
            failures[r] = e.what();
        }
    });

    std::size_t best = runs;
    double lo = kInf, hi = -kInf;
    for (std::size_t r = 0; r < runs; ++r) {
        pt.iterations += results[r].iterations;
        if (!failures[r].empty() || results[r].violation > opts.feasibility_tol) continue;
        const double v = results[r].meas.common;
        pt.restart_values.push_back(v);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
        if (best == runs || v < results[best].meas.common) best = r;
    }
    if (best == runs) {
        // Every run ended above the feasibility tolerance; report the least violating one.
        double least = kInf;
        for (std::size_t r = 0; r < runs; ++r)
            if (failures[r].empty() && results[r].violation < least) {
                least = results[r].violation;
                best = r;
            }
        if (best == runs) throw Error(ErrorCode::convergence, "min_common_rate: every run failed: " + failures[0]);
        pt.feasible = false;
        pt.note = "no run met the constraints within tolerance; least violation " + std::to_string(least);
    } else {
        pt.restart_spread = hi - lo;
        pt.on_boundary = true;
    }
    const RunResult& rr = results[best];
    pt.channel = to_triple(pr, rr.tables);
    pt.channel.prune(src.pxy, opts.prune_threshold);
    pt.achieved = gw_measures(pt.channel, src);
    pt.r0 = pt.achieved.common;
    auto clip = [](double v, double floor) { return v <= 10.0 * floor ? 0.0 : v; };
    pt.lambda1 = clip(rr.theta[0], kLambdaFloor);
    pt.lambda2 = clip(rr.theta[1], kLambdaFloor);
    pt.gamma1 = clip(rr.theta[2], kGammaFloor);
    pt.gamma2 = clip(rr.theta[3], kGammaFloor);
    return pt;
}

MultiplierEstimate multipliers(const JointSource& src, const GWLevels& levels, const GWOptions& opts) {
    MultiplierEstimate est;
    auto r0_at = [&](int coord, double delta) {
        GWLevels lv = levels;
        double* slot[4] = {&lv.r1, &lv.r2, &lv.d1, &lv.d2};
        *slot[coord] += delta;
        return min_common_rate(src, lv, opts).r0;
    };
    const double base[4] = {levels.r1, levels.r2, levels.d1, levels.d2};
    auto derivative = [&](int coord, double h, double& signal) {
        const bool is_rate = coord < 2;
        const double lower = base[coord] - h;
        if ((is_rate && lower >= 0.0) || (!is_rate && lower > 0.0)) {
            const double up = r0_at(coord, h);
            const double dn = r0_at(coord, -h);
            signal = std::fabs(up - dn);
            return (up - dn) / (2.0 * h);
        }
        const double at = r0_at(coord, 0.0);
        const double up = r0_at(coord, h);
        signal = std::fabs(up - at);
        return (up - at) / h;
    };
    double out[4];
    for (int c = 0; c < 4; ++c) {
        double signal = 0.0;
        double coarse = -derivative(c, 1e-3, signal);
        if (signal < 10.0 * opts.feasibility_tol) est.noisy = true;
        double fine_signal = 0.0;
        const double fine = -derivative(c, 5e-4, fine_signal);
        double value = coarse;
        if (std::fabs(fine - coarse) > 0.1 * std::max(std::fabs(fine), std::fabs(coarse))) {
            value = (4.0 * fine - coarse) / 3.0;
            est.richardson_used = true;
        }
        out[c] = std::max(0.0, value);
    }
    est.values = {out[0], out[1], out[2], out[3]};
    return est;
}

namespace {

// lambda (R - j(x,D|w)) with the inner density at ratio gamma/lambda; its lambda -> 0 limit when lambda is 0.
double private_term(double lambda, double gamma, double R, double D, std::size_t x, std::size_t w,
                    const TestChannelTriple& ch, const DistortionMeasure& d, bool is_x) {
    const std::size_t k = d.reproductions();
    auto q = [&](std::size_t j) { return is_x ? ch.xhat_given_w(w, j) : ch.yhat_given_w(w, j); };
    if (lambda <= 0.0) {
        if (gamma <= 0.0) return 0.0;
        double dmin = kInf;
        for (std::size_t j = 0; j < k; ++j)
            if (q(j) > 0.0) dmin = std::min(dmin, d(x, j));
        return gamma * (D - dmin);
    }
    std::vector<double> terms(k);
    for (std::size_t j = 0; j < k; ++j) terms[j] = safe_log2(q(j)) + (gamma / lambda) * (D - d(x, j));
    const double jx = -detail::log2_sum_exp2(terms.data(), k);
    return lambda * (R - jx);
}

}  // namespace

TiltedTable gw_tilted_density(const GWPoint& point, const JointPmf& p_xy, const DistortionMeasure& dx,
                              const DistortionMeasure& dy) {
    if (!point.feasible || !std::isfinite(point.r0))
        throw Error(ErrorCode::domain, "gw_tilted_density: point has no solved channel");
    if (point.lambda1 < 0.0 || point.lambda2 < 0.0 || point.gamma1 < 0.0 || point.gamma2 < 0.0)
        throw Error(ErrorCode::domain, "gw_tilted_density: negative multiplier");
    TestChannelTriple ch = point.channel;
    if (ch.nx() != p_xy.nx() || ch.ny() != p_xy.ny() || ch.kx() != dx.reproductions() || ch.ky() != dy.reproductions())
        throw Error(ErrorCode::shape, "gw_tilted_density: channel does not match the source");
    ch.induce(p_xy);
    TiltedTable t;
    t.values = Matrix(p_xy.nx(), p_xy.ny(), 0.0);
    std::vector<double> e(ch.nw());
    for (std::size_t x = 0; x < p_xy.nx(); ++x)
        for (std::size_t y = 0; y < p_xy.ny(); ++y) {
            for (std::size_t w = 0; w < ch.nw(); ++w) {
                const double pw = ch.p_w()[w];
                e[w] = pw > 0.0 ? std::log2(pw) +
                                      private_term(point.lambda1, point.gamma1, point.r1, point.d1, x, w, ch, dx, true) +
                                      private_term(point.lambda2, point.gamma2, point.r2, point.d2, y, w, ch, dy, false)
                                : kNegInf;
            }
            t.values(x, y) = -detail::log2_sum_exp2(e.data(), e.size());
        }
    fill_moments(t, p_xy);
    return t;
}

double tilted_decomposition_residual(const GWPoint& point, const TiltedTable& table, const JointSource& src) {
    TestChannelTriple ch = point.channel;
    ch.induce(src.pxy);
    double worst = 0.0;
    for (std::size_t w = 0; w < ch.nw(); ++w) {
        const double pw = ch.p_w()[w];
        if (pw <= 0.0) continue;
        for (std::size_t a = 0; a < ch.kx(); ++a) {
            if (ch.xhat_given_w(w, a) <= 0.0) continue;
            for (std::size_t b = 0; b < ch.ky(); ++b) {
                if (ch.yhat_given_w(w, b) <= 0.0) continue;
                for (std::size_t x = 0; x < ch.nx(); ++x)
                    for (std::size_t y = 0; y < ch.ny(); ++y) {
                        if (src.pxy(x, y) <= 0.0) continue;
                        const double v = ch.w_given_xy(x, y, w);
                        const double av = ch.xhat_given_xw(x, w, a);
                        const double bv = ch.yhat_given_yw(y, w, b);
                        if (v <= 0.0 || av <= 0.0 || bv <= 0.0) continue;
                        const double rhs = std::log2(v / pw) +
                                           point.lambda1 * (std::log2(av / ch.xhat_given_w(w, a)) - point.r1) +
                                           point.lambda2 * (std::log2(bv / ch.yhat_given_w(w, b)) - point.r2) +
                                           point.gamma1 * (src.dx(x, a) - point.d1) +
                                           point.gamma2 * (src.dy(y, b) - point.d2);
                        worst = std::max(worst, std::fabs(table.values(x, y) - rhs));
                    }
            }
        }
    }
    return worst;
}

Dispersion dispersion(const TiltedTable& table, const JointPmf& p_xy) {
    if (table.values.rows() != p_xy.nx() || table.values.cols() != p_xy.ny())
        throw Error(ErrorCode::shape, "dispersion: table shape mismatch");
    TiltedTable t = table;
    fill_moments(t, p_xy);
    return {t.variance, t.third_abs_moment};
}

DerivativeCheck source_derivative_check(const JointSource& src, const GWPoint& point, std::size_t index, double step,
                                        const GWOptions& opts) {
    const SortedSupport ss = sorted_support(src.pxy);
    if (index >= ss.m) throw Error(ErrorCode::domain, "source_derivative_check: support index out of range");
    DerivativeCheck out;
    out.cell_i = ss.pairs[index];
    out.cell_m = ss.pairs[ss.m - 1];
    if (index == ss.m - 1) return out;
    const double pi = ss.probs[index];
    const double pm = ss.probs[ss.m - 1];
    if (!(step > 0.0) || pi - step < 0.0 || pm - step < 0.0)
        throw Error(ErrorCode::domain, "source_derivative_check: perturbation leaves the simplex");
    auto shifted = [&](double delta) {
        Matrix m = src.pxy.matrix();
        m(out.cell_i.first, out.cell_i.second) += delta;
        m(out.cell_m.first, out.cell_m.second) -= delta;
        return JointSource{JointPmf(std::move(m)), src.dx, src.dy};
    };
    const GWLevels lv{point.r1, point.r2, point.d1, point.d2};
    const double up = min_common_rate(shifted(step), lv, opts).r0;
    const double dn = min_common_rate(shifted(-step), lv, opts).r0;
    out.finite_difference = (up - dn) / (2.0 * step);
    const TiltedTable t = gw_tilted_density(point, src.pxy, src.dx, src.dy);
    out.tilted_difference = t.values(out.cell_i.first, out.cell_i.second) - t.values(out.cell_m.first, out.cell_m.second);
    out.predicted = out.tilted_difference - kLog2E;
    return out;
}

PanglossReport pangloss_membership(const JointSource& src, double r0, double r1, double r2, double d1, double d2) {
    check_source(src);
    PanglossReport rep;
    rep.joint_rd = joint_rate_distortion(src.pxy, src.dx, src.dy, d1, d2).rate;
    rep.rd_x = rate_distortion(src.pxy.marginal_x(), src.dx, d1).rate;
    rep.rd_y = rate_distortion(src.pxy.marginal_y(), src.dy, d2).rate;
    rep.sum_gap = r0 + r1 + r2 - rep.joint_rd;
    rep.x_slack = r0 + r1 - rep.rd_x;
    rep.y_slack = r0 + r2 - rep.rd_y;
    rep.member = std::fabs(rep.sum_gap) <= 1e-4 && rep.x_slack >= -1e-6 && rep.y_slack >= -1e-6;
    return rep;
}

}  // namespace gwlab
