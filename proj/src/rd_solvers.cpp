#include "gwlab/rd_solvers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "internal.hpp"

namespace gwlab {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kSlopeCeiling = 1e4;
// First bracket slope. Slopes 1.1 * 2^k are never log2 of a rational, so brackets of type-valued sources
// do not land on a critical slope where the fixed-slope iteration converges sublinearly.
constexpr double kSlopeStart = 1.1;

// Regula falsi with the Illinois weight halving, for a nonincreasing excess g with g(lo) > 0 >= g(hi).
// probe(s) returns g(s) and keeps its own record of the last probe with g <= 0. Falls back to bisection
// whenever two steps fail to halve the bracket, so jumps in g are still located.
template <class Probe>
void falsi_search(double& lo, double& hi, double glo, double ghi, Probe probe) {
    double wlo = glo, whi = ghi;
    int last = 0;
    double width_before = hi - lo;
    for (int it = 0; it < 200; ++it) {
        const double width = hi - lo;
        if (width <= 1e-13 * hi || ghi >= -1e-14) break;
        double s = hi - whi * width / (whi - wlo);
        if (it % 2 == 1) {
            if (width > 0.5 * width_before) s = 0.5 * (lo + hi);
            width_before = width;
        }
        if (!(s > lo && s < hi)) s = 0.5 * (lo + hi);
        const double gs = probe(s);
        if (gs > 0.0) {
            lo = s;
            glo = wlo = gs;
            if (last < 0) whi *= 0.5;
            last = -1;
        } else {
            hi = s;
            ghi = whi = gs;
            if (last > 0) wlo *= 0.5;
            last = 1;
        }
    }
}

// One fixed-slope Blahut-Arimoto run over ns source cells and nr reproduction cells.
// log_kernel(i,k) is -(slope-weighted distortion) in bits, or -inf for forbidden cells.
struct BARun {
    double lagrangian = 0.0;
    double rate = 0.0;
    double dist1 = 0.0;
    double dist2 = 0.0;
    double gap = 0.0;
    long iterations = 0;
    bool converged = false;
    std::vector<double> channel;
    std::vector<double> output;
};

BARun ba_fixed(const std::vector<double>& p, std::size_t nr, const std::vector<double>& log_kernel,
               const std::vector<double>& d1, const std::vector<double>* d2, std::vector<double>& q,
               const SolverOptions& opts) {
    const std::size_t ns = p.size();
    BARun run;
    std::vector<double> lc(ns);
    std::vector<double> ratio(nr);
    std::vector<double> logq(nr);
    double prev = std::numeric_limits<double>::infinity();
    for (long it = 0; it < opts.max_iters; ++it) {
        for (std::size_t k = 0; k < nr; ++k) logq[k] = q[k] > 0.0 ? std::log2(q[k]) : kNegInf;
        double J = 0.0;
        for (std::size_t i = 0; i < ns; ++i) {
            lc[i] = detail::log2_sum_exp2(&logq[0], &log_kernel[i * nr], nr);
            J -= p[i] * lc[i];
        }
        std::fill(ratio.begin(), ratio.end(), 0.0);
        for (std::size_t i = 0; i < ns; ++i) {
            if (p[i] <= 0.0) continue;
            for (std::size_t k = 0; k < nr; ++k) {
                const double lk = log_kernel[i * nr + k];
                if (lk == kNegInf) continue;
                ratio[k] += p[i] * std::exp2(lk - lc[i]);
            }
        }
        double rmax = 0.0;
        for (std::size_t k = 0; k < nr; ++k) rmax = std::max(rmax, ratio[k]);
        run.gap = std::max(0.0, std::log2(rmax));
        run.iterations = it + 1;
        if (opts.on_iteration) opts.on_iteration(it, J);
        for (std::size_t k = 0; k < nr; ++k) q[k] *= ratio[k];
        if (run.gap <= opts.gap_tol || (J == prev && run.gap <= 1e-9)) {
            run.converged = true;
            break;
        }
        prev = J;
    }
    // Channel is the tilt of the final output marginal; report its induced statistics.
    for (std::size_t k = 0; k < nr; ++k) logq[k] = q[k] > 0.0 ? std::log2(q[k]) : kNegInf;
    run.channel.assign(ns * nr, 0.0);
    run.output.assign(nr, 0.0);
    for (std::size_t i = 0; i < ns; ++i) {
        const double l = detail::log2_sum_exp2(&logq[0], &log_kernel[i * nr], nr);
        for (std::size_t k = 0; k < nr; ++k) {
            const double e = logq[k] + log_kernel[i * nr + k];
            const double c = e == kNegInf ? 0.0 : std::exp2(e - l);
            run.channel[i * nr + k] = c;
            run.output[k] += p[i] * c;
        }
        run.lagrangian -= p[i] * l;
    }
    for (std::size_t i = 0; i < ns; ++i) {
        for (std::size_t k = 0; k < nr; ++k) {
            const double c = run.channel[i * nr + k];
            // A subnormal c can have p*c and the output entry round to zero.
            if (p[i] * c <= 0.0 || run.output[k] <= 0.0) continue;
            run.rate += p[i] * c * std::log2(c / run.output[k]);
            run.dist1 += p[i] * c * d1[i * nr + k];
            if (d2) run.dist2 += p[i] * c * (*d2)[i * nr + k];
        }
    }
    run.rate = std::max(run.rate, 0.0);
    return run;
}

void check_level(double D, const char* what) {
    if (std::isnan(D)) throw Error(ErrorCode::domain, std::string(what) + ": distortion level is NaN");
    if (D < 0.0) throw Error(ErrorCode::infeasible, std::string(what) + ": negative distortion level");
}

// Lossless branch: true when zero-distortion reproduction sets are disjoint on the support,
// so X is a function of the reproduction and the rate is the source entropy.
bool zero_sets_disjoint(const std::vector<std::size_t>& letters, const DistortionMeasure& d) {
    std::vector<int> owner(d.reproductions(), -1);
    for (std::size_t x : letters)
        for (std::size_t k = 0; k < d.reproductions(); ++k)
            if (d(x, k) == 0.0) {
                if (owner[k] >= 0 && static_cast<std::size_t>(owner[k]) != x) return false;
                owner[k] = static_cast<int>(x);
            }
    return true;
}

std::size_t first_zero(const DistortionMeasure& d, std::size_t x) {
    for (std::size_t k = 0; k < d.reproductions(); ++k)
        if (d(x, k) == 0.0) return k;
    return 0;
}

// Per-block data for the (conditional) single-constraint solver.
struct Block {
    double weight = 0.0;
    std::vector<std::size_t> letters;  // support of p(.|w)
    std::vector<double> p;             // p(x|w) on the support
    std::vector<double> dist;          // |support| x |X^|
    std::vector<double> q;             // warm-start output marginal
    BARun run;
};

struct SlopeEval {
    double distortion = 0.0;
    std::vector<BARun> runs;
};

RDSolution solve_blocks(std::vector<Block>& blocks, std::size_t nx, const DistortionMeasure& d, double D,
                        const SolverOptions& opts) {
    const std::size_t nr = d.reproductions();
    RDSolution sol;
    sol.channel.assign(blocks.size(), Matrix(nx, nr, 0.0));
    sol.output = Matrix(blocks.size(), nr, 0.0);

    auto write_block = [&](std::size_t b, const std::vector<double>& ch) {
        const Block& blk = blocks[b];
        for (std::size_t x = 0; x < nx; ++x) sol.channel[b](x, 0) = 0.0;
        // Letters outside the support keep a deterministic zero-distortion row.
        for (std::size_t x = 0; x < nx; ++x) {
            for (std::size_t k = 0; k < nr; ++k) sol.channel[b](x, k) = 0.0;
            sol.channel[b](x, first_zero(d, x)) = 1.0;
        }
        for (std::size_t i = 0; i < blk.letters.size(); ++i)
            for (std::size_t k = 0; k < nr; ++k) sol.channel[b](blk.letters[i], k) = ch[i * nr + k];
        for (std::size_t k = 0; k < nr; ++k) {
            double o = 0.0;
            for (std::size_t i = 0; i < blk.letters.size(); ++i) o += blk.p[i] * ch[i * nr + k];
            sol.output(b, k) = o;
        }
    };
    auto finish_rates = [&]() {
        sol.rate = 0.0;
        sol.distortion = 0.0;
        for (std::size_t b = 0; b < blocks.size(); ++b) {
            const Block& blk = blocks[b];
            for (std::size_t i = 0; i < blk.letters.size(); ++i)
                for (std::size_t k = 0; k < nr; ++k) {
                    const double c = sol.channel[b](blk.letters[i], k);
                    if (blk.weight * blk.p[i] * c <= 0.0 || sol.output(b, k) <= 0.0) continue;
                    sol.rate += blk.weight * blk.p[i] * c * std::log2(c / sol.output(b, k));
                    sol.distortion += blk.weight * blk.p[i] * c * blk.dist[i * nr + k];
                }
        }
        sol.rate = std::max(sol.rate, 0.0);
    };

    // Largest useful level: the best constant reproduction per block.
    double dmax = 0.0;
    std::vector<std::size_t> best_const(blocks.size(), 0);
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        const Block& blk = blocks[b];
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < nr; ++k) {
            double e = 0.0;
            for (std::size_t i = 0; i < blk.letters.size(); ++i) e += blk.p[i] * blk.dist[i * nr + k];
            if (e < best) {
                best = e;
                best_const[b] = k;
            }
        }
        dmax += blk.weight * best;
    }
    if (D >= dmax) {
        for (std::size_t b = 0; b < blocks.size(); ++b) {
            std::vector<double> ch(blocks[b].letters.size() * nr, 0.0);
            for (std::size_t i = 0; i < blocks[b].letters.size(); ++i) ch[i * nr + best_const[b]] = 1.0;
            write_block(b, ch);
        }
        finish_rates();
        sol.rate = 0.0;
        sol.slope = 0.0;
        return sol;
    }

    if (D == 0.0) {
        sol.slope = std::numeric_limits<double>::infinity();
        bool all_disjoint = true;
        for (const Block& blk : blocks) all_disjoint = all_disjoint && zero_sets_disjoint(blk.letters, d);
        for (std::size_t b = 0; b < blocks.size(); ++b) {
            Block& blk = blocks[b];
            const std::size_t ns = blk.letters.size();
            if (all_disjoint) {
                std::vector<double> ch(ns * nr, 0.0);
                for (std::size_t i = 0; i < ns; ++i) ch[i * nr + first_zero(d, blk.letters[i])] = 1.0;
                write_block(b, ch);
                continue;
            }
            std::vector<double> lk(ns * nr);
            for (std::size_t i = 0; i < ns * nr; ++i) lk[i] = blk.dist[i] == 0.0 ? 0.0 : kNegInf;
            blk.run = ba_fixed(blk.p, nr, lk, blk.dist, nullptr, blk.q, opts);
            sol.iterations += blk.run.iterations;
            sol.converged = sol.converged && blk.run.converged;
            write_block(b, blk.run.channel);
        }
        finish_rates();
        return sol;
    }

    auto eval = [&](double s) {
        SlopeEval ev;
        for (Block& blk : blocks) {
            const std::size_t ns = blk.letters.size();
            std::vector<double> lk(ns * nr);
            for (std::size_t i = 0; i < ns * nr; ++i) lk[i] = -s * blk.dist[i];
            BARun run = ba_fixed(blk.p, nr, lk, blk.dist, nullptr, blk.q, opts);
            sol.iterations += run.iterations;
            ev.distortion += blk.weight * run.dist1;
            ev.runs.push_back(std::move(run));
        }
        return ev;
    };

    double lo = 0.0;
    double hi = kSlopeStart;
    SlopeEval ev_hi = eval(hi);
    SlopeEval ev_lo;
    bool have_lo = false;
    while (ev_hi.distortion > D && hi < kSlopeCeiling) {
        lo = hi;
        ev_lo = std::move(ev_hi);
        have_lo = true;
        hi *= 2.0;
        ev_hi = eval(hi);
    }
    for (int it = 0; it < 200; ++it) {
        if (hi - lo <= 1e-13 * hi) break;
        if (std::fabs(ev_hi.distortion - D) <= 1e-14) break;
        const double mid = 0.5 * (lo + hi);
        SlopeEval ev = eval(mid);
        if (ev.distortion > D) {
            lo = mid;
            ev_lo = std::move(ev);
            have_lo = true;
        } else {
            hi = mid;
            ev_hi = std::move(ev);
        }
    }
    if (ev_hi.distortion > D && !(hi < kSlopeCeiling)) sol.converged = false;
    sol.slope = hi;
    // Time-share the two bracketing channels when the distortion curve jumps at this slope.
    double alpha = 0.0;
    if (have_lo && ev_lo.distortion > D && D - ev_hi.distortion > 1e-12)
        alpha = (D - ev_hi.distortion) / (ev_lo.distortion - ev_hi.distortion);
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        std::vector<double> ch = ev_hi.runs[b].channel;
        if (alpha > 0.0)
            for (std::size_t i = 0; i < ch.size(); ++i) ch[i] = alpha * ev_lo.runs[b].channel[i] + (1.0 - alpha) * ch[i];
        sol.converged = sol.converged && ev_hi.runs[b].converged;
        write_block(b, ch);
    }
    finish_rates();
    return sol;
}

Block make_block(const std::vector<double>& px, const DistortionMeasure& d, double weight) {
    Block blk;
    blk.weight = weight;
    const std::size_t nr = d.reproductions();
    double total = 0.0;
    for (double v : px) total += v;
    for (std::size_t x = 0; x < px.size(); ++x) {
        if (px[x] <= 0.0) continue;
        blk.letters.push_back(x);
        blk.p.push_back(px[x] / total);
        for (std::size_t k = 0; k < nr; ++k) blk.dist.push_back(d(x, k));
    }
    blk.q.assign(nr, 1.0 / static_cast<double>(nr));
    return blk;
}

}  // namespace

namespace detail {

double log2_sum_exp2(const double* a, const double* b, std::size_t n) {
    double m = kNegInf;
    for (std::size_t k = 0; k < n; ++k) m = std::max(m, a[k] + b[k]);
    if (m == kNegInf) return kNegInf;
    double s = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double e = a[k] + b[k];
        if (e != kNegInf) s += std::exp2(e - m);
    }
    return m + std::log2(s);
}

double log2_sum_exp2(const double* a, std::size_t n) {
    double m = kNegInf;
    for (std::size_t k = 0; k < n; ++k) m = std::max(m, a[k]);
    if (m == kNegInf) return kNegInf;
    double s = 0.0;
    for (std::size_t k = 0; k < n; ++k)
        if (a[k] != kNegInf) s += std::exp2(a[k] - m);
    return m + std::log2(s);
}

}  // namespace detail

RDSolution rate_distortion(const Pmf& p, const DistortionMeasure& d, double D, const SolverOptions& opts) {
    check_level(D, "rate_distortion");
    if (p.size() != d.sources()) throw Error(ErrorCode::shape, "rate_distortion: pmf and distortion sizes differ");
    std::vector<Block> blocks{make_block(p.probs(), d, 1.0)};
    RDSolution sol = solve_blocks(blocks, p.size(), d, D, opts);
    return sol;
}

RDSolution conditional_rate_distortion(const JointPmf& p_xw, const DistortionMeasure& d, double D,
                                       const SolverOptions& opts) {
    check_level(D, "conditional_rate_distortion");
    if (p_xw.nx() != d.sources()) throw Error(ErrorCode::shape, "conditional_rate_distortion: |X| mismatch");
    const std::size_t nx = p_xw.nx();
    const std::size_t nw = p_xw.ny();
    std::vector<Block> blocks;
    std::vector<std::size_t> index;
    for (std::size_t w = 0; w < nw; ++w) {
        std::vector<double> col(nx);
        double pw = 0.0;
        for (std::size_t x = 0; x < nx; ++x) {
            col[x] = p_xw(x, w);
            pw += col[x];
        }
        if (pw <= 0.0) continue;
        blocks.push_back(make_block(col, d, pw));
        index.push_back(w);
    }
    RDSolution inner = solve_blocks(blocks, nx, d, D, opts);
    // Re-expand to the full W alphabet; empty conditioning letters get a zero-distortion map.
    RDSolution sol = inner;
    sol.channel.assign(nw, Matrix(nx, d.reproductions(), 0.0));
    sol.output = Matrix(nw, d.reproductions(), 0.0);
    for (std::size_t w = 0; w < nw; ++w)
        for (std::size_t x = 0; x < nx; ++x) sol.channel[w](x, first_zero(d, x)) = 1.0;
    for (std::size_t b = 0; b < index.size(); ++b) {
        sol.channel[index[b]] = inner.channel[b];
        for (std::size_t k = 0; k < d.reproductions(); ++k) sol.output(index[b], k) = inner.output(b, k);
    }
    return sol;
}

JointRDSolution joint_rate_distortion(const JointPmf& p_xy, const DistortionMeasure& dx, const DistortionMeasure& dy,
                                      double D1, double D2, const SolverOptions& opts) {
    check_level(D1, "joint_rate_distortion");
    check_level(D2, "joint_rate_distortion");
    if (p_xy.nx() != dx.sources() || p_xy.ny() != dy.sources())
        throw Error(ErrorCode::shape, "joint_rate_distortion: source and distortion sizes differ");
    const std::size_t nx = p_xy.nx();
    const std::size_t ny = p_xy.ny();
    const std::size_t kx = dx.reproductions();
    const std::size_t ky = dy.reproductions();
    const std::size_t nr = kx * ky;

    std::vector<std::size_t> cells;
    std::vector<double> p;
    for (std::size_t x = 0; x < nx; ++x)
        for (std::size_t y = 0; y < ny; ++y)
            if (p_xy(x, y) > 0.0) {
                cells.push_back(x * ny + y);
                p.push_back(p_xy(x, y));
            }
    const std::size_t ns = cells.size();
    std::vector<double> d1(ns * nr);
    std::vector<double> d2(ns * nr);
    for (std::size_t i = 0; i < ns; ++i) {
        const std::size_t x = cells[i] / ny;
        const std::size_t y = cells[i] % ny;
        for (std::size_t a = 0; a < kx; ++a)
            for (std::size_t b = 0; b < ky; ++b) {
                d1[i * nr + a * ky + b] = dx(x, a);
                d2[i * nr + a * ky + b] = dy(y, b);
            }
    }

    JointRDSolution sol;
    sol.channel = Matrix(nx * ny, nr, 0.0);
    sol.output = Matrix(kx, ky, 0.0);

    // Zero rate when a single reproduction pair meets both levels.
    {
        double best = std::numeric_limits<double>::infinity();
        std::size_t best_k = nr;
        for (std::size_t k = 0; k < nr; ++k) {
            double e1 = 0.0;
            double e2 = 0.0;
            for (std::size_t i = 0; i < ns; ++i) {
                e1 += p[i] * d1[i * nr + k];
                e2 += p[i] * d2[i * nr + k];
            }
            if (e1 <= D1 && e2 <= D2 && e1 + e2 < best) {
                best = e1 + e2;
                best_k = k;
                sol.d1 = e1;
                sol.d2 = e2;
            }
        }
        if (best_k < nr) {
            for (std::size_t c = 0; c < nx * ny; ++c) sol.channel(c, best_k) = 1.0;
            sol.output(best_k / ky, best_k % ky) = 1.0;
            return sol;
        }
    }

    std::vector<double> q(nr, 1.0 / static_cast<double>(nr));
    std::vector<double> lk(ns * nr);
    auto eval = [&](double n1, double n2) {
        for (std::size_t i = 0; i < ns * nr; ++i) {
            const bool forbid = (D1 == 0.0 && d1[i] > 0.0) || (D2 == 0.0 && d2[i] > 0.0);
            if (forbid) {
                lk[i] = kNegInf;
                continue;
            }
            double v = 0.0;
            if (D1 > 0.0) v -= n1 * d1[i];
            if (D2 > 0.0) v -= n2 * d2[i];
            lk[i] = v;
        }
        BARun run = ba_fixed(p, nr, lk, d1, &d2, q, opts);
        sol.iterations += run.iterations;
        return run;
    };

    // Inner search: slope on the second constraint for a fixed first slope.
    auto inner = [&](double n1, double& n2_out) {
        if (D2 == 0.0) {
            n2_out = 0.0;
            return eval(n1, 0.0);
        }
        BARun r0 = eval(n1, 0.0);
        if (r0.dist2 <= D2) {
            n2_out = 0.0;
            return r0;
        }
        double lo = 0.0;
        double hi = kSlopeStart;
        BARun rhi = eval(n1, hi);
        if (rhi.dist2 <= D2) {
            // A flat direction at zero slope keeps whatever split it starts from; restarting from the
            // positive-slope output settles slack constraints without bisecting toward zero.
            q = rhi.output;
            BARun rz = eval(n1, 0.0);
            if (rz.dist2 <= D2) {
                n2_out = 0.0;
                return rz;
            }
            q = rhi.output;
        }
        double glo = r0.dist2 - D2;
        while (rhi.dist2 > D2 && hi < kSlopeCeiling) {
            lo = hi;
            glo = rhi.dist2 - D2;
            hi *= 2.0;
            rhi = eval(n1, hi);
        }
        if (rhi.dist2 <= D2)
            falsi_search(lo, hi, glo, rhi.dist2 - D2, [&](double mid) {
                BARun r = eval(n1, mid);
                const double g = r.dist2 - D2;
                if (g <= 0.0) rhi = std::move(r);
                return g;
            });
        n2_out = hi;
        return rhi;
    };

    double n1 = 0.0;
    double n2 = 0.0;
    BARun best;
    if (D1 == 0.0) {
        best = inner(0.0, n2);
    } else {
        BARun r0 = inner(0.0, n2);
        if (r0.dist1 <= D1) {
            best = std::move(r0);
        } else {
            double lo = 0.0;
            double hi = kSlopeStart;
            double n2_hi = 0.0;
            BARun rhi = inner(hi, n2_hi);
            bool slack = false;
            if (rhi.dist1 <= D1) {
                q = rhi.output;
                double n2_zero = 0.0;
                BARun rz = inner(0.0, n2_zero);
                if (rz.dist1 <= D1) {
                    slack = true;
                    n2_hi = n2_zero;
                    hi = 0.0;
                    rhi = std::move(rz);
                } else {
                    q = rhi.output;
                }
            }
            double glo = r0.dist1 - D1;
            while (!slack && rhi.dist1 > D1 && hi < kSlopeCeiling) {
                lo = hi;
                glo = rhi.dist1 - D1;
                hi *= 2.0;
                rhi = inner(hi, n2_hi);
            }
            if (!slack && rhi.dist1 <= D1)
                falsi_search(lo, hi, glo, rhi.dist1 - D1, [&](double mid) {
                    double n2_mid = 0.0;
                    BARun r = inner(mid, n2_mid);
                    const double g = r.dist1 - D1;
                    if (g <= 0.0) {
                        n2_hi = n2_mid;
                        rhi = std::move(r);
                    }
                    return g;
                });
            n1 = hi;
            n2 = n2_hi;
            best = std::move(rhi);
        }
    }
    // Recompute once at the final slopes so channel and output marginal are mutually consistent.
    q = best.output;
    BARun fin = eval(n1, n2);
    sol.rate = fin.rate;
    sol.d1 = fin.dist1;
    sol.d2 = fin.dist2;
    sol.nu1 = D1 == 0.0 ? std::numeric_limits<double>::infinity() : n1;
    sol.nu2 = D2 == 0.0 ? std::numeric_limits<double>::infinity() : n2;
    sol.converged = fin.converged && (D1 == 0.0 || fin.dist1 <= D1 + 1e-8) && (D2 == 0.0 || fin.dist2 <= D2 + 1e-8);
    for (std::size_t k = 0; k < nr; ++k) sol.output(k / ky, k % ky) = fin.output[k];
    // Every source cell, including zero-probability ones, gets the tilt row.
    std::vector<double> logq(nr);
    for (std::size_t k = 0; k < nr; ++k) logq[k] = fin.output[k] > 0.0 ? std::log2(fin.output[k]) : kNegInf;
    for (std::size_t x = 0; x < nx; ++x)
        for (std::size_t y = 0; y < ny; ++y) {
            std::vector<double> row(nr);
            for (std::size_t a = 0; a < kx; ++a)
                for (std::size_t b = 0; b < ky; ++b) {
                    const bool forbid = (D1 == 0.0 && dx(x, a) > 0.0) || (D2 == 0.0 && dy(y, b) > 0.0);
                    double v = 0.0;
                    if (D1 > 0.0) v -= n1 * dx(x, a);
                    if (D2 > 0.0) v -= n2 * dy(y, b);
                    row[a * ky + b] = forbid ? kNegInf : logq[a * ky + b] + v;
                }
            const double l = detail::log2_sum_exp2(row.data(), nr);
            for (std::size_t k = 0; k < nr; ++k)
                sol.channel(x * ny + y, k) = row[k] == kNegInf || l == kNegInf ? 0.0 : std::exp2(row[k] - l);
        }
    return sol;
}

void fill_moments(TiltedTable& table, const JointPmf& p) {
    double mean = 0.0;
    for (std::size_t x = 0; x < p.nx(); ++x)
        for (std::size_t y = 0; y < p.ny(); ++y)
            if (p(x, y) > 0.0) mean += p(x, y) * table.values(x, y);
    double var = 0.0;
    double third = 0.0;
    for (std::size_t x = 0; x < p.nx(); ++x)
        for (std::size_t y = 0; y < p.ny(); ++y)
            if (p(x, y) > 0.0) {
                const double c = table.values(x, y) - mean;
                var += p(x, y) * c * c;
                third += p(x, y) * std::fabs(c) * c * c;
            }
    table.mean = mean;
    table.variance = var;
    table.third_abs_moment = third;
}

TiltedTable joint_tilted_density(const JointRDSolution& sol, const JointPmf& p_xy, const DistortionMeasure& dx,
                                 const DistortionMeasure& dy, double D1, double D2) {
    if (!std::isfinite(sol.nu1) || !std::isfinite(sol.nu2) || sol.nu1 < 0.0 || sol.nu2 < 0.0)
        throw Error(ErrorCode::domain, "joint_tilted_density: solution lacks finite non-negative slopes");
    const std::size_t kx = dx.reproductions();
    const std::size_t ky = dy.reproductions();
    if (sol.output.rows() != kx || sol.output.cols() != ky)
        throw Error(ErrorCode::shape, "joint_tilted_density: output marginal shape mismatch");
    TiltedTable t;
    t.values = Matrix(p_xy.nx(), p_xy.ny(), 0.0);
    std::vector<double> terms(kx * ky);
    std::vector<double> zero(kx * ky, 0.0);
    for (std::size_t x = 0; x < p_xy.nx(); ++x)
        for (std::size_t y = 0; y < p_xy.ny(); ++y) {
            for (std::size_t a = 0; a < kx; ++a)
                for (std::size_t b = 0; b < ky; ++b) {
                    const double q = sol.output(a, b);
                    terms[a * ky + b] = q > 0.0 ? std::log2(q) + sol.nu1 * (D1 - dx(x, a)) + sol.nu2 * (D2 - dy(y, b))
                                                : kNegInf;
                }
            t.values(x, y) = -detail::log2_sum_exp2(terms.data(), zero.data(), terms.size());
        }
    fill_moments(t, p_xy);
    return t;
}

std::vector<double> conditional_d_tilted(const std::vector<double>& out_marginal, const DistortionMeasure& d, double D,
                                         double gamma_over_lambda) {
    if (!(gamma_over_lambda > 0.0) || !std::isfinite(gamma_over_lambda))
        throw Error(ErrorCode::domain, "conditional_d_tilted: ratio must be positive and finite");
    if (out_marginal.size() != d.reproductions()) throw Error(ErrorCode::shape, "conditional_d_tilted: marginal size mismatch");
    std::vector<double> out(d.sources());
    std::vector<double> terms(d.reproductions());
    for (std::size_t x = 0; x < d.sources(); ++x) {
        for (std::size_t k = 0; k < d.reproductions(); ++k)
            terms[k] = out_marginal[k] > 0.0 ? std::log2(out_marginal[k]) + gamma_over_lambda * (D - d(x, k)) : kNegInf;
        out[x] = -detail::log2_sum_exp2(terms.data(), terms.size());
    }
    return out;
}

}  // namespace gwlab
