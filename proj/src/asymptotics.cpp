#include "gwlab/asymptotics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>

#include "gwlab/rng.hpp"
#include "internal.hpp"

namespace gwlab {

SecondOrderRegion second_order_region(const GWPoint& point, double V, double eps) {
    if (!(V >= 0.0)) throw Error(ErrorCode::domain, "second_order_region: negative dispersion");
    return {point.lambda1, point.lambda2, std::sqrt(V) * q_inverse(eps)};
}

bool second_order_contains(const SecondOrderRegion& region, const std::array<double, 3>& L) {
    return L[0] + region.lambda1 * L[1] + region.lambda2 * L[2] >= region.threshold;
}

ExcessApprox gaussian_excess_approx(const GWPoint& point, double V, double T, double n, const std::array<double, 3>& L) {
    if (!(V > 0.0)) throw Error(ErrorCode::domain, "gaussian_excess_approx: zero dispersion (degenerate source)");
    if (!(n >= 1.0)) throw Error(ErrorCode::domain, "gaussian_excess_approx: n must be at least 1");
    ExcessApprox a;
    a.central = q_function((L[0] + point.lambda1 * L[1] + point.lambda2 * L[2]) / std::sqrt(V));
    a.slack = 6.0 * T / (std::sqrt(n) * std::pow(V, 1.5));
    a.lower = std::max(0.0, a.central - a.slack);
    a.upper = std::min(1.0, a.central + a.slack);
    return a;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Q restricted to the support of P, as a vector over support cells.
struct SupportMap {
    std::vector<std::pair<std::size_t, std::size_t>> cells;
    std::vector<double> p;
    std::size_t nx = 0, ny = 0;
};

SupportMap support_map(const JointPmf& p) {
    SupportMap s;
    s.nx = p.nx();
    s.ny = p.ny();
    s.cells = p.support();
    for (auto [x, y] : s.cells) s.p.push_back(p(x, y));
    return s;
}

JointPmf expand(const SupportMap& s, const std::vector<double>& q) {
    Matrix m(s.nx, s.ny, 0.0);
    double total = 0.0;
    for (double v : q) total += v;
    for (std::size_t i = 0; i < q.size(); ++i) m(s.cells[i].first, s.cells[i].second) = q[i] / total;
    return JointPmf::normalize(std::move(m));
}

double kl_support(const std::vector<double>& q, const std::vector<double>& p) {
    double d = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i)
        if (q[i] > 0.0) d += q[i] * std::log2(q[i] / p[i]);
    return std::max(0.0, d);
}

struct R0Eval {
    double r0 = 0.0;
    std::vector<double> j;  // over support cells
    std::optional<TestChannelTriple> channel;
    bool ok = false;
};

// Least-common-rate oracle with a cache keyed by the quantized pmf.
class R0Oracle {
  public:
    R0Oracle(const JointSource& src, const SupportMap& sm, const GWLevels& lv, const GWOptions& inner)
        : src_(src), sm_(sm), lv_(lv), inner_(inner) {}

    R0Eval eval(const std::vector<double>& q, const std::optional<TestChannelTriple>& warm) {
        std::vector<long long> key(q.size());
        double total = std::accumulate(q.begin(), q.end(), 0.0);
        for (std::size_t i = 0; i < q.size(); ++i) key[i] = std::llround(q[i] / total * 1e12);
        {
            std::lock_guard<std::mutex> lock(mu_);
            auto it = cache_.find(key);
            if (it != cache_.end()) return it->second;
        }
        R0Eval out;
        try {
            JointSource s{expand(sm_, q), src_.dx, src_.dy};
            GWOptions o = inner_;
            o.warm_start = warm;
            const GWPoint pt = min_common_rate(s, lv_, o);
            if (pt.feasible && std::isfinite(pt.r0)) {
                const TiltedTable t = gw_tilted_density(pt, s.pxy, s.dx, s.dy);
                out.r0 = pt.r0;
                for (auto [x, y] : sm_.cells) out.j.push_back(t.values(x, y));
                if (pt.channel.nw() == s.pxy.nx() * s.pxy.ny() + 2) out.channel = pt.channel;
                out.ok = true;
            }
        } catch (const Error&) {
            out.ok = false;
        }
        std::lock_guard<std::mutex> lock(mu_);
        ++evaluations_;
        cache_.emplace(std::move(key), out);
        return out;
    }

    long evaluations() const { return evaluations_; }

  private:
    const JointSource& src_;
    const SupportMap& sm_;
    GWLevels lv_;
    GWOptions inner_;
    std::mutex mu_;
    std::map<std::vector<long long>, R0Eval> cache_;
    long evaluations_ = 0;
};

struct Candidate {
    std::vector<double> q;
    double kl = kInf;
    double r0 = 0.0;
    bool feasible = false;
};

Candidate descend(R0Oracle& oracle, const SupportMap& sm, std::vector<double> q, double r0, const ExponentOptions& opts) {
    std::optional<TestChannelTriple> warm;
    auto phi = [&](const std::vector<double>& qq, double mu, R0Eval& ev) {
        ev = oracle.eval(qq, warm);
        if (!ev.ok) return kInf;
        const double v = std::max(0.0, r0 - ev.r0);
        return kl_support(qq, sm.p) + mu * v * v;
    };
    R0Eval ev;
    for (double mu : opts.penalty_schedule) {
        double f = phi(q, mu, ev);
        if (!std::isfinite(f)) break;
        if (ev.channel) warm = ev.channel;
        double step = opts.initial_step;
        for (int it = 0; it < opts.max_steps_per_stage && step > 1e-12; ++it) {
            const double viol = std::max(0.0, r0 - ev.r0);
            std::vector<double> g(q.size());
            for (std::size_t i = 0; i < q.size(); ++i)
                g[i] = std::log2(q[i] / sm.p[i]) - 2.0 * mu * viol * ev.j[i];
            std::vector<double> nq(q.size());
            double gmax = -kInf;
            for (std::size_t i = 0; i < q.size(); ++i) gmax = std::max(gmax, -step * g[i]);
            double total = 0.0;
            for (std::size_t i = 0; i < q.size(); ++i) {
                nq[i] = std::max(q[i] * std::exp2(-step * g[i] - gmax), 1e-300);
                total += nq[i];
            }
            for (auto& v : nq) v /= total;
            R0Eval nev;
            const double nf = phi(nq, mu, nev);
            if (nf < f) {
                const double gain = f - nf;
                q = std::move(nq);
                f = nf;
                ev = std::move(nev);
                if (ev.channel) warm = ev.channel;
                step = std::min(step * 2.0, 1e3);
                if (gain < 1e-14 * std::max(1.0, f)) break;
            } else {
                step *= 0.5;
            }
        }
    }
    Candidate c;
    c.q = q;
    c.kl = kl_support(q, sm.p);
    c.r0 = ev.ok ? ev.r0 : -kInf;
    c.feasible = ev.ok && ev.r0 >= r0 - opts.feasibility_tol;
    return c;
}

// Moves onto the boundary along the stationarity family Q ∝ P 2^{kappa j_Q}, bisecting kappa.
std::optional<Candidate> kkt_polish(R0Oracle& oracle, const SupportMap& sm, const Candidate& start, double r0) {
    const std::size_t m = sm.p.size();
    auto fixed_point = [&](double kappa, std::vector<double> q, R0Eval& ev) -> std::optional<std::vector<double>> {
        std::optional<TestChannelTriple> warm;
        for (int it = 0; it < 60; ++it) {
            ev = oracle.eval(q, warm);
            if (!ev.ok) return std::nullopt;
            if (ev.channel) warm = ev.channel;
            std::vector<double> nq(m);
            double lmax = -kInf;
            for (std::size_t i = 0; i < m; ++i) lmax = std::max(lmax, std::log2(sm.p[i]) + kappa * ev.j[i]);
            double total = 0.0;
            for (std::size_t i = 0; i < m; ++i) {
                nq[i] = std::exp2(std::log2(sm.p[i]) + kappa * ev.j[i] - lmax);
                total += nq[i];
            }
            double change = 0.0;
            for (std::size_t i = 0; i < m; ++i) {
                nq[i] = std::sqrt(q[i] * (nq[i] / total));
                change = std::max(change, std::fabs(std::log(nq[i]) - std::log(q[i])));
            }
            const double s = std::accumulate(nq.begin(), nq.end(), 0.0);
            for (auto& v : nq) v /= s;
            q = std::move(nq);
            if (change < 1e-11) break;
        }
        ev = oracle.eval(q, warm);
        if (!ev.ok) return std::nullopt;
        return q;
    };
    // Initial slope from regressing log(Q/P) on j at the starting point.
    R0Eval ev0 = oracle.eval(start.q, std::nullopt);
    if (!ev0.ok) return std::nullopt;
    double mj = 0.0, ml = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        mj += start.q[i] * ev0.j[i];
        ml += start.q[i] * std::log2(start.q[i] / sm.p[i]);
    }
    double cov = 0.0, var = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        cov += start.q[i] * (ev0.j[i] - mj) * (std::log2(start.q[i] / sm.p[i]) - ml);
        var += start.q[i] * (ev0.j[i] - mj) * (ev0.j[i] - mj);
    }
    if (!(var > 0.0)) return std::nullopt;
    double hi = std::max(cov / var, 1e-6);
    std::vector<double> q_hi = start.q;
    R0Eval ev;
    std::optional<std::vector<double>> got;
    for (int grow = 0; grow < 40; ++grow) {
        got = fixed_point(hi, q_hi, ev);
        if (got && ev.r0 >= r0) break;
        if (got) q_hi = *got;
        hi *= 1.5;
        got.reset();
    }
    if (!got) return std::nullopt;
    q_hi = *got;
    double lo = 0.0;
    std::vector<double> q_lo = sm.p;
    for (int it = 0; it < 60 && hi - lo > 1e-13 * std::max(1.0, hi); ++it) {
        const double mid = 0.5 * (lo + hi);
        auto q = fixed_point(mid, q_hi, ev);
        if (!q) break;
        if (ev.r0 >= r0) {
            hi = mid;
            q_hi = *q;
        } else {
            lo = mid;
            q_lo = *q;
        }
    }
    R0Eval fin = oracle.eval(q_hi, std::nullopt);
    if (!fin.ok) return std::nullopt;
    Candidate c;
    c.q = q_hi;
    c.kl = kl_support(q_hi, sm.p);
    c.r0 = fin.r0;
    c.feasible = fin.r0 >= r0 - 1e-9;
    return c;
}

void check_exponent_inputs(const JointSource& src, double r0, const GWLevels& lv) {
    if (std::isnan(r0)) throw Error(ErrorCode::domain, "error_exponent: NaN common rate");
    if (!(lv.d1 > 0.0 && lv.d2 > 0.0 && lv.r1 >= 0.0 && lv.r2 >= 0.0))
        throw Error(ErrorCode::domain, "error_exponent: levels must be positive");
    if (src.pxy.nx() != src.dx.sources() || src.pxy.ny() != src.dy.sources())
        throw Error(ErrorCode::shape, "error_exponent: source and distortion alphabets differ");
}

// Shared short cuts: returns true when the answer is already decided.
bool trivial_exponent(const JointSource& src, double r0, const GWLevels& lv, const ExponentOptions& opts,
                      ExponentResult& res) {
    const SupportMap sm = support_map(src.pxy);
    if (r0 > std::log2(static_cast<double>(sm.p.size())) + 1e-9) {
        res.value = kInf;
        res.feasible = false;
        return true;
    }
    const GWPoint at_p = min_common_rate(src, lv, opts.inner);
    res.r0_evaluations = 1;
    if (at_p.feasible && at_p.r0 >= r0 - 1e-9) {
        res.value = 0.0;
        res.argmin = src.pxy;
        res.r0_at_argmin = at_p.r0;
        res.feasible_restarts = 1;
        res.restart_values = {0.0};
        return true;
    }
    return false;
}

}  // namespace

ExponentResult error_exponent(const JointSource& src, double r0, const GWLevels& levels, const ExponentOptions& opts) {
    check_exponent_inputs(src, r0, levels);
    ExponentResult res;
    if (trivial_exponent(src, r0, levels, opts, res)) return res;
    const SupportMap sm = support_map(src.pxy);
    R0Oracle oracle(src, sm, levels, opts.inner);
    const std::size_t runs = static_cast<std::size_t>(std::max(1, opts.restarts));
    std::vector<Candidate> cands(runs);
    detail::parallel_for(runs, opts.threads, [&](std::size_t r) {
        std::vector<double> q;
        if (r == 0) {
            q = sm.p;
        } else {
            CounterRng rng(opts.seed, r);
            q = rng.dirichlet_ones(sm.p.size());
        }
        cands[r] = descend(oracle, sm, std::move(q), r0, opts);
    });
    std::size_t best = runs;
    for (std::size_t r = 0; r < runs; ++r) {
        if (!cands[r].feasible) continue;
        ++res.feasible_restarts;
        res.restart_values.push_back(cands[r].kl);
        if (best == runs || cands[r].kl < cands[best].kl) best = r;
    }
    if (best == runs) {
        res.value = kInf;
        res.feasible = false;
        res.r0_evaluations += oracle.evaluations();
        return res;
    }
    Candidate chosen = cands[best];
    if (auto pol = kkt_polish(oracle, sm, chosen, r0); pol && pol->feasible && pol->kl <= chosen.kl * 1.05 + 1e-7) {
        chosen = *pol;
        res.polished = true;
    }
    res.value = chosen.kl;
    res.argmin = expand(sm, chosen.q);
    res.r0_at_argmin = chosen.r0;
    res.r0_evaluations += oracle.evaluations();
    return res;
}

ExponentResult error_exponent_grid(const JointSource& src, double r0, const GWLevels& levels, const ExponentOptions& opts) {
    check_exponent_inputs(src, r0, levels);
    if (src.pxy.nx() * src.pxy.ny() > 4) throw Error(ErrorCode::budget, "error_exponent_grid: only for 2x2 sources");
    ExponentResult res;
    if (trivial_exponent(src, r0, levels, opts, res)) return res;
    const SupportMap sm = support_map(src.pxy);
    const std::size_t m = sm.p.size();
    R0Oracle oracle(src, sm, levels, opts.inner);

    auto kl_of = [&](const std::vector<long>& c, long N) {
        double d = 0.0;
        for (std::size_t i = 0; i < m; ++i)
            if (c[i] > 0) {
                const double q = static_cast<double>(c[i]) / static_cast<double>(N);
                d += q * std::log2(q / sm.p[i]);
            }
        return d;
    };
    // Evaluates candidates in increasing divergence and returns the first one meeting the constraint.
    auto first_feasible = [&](std::vector<std::vector<long>> pts, long N) -> std::optional<Candidate> {
        std::vector<std::pair<double, std::size_t>> order;
        for (std::size_t i = 0; i < pts.size(); ++i) order.emplace_back(kl_of(pts[i], N), i);
        std::sort(order.begin(), order.end());
        for (auto [kl, i] : order) {
            std::vector<double> q(m);
            for (std::size_t k = 0; k < m; ++k) q[k] = static_cast<double>(pts[i][k]) / static_cast<double>(N);
            const R0Eval ev = oracle.eval(q, std::nullopt);
            if (ev.ok && ev.r0 >= r0 - 1e-9) {
                Candidate c;
                c.q = q;
                c.kl = kl;
                c.r0 = ev.r0;
                c.feasible = true;
                return c;
            }
        }
        return std::nullopt;
    };

    const std::vector<long> levels_n{16, 32, 64, 128, 256, 512, 1000};
    std::optional<Candidate> best;
    // Full enumeration of the coarsest lattice.
    {
        const long N = levels_n.front();
        std::vector<std::vector<long>> pts;
        std::vector<long> c(m, 0);
        auto rec = [&](auto&& self, std::size_t k, long left) -> void {
            if (k + 1 == m) {
                c[k] = left;
                pts.push_back(c);
                return;
            }
            for (long v = 0; v <= left; ++v) {
                c[k] = v;
                self(self, k + 1, left - v);
            }
        };
        rec(rec, 0, N);
        best = first_feasible(std::move(pts), N);
    }
    if (!best) {
        res.value = kInf;
        res.feasible = false;
        res.r0_evaluations += oracle.evaluations();
        return res;
    }
    for (std::size_t lvl = 1; lvl < levels_n.size(); ++lvl) {
        const long N = levels_n[lvl];
        std::vector<long> center(m);
        long used = 0;
        for (std::size_t k = 0; k + 1 < m; ++k) {
            center[k] = std::lround(best->q[k] * static_cast<double>(N));
            used += center[k];
        }
        center[m - 1] = N - used;
        std::vector<std::vector<long>> pts;
        std::vector<long> c(m, 0);
        auto rec = [&](auto&& self, std::size_t k) -> void {
            if (k + 1 == m) {
                long s = 0;
                for (std::size_t i = 0; i + 1 < m; ++i) s += c[i];
                c[k] = N - s;
                if (c[k] >= 0) pts.push_back(c);
                return;
            }
            for (long d = -4; d <= 4; ++d) {
                c[k] = center[k] + d;
                if (c[k] < 0 || c[k] > N) continue;
                self(self, k + 1);
            }
        };
        rec(rec, 0);
        if (auto found = first_feasible(std::move(pts), N); found && found->kl < best->kl) best = found;
    }
    res.value = best->kl;
    res.argmin = expand(sm, best->q);
    res.r0_at_argmin = best->r0;
    res.feasible_restarts = 1;
    res.restart_values = {best->kl};
    res.r0_evaluations += oracle.evaluations();
    return res;
}

double md_constant(const MdSequenceSpec& seq, const GWPoint& point, double V) {
    if (!(V > 0.0)) throw Error(ErrorCode::domain, "md_constant: dispersion must be positive");
    if (!(seq.theta0 > 0.0 && seq.theta1 > 0.0 && seq.theta2 > 0.0))
        throw Error(ErrorCode::domain, "md_constant: thetas must be positive");
    const double theta = seq.theta0 + point.lambda1 * seq.theta1 + point.lambda2 * seq.theta2;
    return theta * theta * kLog2E / (2.0 * V);
}

MdReport md_rate_consistency(const MdSequenceSpec& seq, const GWPoint& point, double V,
                             const std::vector<std::pair<double, double>>& samples) {
    MdReport rep;
    rep.constant = md_constant(seq, point, V);
    if (samples.size() < 2) throw Error(ErrorCode::domain, "md_rate_consistency: need at least two samples");
    std::vector<std::pair<double, double>> s = samples;
    std::sort(s.begin(), s.end());
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (!(s[i].first >= 1.0 && s[i].second > 0.0))
            throw Error(ErrorCode::domain, "md_rate_consistency: invalid rho sequence (non-positive entry)");
        if (i > 0) {
            if (!(s[i].second < s[i - 1].second))
                throw Error(ErrorCode::domain, "md_rate_consistency: invalid rho sequence (rho_n not decreasing)");
            if (!(s[i].first * s[i].second * s[i].second > s[i - 1].first * s[i - 1].second * s[i - 1].second))
                throw Error(ErrorCode::domain, "md_rate_consistency: invalid rho sequence (n rho_n^2 not increasing)");
        }
    }
    double mx = 0.0, my = 0.0;
    for (auto [n, r] : s) {
        mx += std::log(n);
        my += std::log(r);
    }
    mx /= static_cast<double>(s.size());
    my /= static_cast<double>(s.size());
    double sxy = 0.0, sxx = 0.0;
    for (auto [n, r] : s) {
        sxy += (std::log(n) - mx) * (std::log(r) - my);
        sxx += (std::log(n) - mx) * (std::log(n) - mx);
    }
    rep.fitted_exponent = sxx > 0.0 ? sxy / sxx : 0.0;
    if (!(rep.fitted_exponent > -0.5 + 1e-3 && rep.fitted_exponent < -1e-3))
        throw Error(ErrorCode::domain, "md_rate_consistency: invalid rho sequence (fitted exponent outside (-1/2, 0))");
    const double theta = seq.theta0 + point.lambda1 * seq.theta1 + point.lambda2 * seq.theta2;
    for (auto [n, r] : s) {
        const double t = std::sqrt(n) * theta * r / std::sqrt(V);
        rep.rows.push_back({n, r, -log2_q_function(t) / (n * r * r)});
    }
    rep.final_relative_error = std::fabs(rep.rows.back().ratio - rep.constant) / rep.constant;
    return rep;
}

}  // namespace gwlab
