#include "gwlab/typesim.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <exception>
#include <fstream>
#include <iterator>
#include <limits>
#include <mutex>
#include <numeric>

#include "gwlab/rng.hpp"
#include "internal.hpp"

namespace gwlab {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kRateSlack = 1e-9;
constexpr double kDistTol = 1e-9;

double log2_multinomial(const std::vector<int>& parts) {
    int total = 0;
    double s = 0.0;
    for (int k : parts) {
        total += k;
        s -= std::lgamma(static_cast<double>(k) + 1.0);
    }
    s += std::lgamma(static_cast<double>(total) + 1.0);
    return s * kLog2E;
}

Sequence sorted_multiset(const std::vector<int>& counts) {
    Sequence s;
    for (std::size_t a = 0; a < counts.size(); ++a) s.insert(s.end(), static_cast<std::size_t>(counts[a]), static_cast<std::uint8_t>(a));
    return s;
}

void shuffle(Sequence& s, CounterRng& rng) {
    for (std::size_t i = s.size(); i > 1; --i) std::swap(s[i - 1], s[rng.below(i)]);
}

struct GreedyResult {
    std::vector<Sequence> chosen;
    std::size_t uncovered = 0;
};

// Greedy set cover of `items`. Candidates come from `pool` when given, otherwise from gen(item, rng) around the
// first uncovered item. Items no candidate reaches are counted as uncovered.
template <class Covers, class Gen>
void greedy_cover(const std::vector<Sequence>& items, const std::vector<Sequence>* pool, Covers covers, Gen gen,
                  int k, CounterRng& rng, GreedyResult& out) {
    std::vector<char> done(items.size(), 0);
    for (std::size_t i = 0; i < items.size(); ++i)
        for (const auto& c : out.chosen)
            if (covers(c, items[i])) {
                done[i] = 1;
                break;
            }
    std::size_t left = static_cast<std::size_t>(std::count(done.begin(), done.end(), 0));
    std::size_t first = 0;
    std::vector<Sequence> cands;
    while (left > 0) {
        while (done[first]) ++first;
        if (!pool) {
            cands.clear();
            for (int j = 0; j < k; ++j) cands.push_back(gen(items[first], rng));
        }
        const std::vector<Sequence>& cs = pool ? *pool : cands;
        std::size_t best = cs.size(), best_hits = 0;
        for (std::size_t c = 0; c < cs.size(); ++c) {
            std::size_t hits = 0;
            for (std::size_t i = first; i < items.size(); ++i)
                if (!done[i] && covers(cs[c], items[i])) ++hits;
            if (hits > best_hits) {
                best_hits = hits;
                best = c;
            }
        }
        if (best == cs.size()) {
            // Nothing reaches any remaining item from here: give up on the first one.
            done[first] = 1;
            --left;
            ++out.uncovered;
            continue;
        }
        const Sequence pick = cs[best];
        for (std::size_t i = first; i < items.size(); ++i)
            if (!done[i] && covers(pick, items[i])) {
                done[i] = 1;
                --left;
            }
        out.chosen.push_back(pick);
    }
}

// Covers a class either by enumeration or, when it is too large, by sampling with fresh certification rounds.
template <class Enumerate, class Sample, class Covers, class Gen>
CoverageReport cover_class(double log2_size, const CoverOptions& opts, const std::vector<Sequence>* pool,
                           Enumerate enumerate, Sample sample, Covers covers, Gen gen, CounterRng& rng,
                           std::vector<Sequence>& chosen) {
    CoverageReport rep;
    GreedyResult g;
    if (log2_size <= std::log2(static_cast<double>(opts.exhaustive_limit))) {
        const std::vector<Sequence> items = enumerate();
        greedy_cover(items, pool, covers, gen, opts.candidates, rng, g);
        rep.exhaustive = true;
        rep.checked = items.size();
        rep.uncovered = g.uncovered;
        chosen = std::move(g.chosen);
        return rep;
    }
    std::vector<Sequence> items;
    for (std::size_t i = 0; i < opts.certification_samples; ++i) items.push_back(sample(rng));
    greedy_cover(items, pool, covers, gen, opts.candidates, rng, g);
    rep.checked = items.size();
    rep.uncovered = g.uncovered;
    for (int attempt = 0; attempt < opts.random_attempts; ++attempt) {
        std::vector<Sequence> fresh, missed;
        for (std::size_t i = 0; i < opts.certification_samples; ++i) fresh.push_back(sample(rng));
        for (const auto& s : fresh)
            if (std::none_of(g.chosen.begin(), g.chosen.end(), [&](const Sequence& c) { return covers(c, s); }))
                missed.push_back(s);
        rep.checked = fresh.size();
        rep.uncovered = missed.size();
        if (missed.empty()) break;
        g.uncovered = 0;
        greedy_cover(missed, pool, covers, gen, opts.candidates, rng, g);
    }
    chosen = std::move(g.chosen);
    return rep;
}

std::uint64_t type_key(std::uint64_t seed, std::size_t index) { return CounterRng::mix(seed + 0x51ed27ULL * (index + 1)); }

}  // namespace

CoveringConstants covering_constants(std::size_t w_size, const DistortionMeasure& dx, const DistortionMeasure& dy,
                                     std::size_t nx, std::size_t ny) {
    CoveringConstants c;
    c.w_size = w_size;
    const double xyw = static_cast<double>(nx * ny * w_size);
    c.c0 = 3.0 * xyw + 4.0;
    c.c0_prime = c.c0 + static_cast<double>(nx * ny);
    auto ratio = [](const DistortionMeasure& d) { return d.d_min_positive() > 0.0 ? d.d_max() / d.d_min_positive() : 1.0; };
    c.c1 = 11.0 * ratio(dx) * xyw + 3.0 * static_cast<double>(nx * w_size * dx.reproductions()) + 5.0;
    c.c2 = 11.0 * ratio(dy) * xyw + 3.0 * static_cast<double>(ny * w_size * dy.reproductions()) + 5.0;
    return c;
}

LemmaRegime lemma_regime(std::size_t n, std::size_t w_size, const DistortionMeasure& dx, const DistortionMeasure& dy,
                         std::size_t nx, std::size_t ny, double d1, double d2) {
    LemmaRegime r;
    const double nn = static_cast<double>(n);
    const double logn = std::log2(nn);
    r.type_count = std::pow(nn + 1.0, 4.0) > nn * std::log2(static_cast<double>(nx * ny));
    auto dist_ok = [&](std::size_t na, std::size_t nk, double dmax, double D) {
        return D > 0.0 && logn >= static_cast<double>(na * w_size * nk) * std::log2(static_cast<double>(na)) * dmax / D;
    };
    r.x_distortion = dist_ok(nx, dx.reproductions(), dx.d_max(), d1);
    r.y_distortion = dist_ok(ny, dy.reproductions(), dy.d_max(), d2);
    r.reproduction = logn >= std::log2(static_cast<double>(dx.reproductions()) / static_cast<double>(ny));
    return r;
}

int JointTypeCounts::n() const { return std::accumulate(counts.begin(), counts.end(), 0); }

JointPmf JointTypeCounts::pmf() const {
    const double total = static_cast<double>(n());
    if (!(total > 0.0)) throw Error(ErrorCode::domain, "JointTypeCounts: empty type");
    std::vector<double> v(counts.size());
    for (std::size_t i = 0; i < counts.size(); ++i) v[i] = counts[i] / total;
    return JointPmf(Matrix(nx, ny, std::move(v)));
}

std::vector<JointTypeCounts> enumerate_joint_types(std::size_t nx, std::size_t ny, std::size_t n) {
    if (nx == 0 || ny == 0 || n == 0) throw Error(ErrorCode::domain, "enumerate_joint_types: empty alphabet or n = 0");
    const std::size_t m = nx * ny;
    std::vector<JointTypeCounts> out;
    std::vector<int> c(m, 0);
    auto rec = [&](auto&& self, std::size_t k, int left) -> void {
        if (k + 1 == m) {
            c[k] = left;
            out.push_back({nx, ny, c});
            return;
        }
        for (int v = left; v >= 0; --v) {
            c[k] = v;
            self(self, k + 1, left - v);
        }
    };
    rec(rec, 0, static_cast<int>(n));
    return out;
}

std::vector<int> ConditionalType::w_counts() const {
    std::vector<int> out(nw, 0);
    for (std::size_t i = 0; i < counts.size(); ++i) out[i % nw] += counts[i];
    return out;
}

ConditionalType quantize_channel(const JointTypeCounts& type, const TestChannelTriple& channel) {
    if (channel.nx() != type.nx || channel.ny() != type.ny)
        throw Error(ErrorCode::shape, "quantize_channel: channel alphabets do not match the type");
    ConditionalType q;
    q.nw = channel.nw();
    q.counts.assign(type.counts.size() * q.nw, 0);
    for (std::size_t c = 0; c < type.counts.size(); ++c) {
        const int nc = type.counts[c];
        if (nc == 0) continue;
        const std::size_t x = c / type.ny, y = c % type.ny;
        std::vector<std::pair<double, std::size_t>> frac;
        int used = 0;
        for (std::size_t w = 0; w < q.nw; ++w) {
            const double t = nc * channel.w_given_xy(x, y, w);
            const int f = static_cast<int>(std::floor(t));
            q.counts[c * q.nw + w] = f;
            used += f;
            frac.emplace_back(t - f, w);
        }
        std::stable_sort(frac.begin(), frac.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
        for (int r = 0; r < nc - used; ++r) ++q.counts[c * q.nw + frac[static_cast<std::size_t>(r)].second];
        for (std::size_t w = 0; w < q.nw; ++w)
            q.max_scaled_deviation =
                std::max(q.max_scaled_deviation, std::abs(q.counts[c * q.nw + w] - nc * channel.w_given_xy(x, y, w)));
    }
    return q;
}

CommonCover cover_common(const JointTypeCounts& type, const ConditionalType& w_type, const CoverOptions& opts) {
    const std::size_t cells = type.counts.size();
    const std::size_t nw = w_type.nw;
    const std::size_t n = static_cast<std::size_t>(type.n());
    if (w_type.counts.size() != cells * nw) throw Error(ErrorCode::shape, "cover_common: conditional type size mismatch");
    for (std::size_t c = 0; c < cells; ++c) {
        int s = 0;
        for (std::size_t w = 0; w < nw; ++w) s += w_type.counts[c * nw + w];
        if (s != type.counts[c]) throw Error(ErrorCode::domain, "cover_common: conditional type rows must sum to cell counts");
    }
    CommonCover out;
    out.w_type = w_type;
    const Sequence base = sorted_multiset(type.counts);

    auto covers = [&](const Sequence& w, const Sequence& s) {
        thread_local std::vector<int> tally;
        tally.assign(cells * nw, 0);
        for (std::size_t i = 0; i < n; ++i) {
            int& t = tally[s[i] * nw + w[i]];
            if (++t > w_type.counts[s[i] * nw + w[i]]) return false;
        }
        return true;
    };
    auto gen = [&](const Sequence& s, CounterRng& rng) {
        Sequence w(n);
        for (std::size_t c = 0; c < cells; ++c) {
            Sequence letters;
            for (std::size_t a = 0; a < nw; ++a)
                letters.insert(letters.end(), static_cast<std::size_t>(w_type.counts[c * nw + a]), static_cast<std::uint8_t>(a));
            shuffle(letters, rng);
            std::size_t j = 0;
            for (std::size_t i = 0; i < n; ++i)
                if (s[i] == c) w[i] = letters[j++];
        }
        return w;
    };
    auto enumerate = [&] {
        std::vector<Sequence> items;
        Sequence s = base;
        do items.push_back(s);
        while (std::next_permutation(s.begin(), s.end()));
        return items;
    };
    auto sample = [&](CounterRng& rng) {
        Sequence s = base;
        shuffle(s, rng);
        return s;
    };
    CounterRng rng(opts.seed, 0xc10dULL);
    out.coverage = cover_class(log2_multinomial(type.counts), opts, nullptr, enumerate, sample, covers, gen, rng, out.cloud);
    return out;
}

CommonCover cover_common(const JointTypeCounts& type, const GWLevels& levels, const DistortionMeasure& dx,
                         const DistortionMeasure& dy, const CoverOptions& opts, const GWOptions& gw) {
    const GWPoint pt = min_common_rate(JointSource{type.pmf(), dx, dy}, levels, gw);
    if (!pt.feasible || !std::isfinite(pt.r0)) throw Error(ErrorCode::infeasible, "cover_common: least common rate is infinite");
    return cover_common(type, quantize_channel(type, pt.channel), opts);
}

SatelliteCover cover_conditional(const Sequence& w_n, std::size_t nw, const std::vector<int>& xw_counts,
                                 const DistortionMeasure& d, double D, double rate_budget, const CoverOptions& opts) {
    const std::size_t nx = d.sources(), kx = d.reproductions();
    const std::size_t n = w_n.size();
    if (n == 0) throw Error(ErrorCode::domain, "cover_conditional: empty sequence");
    if (xw_counts.size() != nx * nw) throw Error(ErrorCode::shape, "cover_conditional: counts must be |X| x |W|");
    if (!(D >= 0.0)) throw Error(ErrorCode::domain, "cover_conditional: negative distortion level");
    std::vector<std::vector<std::size_t>> blocks(nw);
    for (std::size_t i = 0; i < n; ++i) {
        if (w_n[i] >= nw) throw Error(ErrorCode::domain, "cover_conditional: letter outside W");
        blocks[w_n[i]].push_back(i);
    }
    std::vector<Sequence> block_letters(nw);
    double log2_size = 0.0;
    for (std::size_t w = 0; w < nw; ++w) {
        std::vector<int> col(nx);
        int s = 0;
        for (std::size_t x = 0; x < nx; ++x) s += col[x] = xw_counts[x * nw + w];
        if (static_cast<std::size_t>(s) != blocks[w].size())
            throw Error(ErrorCode::domain, "cover_conditional: counts disagree with the sequence");
        block_letters[w] = sorted_multiset(col);
        log2_size += log2_multinomial(col);
    }
    const double budget = static_cast<double>(n) * D + kDistTol;
    auto dist = [&](const Sequence& xh, const Sequence& x) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += d(x[i], xh[i]);
        return s;
    };
    auto covers = [&](const Sequence& xh, const Sequence& x) { return dist(xh, x) <= budget; };
    std::vector<std::uint8_t> best_letter(nx);
    for (std::size_t x = 0; x < nx; ++x) {
        std::size_t b = 0;
        for (std::size_t k = 1; k < kx; ++k)
            if (d(x, k) < d(x, b)) b = k;
        best_letter[x] = static_cast<std::uint8_t>(b);
    }
    auto gen = [&](const Sequence& x, CounterRng& rng) {
        Sequence xh(n);
        double used = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            xh[i] = best_letter[x[i]];
            used += d(x[i], xh[i]);
        }
        std::vector<std::size_t> pos(n);
        std::iota(pos.begin(), pos.end(), std::size_t{0});
        for (std::size_t i = n; i > 1; --i) std::swap(pos[i - 1], pos[rng.below(i)]);
        for (std::size_t i : pos) {
            const std::size_t k = rng.below(kx);
            const double delta = d(x[i], k) - d(x[i], xh[i]);
            if (used + delta <= budget) {
                used += delta;
                xh[i] = static_cast<std::uint8_t>(k);
            }
        }
        return xh;
    };
    auto assemble = [&](const std::vector<Sequence>& parts) {
        Sequence x(n);
        for (std::size_t w = 0; w < nw; ++w)
            for (std::size_t j = 0; j < blocks[w].size(); ++j) x[blocks[w][j]] = parts[w][j];
        return x;
    };
    auto enumerate = [&] {
        std::vector<Sequence> items;
        std::vector<Sequence> parts = block_letters;
        while (true) {
            items.push_back(assemble(parts));
            std::size_t w = 0;
            for (; w < nw; ++w) {
                if (std::next_permutation(parts[w].begin(), parts[w].end())) break;
            }
            if (w == nw) break;
        }
        return items;
    };
    auto sample = [&](CounterRng& rng) {
        std::vector<Sequence> parts = block_letters;
        for (auto& p : parts) shuffle(p, rng);
        return assemble(parts);
    };
    // Scan every reproduction sequence when that stays cheap.
    std::vector<Sequence> all;
    const double log2_all = static_cast<double>(n) * std::log2(static_cast<double>(kx));
    const bool exhaustive_items = log2_size <= std::log2(static_cast<double>(opts.exhaustive_limit));
    if (exhaustive_items && log2_all <= 16.0 && log2_all + log2_size <= std::log2(2e7)) {
        Sequence xh(n, 0);
        while (true) {
            all.push_back(xh);
            std::size_t i = 0;
            for (; i < n; ++i) {
                if (++xh[i] < kx) break;
                xh[i] = 0;
            }
            if (i == n) break;
        }
    }
    SatelliteCover out;
    CounterRng rng(opts.seed, 0x5a7eULL);
    out.coverage = cover_class(log2_size, opts, all.empty() ? nullptr : &all, enumerate, sample, covers, gen, rng,
                               out.codewords);
    // Distortion actually needed, over the enumerated class (or a sample).
    std::vector<Sequence> check = exhaustive_items ? enumerate() : std::vector<Sequence>{};
    if (!exhaustive_items) {
        CounterRng srng(opts.seed, 0xd157ULL);
        for (std::size_t i = 0; i < opts.certification_samples; ++i) check.push_back(sample(srng));
    }
    for (const auto& x : check) {
        double best = kInf;
        for (const auto& c : out.codewords) best = std::min(best, dist(c, x));
        if (best <= budget) out.max_distortion = std::max(out.max_distortion, best / static_cast<double>(n));
    }
    out.shrunk_level = D - static_cast<double>(nx * nw * kx) / static_cast<double>(n) * d.d_max();
    out.within_budget = std::log2(static_cast<double>(std::max<std::size_t>(1, out.codewords.size()))) /
                            static_cast<double>(n) <=
                        rate_budget + 1e-12;
    return out;
}

EffectiveRates effective_rates(std::size_t n, const CodeBudgets& budgets, const CoveringConstants& constants) {
    if (n == 0) throw Error(ErrorCode::domain, "effective_rates: n = 0");
    const double nn = static_cast<double>(n);
    EffectiveRates r{budgets.log2_m0 / nn, budgets.log2_m1 / nn, budgets.log2_m2 / nn};
    if (budgets.backoff == RateBackoff::lemma) {
        r.r0 -= constants.c0_prime * std::log2(nn + 1.0) / nn;
        r.r1 -= constants.c1 * std::log2(nn) / nn;
        r.r2 -= constants.c2 * std::log2(nn) / nn;
    }
    return r;
}

TypeClassification classify_type(const JointSource& src, const EffectiveRates& rates, double d1, double d2,
                                  const GWOptions& gw) {
    TypeClassification c;
    if (rates.r1 < 0.0 || rates.r2 < 0.0) {
        c.r0 = kInf;
        c.error = true;
        return c;
    }
    const double rx = rate_distortion(src.pxy.marginal_x(), src.dx, d1).rate;
    const double ry = rate_distortion(src.pxy.marginal_y(), src.dy, d2).rate;
    if (rx <= rates.r1 && ry <= rates.r2) {
        c.r0 = 0.0;
        c.error = 0.0 > rates.r0 + kRateSlack;
        return c;
    }
    const double rxy = joint_rate_distortion(src.pxy, src.dx, src.dy, d1, d2).rate;
    const double lower = std::max({0.0, rxy - rates.r1 - rates.r2, rx - rates.r1, ry - rates.r2});
    if (lower > rates.r0 + kRateSlack) {
        c.r0 = lower;
        c.bound_only = true;
        c.error = true;
        return c;
    }
    if (rxy <= rates.r0 + kRateSlack) {
        // Sending the joint reproduction on the common link already fits.
        c.r0 = rxy;
        c.bound_only = true;
        return c;
    }
    const GWPoint pt = min_common_rate(src, {rates.r1, rates.r2, d1, d2}, gw);
    c.r0 = pt.r0;
    c.error = pt.r0 > rates.r0 + kRateSlack;
    return c;
}

std::size_t CoverCode::type_index(const std::vector<int>& counts) const {
    auto it = index_.find(counts);
    if (it == index_.end()) throw Error(ErrorCode::domain, "CoverCode: unknown joint type");
    return it->second;
}

std::size_t CoverCode::error_types() const {
    return static_cast<std::size_t>(std::count_if(types.begin(), types.end(), [](const TypeCode& t) { return t.classification.error; }));
}

void CoverCode::index_types() {
    index_.clear();
    for (std::size_t i = 0; i < types.size(); ++i) index_[types[i].type.counts] = i;
}

namespace {

std::vector<int> marginal_counts(const ConditionalType& q, std::size_t nx, std::size_t ny, bool first) {
    const std::size_t na = first ? nx : ny;
    std::vector<int> out(na * q.nw, 0);
    for (std::size_t x = 0; x < nx; ++x)
        for (std::size_t y = 0; y < ny; ++y)
            for (std::size_t w = 0; w < q.nw; ++w)
                out[(first ? x : y) * q.nw + w] += q.counts[(x * ny + y) * q.nw + w];
    return out;
}

}  // namespace

CoverCode build_code(std::size_t n, const CodeBudgets& budgets, const DistortionMeasure& dx,
                     const DistortionMeasure& dy, double d1, double d2, const BuildOptions& opts) {
    if (n == 0 || n > 255) throw Error(ErrorCode::domain, "build_code: n must lie in [1, 255]");
    if (!(d1 > 0.0 && d2 > 0.0)) throw Error(ErrorCode::domain, "build_code: distortion levels must be positive");
    CoverCode code;
    code.n = n;
    code.nx = dx.sources();
    code.ny = dy.sources();
    code.kx = dx.reproductions();
    code.ky = dy.reproductions();
    code.d1 = d1;
    code.d2 = d2;
    code.dx = dx;
    code.dy = dy;
    code.budgets = budgets;
    const std::size_t w_full = code.nx * code.ny + 2;
    code.constants = covering_constants(w_full, dx, dy, code.nx, code.ny);
    code.regime = lemma_regime(n, w_full, dx, dy, code.nx, code.ny, d1, d2);
    code.rates = effective_rates(n, budgets, code.constants);
    for (auto& t : enumerate_joint_types(code.nx, code.ny, n)) {
        TypeCode tc;
        tc.type = std::move(t);
        code.types.push_back(std::move(tc));
    }

    const double nn = static_cast<double>(n);
    std::exception_ptr failure;
    std::mutex failure_mu;
    detail::parallel_for(code.types.size(), opts.threads, [&](std::size_t i) {
        try {
            TypeCode& tc = code.types[i];
            const JointSource src{tc.type.pmf(), dx, dy};
            tc.classification = classify_type(src, code.rates, d1, d2, opts.gw);
            if (tc.classification.error) return;
            const GWPoint pt = min_common_rate(src, {code.rates.r1, code.rates.r2, d1, d2}, opts.gw);
            CoverOptions co = opts.cover;
            co.seed = type_key(opts.cover.seed, i);
            tc.w_type = quantize_channel(tc.type, pt.channel);
            CommonCover cc = cover_common(tc.type, tc.w_type, co);
            tc.cloud = std::move(cc.cloud);
            const Sequence canon = sorted_multiset(tc.w_type.w_counts());
            SatelliteCover sx = cover_conditional(canon, tc.w_type.nw, marginal_counts(tc.w_type, code.nx, code.ny, true),
                                                  dx, d1, budgets.log2_m1 / nn, co);
            SatelliteCover sy = cover_conditional(canon, tc.w_type.nw, marginal_counts(tc.w_type, code.nx, code.ny, false),
                                                  dy, d2, budgets.log2_m2 / nn, co);
            tc.sat_x = std::move(sx.codewords);
            tc.sat_y = std::move(sy.codewords);
            tc.covered = cc.coverage.complete() && sx.coverage.complete() && sy.coverage.complete();
            auto rate = [&](std::size_t size) { return std::log2(static_cast<double>(std::max<std::size_t>(1, size))) / nn; };
            tc.size_bounds_hold =
                rate(tc.cloud.size()) <= pt.r0 + code.constants.c0 * std::log2(nn + 1.0) / nn + 1e-12 &&
                rate(tc.sat_x.size()) <= code.rates.r1 + code.constants.c1 * std::log2(nn) / nn + 1e-12 &&
                rate(tc.sat_y.size()) <= code.rates.r2 + code.constants.c2 * std::log2(nn) / nn + 1e-12;
            tc.within_budget = rate(tc.cloud.size()) <= budgets.log2_m0 / nn + 1e-12 && sx.within_budget && sy.within_budget;
        } catch (...) {
            std::lock_guard<std::mutex> lock(failure_mu);
            if (!failure) failure = std::current_exception();
        }
    });
    if (failure) std::rethrow_exception(failure);
    std::size_t w_used = 1;
    for (const auto& t : code.types)
        if (!t.classification.error) w_used = std::max(w_used, t.w_type.nw);
    code.constants_pruned = covering_constants(w_used, dx, dy, code.nx, code.ny);
    code.index_types();
    return code;
}

EncodeResult encode(const CoverCode& code, const std::vector<int>& x, const std::vector<int>& y) {
    const std::size_t n = code.n;
    if (x.size() != n || y.size() != n) throw Error(ErrorCode::shape, "encode: block length mismatch");
    std::vector<int> counts(code.nx * code.ny, 0);
    Sequence cells(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (x[i] < 0 || static_cast<std::size_t>(x[i]) >= code.nx || y[i] < 0 || static_cast<std::size_t>(y[i]) >= code.ny)
            throw Error(ErrorCode::domain, "encode: symbol outside alphabet");
        cells[i] = static_cast<std::uint8_t>(x[i] * static_cast<int>(code.ny) + y[i]);
        ++counts[cells[i]];
    }
    EncodeResult r;
    const TypeCode& tc = code.types[code.type_index(counts)];
    if (tc.classification.error) {
        r.excess = true;
        r.reason = "error-type";
        return r;
    }
    const std::size_t nw = tc.w_type.nw;
    std::vector<int> tally(counts.size() * nw);
    const Sequence* found = nullptr;
    for (const auto& w : tc.cloud) {
        std::fill(tally.begin(), tally.end(), 0);
        bool ok = true;
        for (std::size_t i = 0; i < n && ok; ++i) ok = ++tally[cells[i] * nw + w[i]] <= tc.w_type.counts[cells[i] * nw + w[i]];
        if (ok) {
            found = &w;
            break;
        }
    }
    if (!found) {
        r.excess = true;
        r.reason = "uncovered";
        return r;
    }
    r.w = *found;
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::stable_sort(perm.begin(), perm.end(), [&](std::size_t a, std::size_t b) { return r.w[a] < r.w[b]; });
    auto reproduce = [&](const std::vector<int>& src, const std::vector<Sequence>& book, const DistortionMeasure& d,
                         double D, Sequence& out) {
        const double budget = static_cast<double>(n) * D + kDistTol;
        for (const auto& c : book) {
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += d(static_cast<std::size_t>(src[perm[j]]), c[j]);
            if (s <= budget) {
                out.assign(n, 0);
                for (std::size_t j = 0; j < n; ++j) out[perm[j]] = c[j];
                return true;
            }
        }
        return false;
    };
    if (!reproduce(x, tc.sat_x, code.dx, code.d1, r.xhat) || !reproduce(y, tc.sat_y, code.dy, code.d2, r.yhat)) {
        r.excess = true;
        r.reason = "uncovered";
        return r;
    }
    double sx = 0.0, sy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sx += code.dx(static_cast<std::size_t>(x[i]), r.xhat[i]);
        sy += code.dy(static_cast<std::size_t>(y[i]), r.yhat[i]);
    }
    if (sx / static_cast<double>(n) > code.d1 + kDistTol || sy / static_cast<double>(n) > code.d2 + kDistTol) {
        r.excess = true;
        r.reason = "distortion";
    }
    return r;
}

std::pair<double, double> wilson_interval(std::size_t successes, std::size_t trials) {
    if (trials == 0) throw Error(ErrorCode::domain, "wilson_interval: no trials");
    constexpr double z = 1.959963984540054;
    const double nt = static_cast<double>(trials);
    const double ph = static_cast<double>(successes) / nt;
    const double denom = 1.0 + z * z / nt;
    const double center = (ph + z * z / (2.0 * nt)) / denom;
    const double half = z / denom * std::sqrt(ph * (1.0 - ph) / nt + z * z / (4.0 * nt * nt));
    // The endpoints are exactly 0 and 1 at the extremes; the difference above only rounds to them.
    const double lo = successes == 0 ? 0.0 : std::max(0.0, center - half);
    const double hi = successes == trials ? 1.0 : std::min(1.0, center + half);
    return {lo, hi};
}

SimulationReport simulate_excess(const CoverCode& code, const JointPmf& p_xy, std::size_t trials, std::uint64_t seed,
                                 unsigned threads) {
    if (trials == 0) throw Error(ErrorCode::domain, "simulate_excess: trials must be at least 1");
    if (p_xy.nx() != code.nx || p_xy.ny() != code.ny) throw Error(ErrorCode::shape, "simulate_excess: alphabet mismatch");
    const std::vector<double>& w = p_xy.matrix().data();
    std::vector<std::uint8_t> outcome(trials, 0);
    constexpr std::size_t chunk = 1024;
    const std::size_t chunks = (trials + chunk - 1) / chunk;
    std::exception_ptr failure;
    std::mutex failure_mu;
    detail::parallel_for(chunks, threads, [&](std::size_t ci) {
        try {
            std::vector<int> x(code.n), y(code.n);
            for (std::size_t t = ci * chunk; t < std::min(trials, (ci + 1) * chunk); ++t) {
                CounterRng rng(seed, t);
                for (std::size_t i = 0; i < code.n; ++i) {
                    const std::size_t c = rng.categorical(w.data(), w.size(), 1.0);
                    x[i] = static_cast<int>(c / code.ny);
                    y[i] = static_cast<int>(c % code.ny);
                }
                const EncodeResult e = encode(code, x, y);
                if (!e.excess) continue;
                outcome[t] = e.reason == "error-type" ? 1 : e.reason == "uncovered" ? 2 : 3;
            }
        } catch (...) {
            std::lock_guard<std::mutex> lock(failure_mu);
            if (!failure) failure = std::current_exception();
        }
    });
    if (failure) std::rethrow_exception(failure);
    SimulationReport rep;
    rep.trials = trials;
    rep.seed = seed;
    for (std::uint8_t o : outcome) {
        if (o == 1) ++rep.error_type_failures;
        if (o == 2) ++rep.uncovered_failures;
        if (o == 3) ++rep.distortion_failures;
    }
    rep.failures = rep.error_type_failures + rep.uncovered_failures + rep.distortion_failures;
    rep.estimate = static_cast<double>(rep.failures) / static_cast<double>(trials);
    std::tie(rep.wilson_low, rep.wilson_high) = wilson_interval(rep.failures, trials);
    return rep;
}

namespace {

// Natural log of the probability of one type class under p^n; -inf outside the support.
double log_type_probability(const std::vector<int>& counts, const std::vector<double>& p) {
    int n = 0;
    double s = 0.0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
        if (counts[i] == 0) continue;
        if (p[i] <= 0.0) return -kInf;
        n += counts[i];
        s += counts[i] * std::log(p[i]) - std::lgamma(counts[i] + 1.0);
    }
    return s + std::lgamma(n + 1.0);
}

}  // namespace

namespace {

// Letter permutations of the source alphabet that some reproduction relabeling maps onto the same distortions.
std::vector<std::vector<std::size_t>> distortion_symmetries(const DistortionMeasure& d) {
    std::vector<std::size_t> sigma(d.sources());
    std::iota(sigma.begin(), sigma.end(), 0);
    std::vector<std::vector<std::size_t>> out;
    if (d.reproductions() > 6) return {sigma};
    do {
        std::vector<std::size_t> tau(d.reproductions());
        std::iota(tau.begin(), tau.end(), 0);
        bool found = false;
        do {
            bool same = true;
            for (std::size_t x = 0; x < d.sources() && same; ++x)
                for (std::size_t k = 0; k < d.reproductions() && same; ++k) same = d(sigma[x], tau[k]) == d(x, k);
            found = same;
        } while (!found && std::next_permutation(tau.begin(), tau.end()));
        if (found) out.push_back(sigma);
    } while (std::next_permutation(sigma.begin(), sigma.end()));
    return out;
}

}  // namespace

double exact_type_tail(const JointSource& src, std::size_t n, const EffectiveRates& rates, double d1, double d2,
                       const GWOptions& gw) {
    if (src.pxy.nx() * src.pxy.ny() > 4 || n > 40)
        throw Error(ErrorCode::budget, "exact_type_tail: enumeration limited to four cells and n <= 40");
    if (n == 0) throw Error(ErrorCode::domain, "exact_type_tail: n = 0");
    const std::size_t nx = src.pxy.nx(), ny = src.pxy.ny();
    // The least common rate of a type is unchanged by these relabelings, so each orbit is solved once.
    const auto sx = distortion_symmetries(src.dx);
    const auto sy = distortion_symmetries(src.dy);
    const bool swap = nx == ny && src.dx.matrix().data() == src.dy.matrix().data() &&
                      src.dx.reproductions() == src.dy.reproductions() && d1 == d2 && rates.r1 == rates.r2;
    auto canonical = [&](const std::vector<int>& c) {
        std::vector<int> best = c, cand(c.size());
        for (const auto& a : sx)
            for (const auto& b : sy)
                for (int s = 0; s < (swap ? 2 : 1); ++s) {
                    for (std::size_t x = 0; x < nx; ++x)
                        for (std::size_t y = 0; y < ny; ++y) {
                            const std::size_t to = s == 0 ? a[x] * ny + b[y] : b[y] * ny + a[x];
                            cand[to] = c[x * ny + y];
                        }
                    best = std::min(best, cand);
                }
        return best;
    };
    std::map<std::vector<int>, bool> seen;
    const std::vector<double>& p = src.pxy.matrix().data();
    double tail = 0.0;
    for (const auto& t : enumerate_joint_types(nx, ny, n)) {
        const double lp = log_type_probability(t.counts, p);
        if (!std::isfinite(lp)) continue;
        const auto key = canonical(t.counts);
        auto it = seen.find(key);
        if (it == seen.end()) {
            JointTypeCounts rep{nx, ny, key};
            it = seen.emplace(key, classify_type(JointSource{rep.pmf(), src.dx, src.dy}, rates, d1, d2, gw).error).first;
        }
        if (it->second) tail += std::exp(lp);
    }
    return std::min(1.0, tail);
}

double exact_type_tail(const CoverCode& code, const JointPmf& p_xy) {
    if (p_xy.nx() != code.nx || p_xy.ny() != code.ny) throw Error(ErrorCode::shape, "exact_type_tail: alphabet mismatch");
    const std::vector<double>& p = p_xy.matrix().data();
    double tail = 0.0;
    for (const auto& t : code.types) {
        if (!t.classification.error) continue;
        const double lp = log_type_probability(t.type.counts, p);
        if (std::isfinite(lp)) tail += std::exp(lp);
    }
    return std::min(1.0, tail);
}

namespace {

constexpr std::uint32_t kContainerVersion = 1;

class Writer {
  public:
    void u8(std::uint8_t v) { buf.push_back(v); }
    void u16(std::uint16_t v) { put(v, 2); }
    void u32(std::uint32_t v) { put(v, 4); }
    void u64(std::uint64_t v) { put(v, 8); }
    void f64(double v) {
        std::uint64_t b;
        std::memcpy(&b, &v, sizeof b);
        put(b, 8);
    }
    void patch_u64(std::size_t at, std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf[at + i] = static_cast<std::uint8_t>(v >> (8 * i));
    }
    void sequences(const std::vector<Sequence>& seqs, std::size_t n, std::size_t alphabet) {
        const unsigned bits = bits_for(alphabet);
        u32(static_cast<std::uint32_t>(seqs.size()));
        u8(static_cast<std::uint8_t>(bits));
        for (const auto& s : seqs) {
            std::vector<std::uint8_t> packed((n * bits + 7) / 8, 0);
            for (std::size_t i = 0; i < n; ++i)
                for (unsigned b = 0; b < bits; ++b)
                    if ((s[i] >> (bits - 1 - b)) & 1u) {
                        const std::size_t pos = i * bits + b;
                        packed[pos / 8] |= static_cast<std::uint8_t>(0x80u >> (pos % 8));
                    }
            buf.insert(buf.end(), packed.begin(), packed.end());
        }
    }
    static unsigned bits_for(std::size_t alphabet) {
        unsigned b = 1;
        while ((std::size_t{1} << b) < alphabet) ++b;
        return b;
    }
    std::vector<std::uint8_t> buf;

  private:
    void put(std::uint64_t v, int bytes) {
        for (int i = 0; i < bytes; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
};

class Reader {
  public:
    explicit Reader(const std::vector<std::uint8_t>& b) : buf(b) {}
    std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
    std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
    std::uint64_t u64() { return get(8); }
    double f64() {
        const std::uint64_t b = get(8);
        double v;
        std::memcpy(&v, &b, sizeof v);
        return v;
    }
    void seek(std::size_t p) {
        if (p > buf.size()) fail();
        pos = p;
    }
    std::vector<Sequence> sequences(std::size_t n, std::size_t alphabet) {
        const std::uint32_t count = u32();
        const unsigned bits = u8();
        if (bits != Writer::bits_for(alphabet)) fail();
        const std::size_t stride = (n * bits + 7) / 8;
        if (static_cast<std::uint64_t>(count) * stride > buf.size() - pos) fail();
        std::vector<Sequence> out(count, Sequence(n));
        for (auto& s : out) {
            for (std::size_t i = 0; i < n; ++i) {
                unsigned v = 0;
                for (unsigned b = 0; b < bits; ++b) {
                    const std::size_t p = i * bits + b;
                    v = (v << 1) | ((buf[pos + p / 8] >> (7 - p % 8)) & 1u);
                }
                if (v >= alphabet) fail();
                s[i] = static_cast<std::uint8_t>(v);
            }
            pos += stride;
        }
        return out;
    }
    [[noreturn]] static void fail() { throw Error(ErrorCode::schema, "code container: truncated or malformed"); }

  private:
    std::uint64_t get(int bytes) {
        if (pos + static_cast<std::size_t>(bytes) > buf.size()) fail();
        std::uint64_t v = 0;
        for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(buf[pos + i]) << (8 * i);
        pos += static_cast<std::size_t>(bytes);
        return v;
    }
    const std::vector<std::uint8_t>& buf;
    std::size_t pos = 0;
};

void write_measure(Writer& w, const DistortionMeasure& d) {
    w.u32(static_cast<std::uint32_t>(d.sources()));
    w.u32(static_cast<std::uint32_t>(d.reproductions()));
    for (double v : d.matrix().data()) w.f64(v);
}

DistortionMeasure read_measure(Reader& r) {
    const std::size_t rows = r.u32(), cols = r.u32();
    if (rows == 0 || cols == 0 || rows > 255 || cols > 255) Reader::fail();
    std::vector<double> v(rows * cols);
    for (auto& e : v) e = r.f64();
    return DistortionMeasure(Matrix(rows, cols, std::move(v)));
}

}  // namespace

std::vector<std::uint8_t> serialize_code(const CoverCode& code) {
    Writer w;
    for (char c : std::string("GWLC")) w.u8(static_cast<std::uint8_t>(c));
    w.u32(kContainerVersion);
    w.u32(static_cast<std::uint32_t>(code.n));
    write_measure(w, code.dx);
    write_measure(w, code.dy);
    w.f64(code.d1);
    w.f64(code.d2);
    w.f64(code.budgets.log2_m0);
    w.f64(code.budgets.log2_m1);
    w.f64(code.budgets.log2_m2);
    w.u8(code.budgets.backoff == RateBackoff::lemma ? 0 : 1);
    w.u32(static_cast<std::uint32_t>(code.types.size()));
    const std::size_t table = w.buf.size();
    for (std::size_t i = 0; i < code.types.size(); ++i) w.u64(0);
    for (std::size_t i = 0; i < code.types.size(); ++i) {
        w.patch_u64(table + 8 * i, w.buf.size());
        const TypeCode& t = code.types[i];
        for (int c : t.type.counts) w.u16(static_cast<std::uint16_t>(c));
        w.f64(t.classification.r0);
        w.u8(t.classification.bound_only);
        w.u8(t.classification.error);
        w.u8(t.covered);
        w.u8(t.size_bounds_hold);
        w.u8(t.within_budget);
        w.u32(static_cast<std::uint32_t>(t.w_type.nw));
        for (int c : t.w_type.counts) w.u16(static_cast<std::uint16_t>(c));
        w.f64(t.w_type.max_scaled_deviation);
        w.sequences(t.cloud, code.n, std::max<std::size_t>(1, t.w_type.nw));
        w.sequences(t.sat_x, code.n, code.kx);
        w.sequences(t.sat_y, code.n, code.ky);
    }
    return std::move(w.buf);
}

CoverCode deserialize_code(const std::vector<std::uint8_t>& bytes) {
    Reader r(bytes);
    std::string magic;
    for (int i = 0; i < 4; ++i) magic.push_back(static_cast<char>(r.u8()));
    if (magic != "GWLC") throw Error(ErrorCode::schema, "code container: bad magic");
    if (r.u32() != kContainerVersion) throw Error(ErrorCode::schema, "code container: unsupported version");
    CoverCode code;
    code.n = r.u32();
    if (code.n == 0 || code.n > 255) Reader::fail();
    code.dx = read_measure(r);
    code.dy = read_measure(r);
    code.nx = code.dx.sources();
    code.kx = code.dx.reproductions();
    code.ny = code.dy.sources();
    code.ky = code.dy.reproductions();
    code.d1 = r.f64();
    code.d2 = r.f64();
    code.budgets.log2_m0 = r.f64();
    code.budgets.log2_m1 = r.f64();
    code.budgets.log2_m2 = r.f64();
    const std::uint8_t backoff = r.u8();
    if (backoff > 1) Reader::fail();
    code.budgets.backoff = backoff == 0 ? RateBackoff::lemma : RateBackoff::none;
    const std::size_t w_full = code.nx * code.ny + 2;
    code.constants = covering_constants(w_full, code.dx, code.dy, code.nx, code.ny);
    code.regime = lemma_regime(code.n, w_full, code.dx, code.dy, code.nx, code.ny, code.d1, code.d2);
    code.rates = effective_rates(code.n, code.budgets, code.constants);
    const std::uint32_t count = r.u32();
    if (count > bytes.size()) Reader::fail();
    std::vector<std::uint64_t> offsets(count);
    for (auto& o : offsets) o = r.u64();
    const std::size_t cells = code.nx * code.ny;
    std::size_t w_used = 1;
    for (std::uint32_t i = 0; i < count; ++i) {
        r.seek(offsets[i]);
        TypeCode t;
        t.type.nx = code.nx;
        t.type.ny = code.ny;
        t.type.counts.resize(cells);
        for (auto& c : t.type.counts) c = r.u16();
        if (static_cast<std::size_t>(t.type.n()) != code.n) Reader::fail();
        t.classification.r0 = r.f64();
        t.classification.bound_only = r.u8();
        t.classification.error = r.u8();
        t.covered = r.u8();
        t.size_bounds_hold = r.u8();
        t.within_budget = r.u8();
        t.w_type.nw = r.u32();
        if (t.w_type.nw > 255) Reader::fail();
        t.w_type.counts.resize(cells * t.w_type.nw);
        for (auto& c : t.w_type.counts) c = r.u16();
        t.w_type.max_scaled_deviation = r.f64();
        t.cloud = r.sequences(code.n, std::max<std::size_t>(1, t.w_type.nw));
        t.sat_x = r.sequences(code.n, code.kx);
        t.sat_y = r.sequences(code.n, code.ky);
        if (!t.classification.error) w_used = std::max(w_used, t.w_type.nw);
        code.types.push_back(std::move(t));
    }
    code.constants_pruned = covering_constants(w_used, code.dx, code.dy, code.nx, code.ny);
    code.index_types();
    return code;
}

void write_code(const CoverCode& code, const std::string& path) {
    const std::vector<std::uint8_t> bytes = serialize_code(code);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorCode::io, "write_code: cannot open " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw Error(ErrorCode::io, "write_code: write failed for " + path);
}

CoverCode read_code(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorCode::io, "read_code: cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return deserialize_code(bytes);
}

}  // namespace gwlab
