#include "gwlab/gwlab.h"

#include <cmath>
#include <cstring>
#include <new>
#include <string>

#include <json.hpp>

#include "gwlab/asymptotics.hpp"
#include "gwlab/dsbs.hpp"
#include "gwlab/lemmas.hpp"
#include "gwlab/typesim.hpp"

struct gwlab_source {
    gwlab::JointSource src;
};

struct gwlab_point {
    gwlab::JointSource src;
    gwlab::GWPoint point;
};

struct gwlab_code {
    gwlab::CoverCode code;
};

namespace {

using nlohmann::json;

thread_local std::string g_last_error;

struct ArgumentError {
    const char* what;
};

gwlab_status map_code(gwlab::ErrorCode c) {
    switch (c) {
        case gwlab::ErrorCode::domain: return GWLAB_ERR_DOMAIN;
        case gwlab::ErrorCode::infeasible: return GWLAB_ERR_INFEASIBLE;
        case gwlab::ErrorCode::support: return GWLAB_ERR_SUPPORT;
        case gwlab::ErrorCode::shape: return GWLAB_ERR_SHAPE;
        case gwlab::ErrorCode::schema: return GWLAB_ERR_SCHEMA;
        case gwlab::ErrorCode::io: return GWLAB_ERR_IO;
        case gwlab::ErrorCode::convergence: return GWLAB_ERR_CONVERGENCE;
        case gwlab::ErrorCode::budget: return GWLAB_ERR_BUDGET;
    }
    return GWLAB_ERR_INTERNAL;
}

template <class F>
gwlab_status guard(F&& f) {
    try {
        f();
        g_last_error.clear();
        return GWLAB_OK;
    } catch (const ArgumentError& e) {
        g_last_error = e.what;
        return GWLAB_ERR_ARGUMENT;
    } catch (const gwlab::Error& e) {
        g_last_error = e.what();
        return map_code(e.code());
    } catch (const std::bad_alloc&) {
        g_last_error = "out of memory";
        return GWLAB_ERR_INTERNAL;
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return GWLAB_ERR_INTERNAL;
    } catch (...) {
        g_last_error = "unknown failure";
        return GWLAB_ERR_INTERNAL;
    }
}

template <class T>
void need(T* p, const char* what) {
    if (p == nullptr) throw ArgumentError{what};
}

char* dup(const std::string& s) {
    char* out = new char[s.size() + 1];
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

json matrix_json(const gwlab::Matrix& m) {
    json rows = json::array();
    for (std::size_t r = 0; r < m.rows(); ++r) rows.push_back(m.row(r));
    return rows;
}

json table_json(const gwlab::TiltedTable& t, const gwlab::JointPmf& p) {
    json cells = json::array();
    for (std::size_t x = 0; x < p.nx(); ++x)
        for (std::size_t y = 0; y < p.ny(); ++y)
            cells.push_back({{"x", x}, {"y", y}, {"p", p(x, y)}, {"value", t.values(x, y)}});
    return {{"cells", cells}, {"mean", t.mean}, {"variance", t.variance}, {"third_abs_moment", t.third_abs_moment}};
}

gwlab::GWOptions gw_options(const gwlab_solve_options* o) {
    gwlab::GWOptions g;
    if (o != nullptr) {
        if (o->restarts < 0) throw ArgumentError{"restarts must be non-negative"};
        g.restarts = o->restarts;
        g.seed = o->seed;
        g.threads = o->threads == 0 ? 1 : o->threads;
    }
    return g;
}

gwlab::GWLevels levels_of(const gwlab_levels* l) {
    need(l, "levels is NULL");
    return {l->r1, l->r2, l->d1, l->d2};
}

json point_json(const gwlab::GWPoint& p) {
    const auto& ch = p.channel;
    return {{"r0", p.r0},
            {"r1", p.r1},
            {"r2", p.r2},
            {"d1", p.d1},
            {"d2", p.d2},
            {"lambda1", p.lambda1},
            {"lambda2", p.lambda2},
            {"gamma1", p.gamma1},
            {"gamma2", p.gamma2},
            {"feasible", p.feasible},
            {"on_boundary", p.on_boundary},
            {"achieved",
             {{"common", p.achieved.common},
              {"private1", p.achieved.private1},
              {"private2", p.achieved.private2},
              {"dist1", p.achieved.dist1},
              {"dist2", p.achieved.dist2}}},
            {"restart_values", p.restart_values},
            {"restart_spread", p.restart_spread},
            {"iterations", p.iterations},
            {"note", p.note},
            {"channel",
             {{"nw", ch.nw()},
              {"w_given_xy", ch.w_table()},
              {"xhat_given_xw", ch.xhat_table()},
              {"yhat_given_yw", ch.yhat_table()}}}};
}

json code_json(const gwlab::CoverCode& c) {
    std::size_t codewords = 0, covered = 0, bounds = 0;
    for (const auto& t : c.types) {
        codewords += t.cloud.size();
        covered += t.covered ? 1 : 0;
        bounds += t.size_bounds_hold ? 1 : 0;
    }
    const auto consts = [](const gwlab::CoveringConstants& k) {
        return json{{"w_size", k.w_size}, {"c0", k.c0}, {"c0_prime", k.c0_prime}, {"c1", k.c1}, {"c2", k.c2}};
    };
    return {{"n", c.n},
            {"alphabets", {c.nx, c.ny, c.kx, c.ky}},
            {"d1", c.d1},
            {"d2", c.d2},
            {"log2_m", {c.budgets.log2_m0, c.budgets.log2_m1, c.budgets.log2_m2}},
            {"backoff", c.budgets.backoff == gwlab::RateBackoff::lemma ? "lemma" : "none"},
            {"effective_rates", {c.rates.r0, c.rates.r1, c.rates.r2}},
            {"constants", consts(c.constants)},
            {"constants_pruned", consts(c.constants_pruned)},
            {"lemma_regime", c.regime.inside()},
            {"types", c.types.size()},
            {"error_types", c.error_types()},
            {"covered_types", covered},
            {"size_bounds_hold", bounds},
            {"cloud_codewords", codewords}};
}

}  // namespace

extern "C" {

const char* gwlab_version(void) { return "1.0.0"; }

const char* gwlab_last_error(void) { return g_last_error.c_str(); }

const char* gwlab_status_name(gwlab_status s) {
    switch (s) {
        case GWLAB_OK: return "ok";
        case GWLAB_ERR_DOMAIN: return "domain";
        case GWLAB_ERR_INFEASIBLE: return "infeasible";
        case GWLAB_ERR_SUPPORT: return "support";
        case GWLAB_ERR_SHAPE: return "shape";
        case GWLAB_ERR_SCHEMA: return "schema";
        case GWLAB_ERR_IO: return "io";
        case GWLAB_ERR_CONVERGENCE: return "convergence";
        case GWLAB_ERR_BUDGET: return "budget";
        case GWLAB_ERR_ARGUMENT: return "argument";
        case GWLAB_ERR_INTERNAL: return "internal";
    }
    return "unknown";
}

void gwlab_string_free(char* s) { delete[] s; }

void gwlab_solve_options_default(gwlab_solve_options* opts) {
    if (opts == nullptr) return;
    const gwlab::GWOptions g;
    opts->restarts = g.restarts;
    opts->seed = g.seed;
    opts->threads = g.threads;
}

gwlab_status gwlab_source_from_json(const char* text, gwlab_source** out) {
    return guard([&] {
        need(text, "json is NULL");
        need(out, "out is NULL");
        *out = new gwlab_source{gwlab::parse_source_json(text)};
    });
}

gwlab_status gwlab_source_load(const char* path, gwlab_source** out) {
    return guard([&] {
        need(path, "path is NULL");
        need(out, "out is NULL");
        *out = new gwlab_source{gwlab::load_source(path)};
    });
}

gwlab_status gwlab_source_dsbs(double p, gwlab_source** out) {
    return guard([&] {
        need(out, "out is NULL");
        *out = new gwlab_source{gwlab::dsbs_source(p)};
    });
}

gwlab_status gwlab_source_shape(const gwlab_source* s, size_t* nx, size_t* ny, size_t* kx, size_t* ky) {
    return guard([&] {
        need(s, "source is NULL");
        if (nx) *nx = s->src.pxy.nx();
        if (ny) *ny = s->src.pxy.ny();
        if (kx) *kx = s->src.dx.reproductions();
        if (ky) *ky = s->src.dy.reproductions();
    });
}

void gwlab_source_free(gwlab_source* s) { delete s; }

gwlab_status gwlab_rate_distortion(const gwlab_source* s, int component, double D, double* rate, double* slope) {
    return guard([&] {
        need(s, "source is NULL");
        need(rate, "rate is NULL");
        if (component != GWLAB_COMPONENT_X && component != GWLAB_COMPONENT_Y)
            throw ArgumentError{"component must be GWLAB_COMPONENT_X or GWLAB_COMPONENT_Y"};
        const bool x = component == GWLAB_COMPONENT_X;
        const auto sol = gwlab::rate_distortion(x ? s->src.pxy.marginal_x() : s->src.pxy.marginal_y(),
                                                x ? s->src.dx : s->src.dy, D);
        *rate = sol.rate;
        if (slope) *slope = sol.slope;
    });
}

gwlab_status gwlab_joint_rate_distortion(const gwlab_source* s, double D1, double D2, double* rate, double* nu1,
                                         double* nu2) {
    return guard([&] {
        need(s, "source is NULL");
        need(rate, "rate is NULL");
        const auto sol = gwlab::joint_rate_distortion(s->src.pxy, s->src.dx, s->src.dy, D1, D2);
        *rate = sol.rate;
        if (nu1) *nu1 = sol.nu1;
        if (nu2) *nu2 = sol.nu2;
    });
}

gwlab_status gwlab_joint_rd_json(const gwlab_source* s, double D1, double D2, char** out) {
    return guard([&] {
        need(s, "source is NULL");
        need(out, "out is NULL");
        const auto sol = gwlab::joint_rate_distortion(s->src.pxy, s->src.dx, s->src.dy, D1, D2);
        json j{{"rate", sol.rate},       {"d1", sol.d1},     {"d2", sol.d2},
               {"nu1", sol.nu1},         {"nu2", sol.nu2},   {"output", matrix_json(sol.output)},
               {"converged", sol.converged}, {"iterations", sol.iterations}};
        if (std::isfinite(sol.nu1) && std::isfinite(sol.nu2))
            j["tilted"] = table_json(gwlab::joint_tilted_density(sol, s->src.pxy, s->src.dx, s->src.dy, D1, D2),
                                     s->src.pxy);
        *out = dup(j.dump());
    });
}

gwlab_status gwlab_gw_solve(const gwlab_source* s, const gwlab_levels* levels, const gwlab_solve_options* opts,
                            gwlab_point** out) {
    return guard([&] {
        need(s, "source is NULL");
        need(out, "out is NULL");
        auto pt = gwlab::min_common_rate(s->src, levels_of(levels), gw_options(opts));
        *out = new gwlab_point{s->src, std::move(pt)};
    });
}

void gwlab_point_free(gwlab_point* p) { delete p; }

gwlab_status gwlab_point_rates(const gwlab_point* p, double r[3]) {
    return guard([&] {
        need(p, "point is NULL");
        need(r, "rates is NULL");
        r[0] = p->point.r0;
        r[1] = p->point.r1;
        r[2] = p->point.r2;
    });
}

gwlab_status gwlab_point_multipliers(const gwlab_point* p, double m[4]) {
    return guard([&] {
        need(p, "point is NULL");
        need(m, "mult is NULL");
        m[0] = p->point.lambda1;
        m[1] = p->point.lambda2;
        m[2] = p->point.gamma1;
        m[3] = p->point.gamma2;
    });
}

gwlab_status gwlab_point_json(const gwlab_point* p, char** out) {
    return guard([&] {
        need(p, "point is NULL");
        need(out, "out is NULL");
        *out = dup(point_json(p->point).dump());
    });
}

gwlab_status gwlab_point_tilted_json(const gwlab_point* p, char** out) {
    return guard([&] {
        need(p, "point is NULL");
        need(out, "out is NULL");
        if (!p->point.feasible) throw gwlab::Error(gwlab::ErrorCode::infeasible, "tilted density needs a feasible point");
        const auto t = gwlab::gw_tilted_density(p->point, p->src.pxy, p->src.dx, p->src.dy);
        json j = table_json(t, p->src.pxy);
        j["r0"] = p->point.r0;
        j["decomposition_residual"] = gwlab::tilted_decomposition_residual(p->point, t, p->src);
        *out = dup(j.dump());
    });
}

gwlab_status gwlab_point_dispersion(const gwlab_point* p, double* variance, double* third) {
    return guard([&] {
        need(p, "point is NULL");
        need(variance, "variance is NULL");
        if (!p->point.feasible) throw gwlab::Error(gwlab::ErrorCode::infeasible, "dispersion needs a feasible point");
        const auto t = gwlab::gw_tilted_density(p->point, p->src.pxy, p->src.dx, p->src.dy);
        const auto d = gwlab::dispersion(t, p->src.pxy);
        *variance = d.variance;
        if (third) *third = d.third_abs_moment;
    });
}

gwlab_status gwlab_second_order(const gwlab_point* p, double V, double eps, const double L[3], double* threshold,
                                int* contains) {
    return guard([&] {
        need(p, "point is NULL");
        need(L, "L is NULL");
        const auto reg = gwlab::second_order_region(p->point, V, eps);
        if (threshold) *threshold = reg.threshold;
        if (contains) *contains = gwlab::second_order_contains(reg, {L[0], L[1], L[2]}) ? 1 : 0;
    });
}

gwlab_status gwlab_excess_approx(const gwlab_point* p, double V, double T, double n, const double L[3],
                                 double out[4]) {
    return guard([&] {
        need(p, "point is NULL");
        need(L, "L is NULL");
        need(out, "out is NULL");
        const auto a = gwlab::gaussian_excess_approx(p->point, V, T, n, {L[0], L[1], L[2]});
        out[0] = a.central;
        out[1] = a.slack;
        out[2] = a.lower;
        out[3] = a.upper;
    });
}

gwlab_status gwlab_error_exponent_json(const gwlab_source* s, double r0, const gwlab_levels* levels, int method,
                                       const gwlab_solve_options* opts, char** out) {
    return guard([&] {
        need(s, "source is NULL");
        need(out, "out is NULL");
        gwlab::ExponentOptions eo;
        if (opts != nullptr) {
            if (opts->restarts < 0) throw ArgumentError{"restarts must be non-negative"};
            eo.restarts = opts->restarts;
            eo.seed = opts->seed;
            eo.threads = opts->threads == 0 ? 1 : opts->threads;
        }
        gwlab::ExponentResult r;
        if (method == GWLAB_EXPONENT_DESCENT)
            r = gwlab::error_exponent(s->src, r0, levels_of(levels), eo);
        else if (method == GWLAB_EXPONENT_GRID)
            r = gwlab::error_exponent_grid(s->src, r0, levels_of(levels), eo);
        else
            throw ArgumentError{"method must be GWLAB_EXPONENT_DESCENT or GWLAB_EXPONENT_GRID"};
        json j{{"value", r.value},
               {"feasible", r.feasible},
               {"restart_values", r.restart_values},
               {"feasible_restarts", r.feasible_restarts},
               {"r0_evaluations", r.r0_evaluations},
               {"r0_at_argmin", r.r0_at_argmin},
               {"polished", r.polished}};
        j["argmin"] = r.argmin.nx() > 0 ? matrix_json(r.argmin.matrix()) : json::array();
        *out = dup(j.dump());
    });
}

gwlab_status gwlab_md_constant(const gwlab_point* p, const double theta[3], double V, double* value) {
    return guard([&] {
        need(p, "point is NULL");
        need(theta, "theta is NULL");
        need(value, "value is NULL");
        *value = gwlab::md_constant({theta[0], theta[1], theta[2]}, p->point, V);
    });
}

gwlab_status gwlab_md_report_json(const gwlab_point* p, const double theta[3], double V, const double* n,
                                  const double* rho, size_t count, char** out) {
    return guard([&] {
        need(p, "point is NULL");
        need(theta, "theta is NULL");
        need(n, "n is NULL");
        need(rho, "rho is NULL");
        need(out, "out is NULL");
        std::vector<std::pair<double, double>> samples;
        for (size_t i = 0; i < count; ++i) samples.emplace_back(n[i], rho[i]);
        const auto rep = gwlab::md_rate_consistency({theta[0], theta[1], theta[2]}, p->point, V, samples);
        json rows = json::array();
        for (const auto& r : rep.rows) rows.push_back({{"n", r.n}, {"rho", r.rho}, {"ratio", r.ratio}});
        json j{{"constant", rep.constant},
               {"fitted_exponent", rep.fitted_exponent},
               {"final_relative_error", rep.final_relative_error},
               {"rows", rows}};
        *out = dup(j.dump());
    });
}

gwlab_status gwlab_dsbs_figure(double p, double D, double delta, const double* eps, size_t neps, double n_min,
                               double n_max, int points, double* out) {
    return guard([&] {
        need(eps, "eps is NULL");
        need(out, "out is NULL");
        const auto rows = gwlab::dsbs_figure(p, D, delta, std::vector<double>(eps, eps + neps), n_min, n_max, points);
        double* o = out;
        for (const auto& r : rows) {
            *o++ = r.n;
            for (double v : r.r_sum) *o++ = v;
            *o++ = r.first_order;
        }
    });
}

gwlab_status gwlab_dsbs_closed_json(double p, double D, double delta, char** out) {
    return guard([&] {
        need(out, "out is NULL");
        const auto t = gwlab::dsbs_tilted(p, D);
        const auto td = gwlab::dsbs_tilted_display(p, D);
        const auto v = gwlab::dsbs_variance(p, D);
        const auto pt = gwlab::pangloss_triplet(p, D, delta);
        json j{{"joint_rd", gwlab::dsbs_joint_rd(p, D)},
               {"tilted", {{"diag", t.diag}, {"offdiag", t.offdiag}}},
               {"tilted_display", {{"diag", td.diag}, {"offdiag", td.offdiag}}},
               {"variance", v.centered_at_rate},
               {"variance_display_centering", v.centered_at_one_plus_hp},
               {"pangloss", {{"r0", pt.r0}, {"r1", pt.r1}, {"r2", pt.r2}, {"gamma", pt.gamma1}}}};
        *out = dup(j.dump());
    });
}

gwlab_status gwlab_code_build(const gwlab_source* s, size_t n, const double log2_m[3], int backoff, double d1,
                              double d2, const gwlab_solve_options* opts, gwlab_code** out) {
    return guard([&] {
        need(s, "source is NULL");
        need(log2_m, "log2_m is NULL");
        need(out, "out is NULL");
        if (backoff != GWLAB_BACKOFF_LEMMA && backoff != GWLAB_BACKOFF_NONE)
            throw ArgumentError{"backoff must be GWLAB_BACKOFF_LEMMA or GWLAB_BACKOFF_NONE"};
        gwlab::CodeBudgets b{log2_m[0], log2_m[1], log2_m[2],
                             backoff == GWLAB_BACKOFF_LEMMA ? gwlab::RateBackoff::lemma : gwlab::RateBackoff::none};
        gwlab::BuildOptions bo;
        if (opts != nullptr) {
            bo.cover.seed = opts->seed;
            bo.threads = opts->threads == 0 ? 1 : opts->threads;
        }
        *out = new gwlab_code{gwlab::build_code(n, b, s->src.dx, s->src.dy, d1, d2, bo)};
    });
}

gwlab_status gwlab_code_read(const char* path, gwlab_code** out) {
    return guard([&] {
        need(path, "path is NULL");
        need(out, "out is NULL");
        *out = new gwlab_code{gwlab::read_code(path)};
    });
}

gwlab_status gwlab_code_write(const gwlab_code* c, const char* path) {
    return guard([&] {
        need(c, "code is NULL");
        need(path, "path is NULL");
        gwlab::write_code(c->code, path);
    });
}

gwlab_status gwlab_code_json(const gwlab_code* c, char** out) {
    return guard([&] {
        need(c, "code is NULL");
        need(out, "out is NULL");
        *out = dup(code_json(c->code).dump());
    });
}

void gwlab_code_free(gwlab_code* c) { delete c; }

gwlab_status gwlab_simulate_json(const gwlab_code* c, const gwlab_source* s, size_t trials, uint64_t seed,
                                 unsigned threads, char** out) {
    return guard([&] {
        need(c, "code is NULL");
        need(s, "source is NULL");
        need(out, "out is NULL");
        if (trials == 0) throw gwlab::Error(gwlab::ErrorCode::domain, "simulate: trials must be at least 1");
        const auto r = gwlab::simulate_excess(c->code, s->src.pxy, trials, seed, threads == 0 ? 1 : threads);
        json j{{"trials", r.trials},
               {"failures", r.failures},
               {"error_type_failures", r.error_type_failures},
               {"uncovered_failures", r.uncovered_failures},
               {"distortion_failures", r.distortion_failures},
               {"estimate", r.estimate},
               {"wilson_low", r.wilson_low},
               {"wilson_high", r.wilson_high},
               {"seed", r.seed}};
        *out = dup(j.dump());
    });
}

gwlab_status gwlab_exact_tail(const gwlab_code* c, const gwlab_source* s, double* tail) {
    return guard([&] {
        need(c, "code is NULL");
        need(s, "source is NULL");
        need(tail, "tail is NULL");
        *tail = gwlab::exact_type_tail(c->code, s->src.pxy);
    });
}

gwlab_status gwlab_verify_json(const gwlab_source* s, const gwlab_levels* levels, const gwlab_solve_options* opts,
                               char** out, int* failures) {
    return guard([&] {
        need(s, "source is NULL");
        need(out, "out is NULL");
        gwlab::IdentitySuiteOptions io;
        io.gw = gw_options(opts);
        const auto rows = gwlab::verify_identities(s->src, levels_of(levels), io);
        json arr = json::array();
        int failed = 0;
        for (const auto& r : rows) {
            failed += r.pass ? 0 : 1;
            arr.push_back({{"name", r.name},
                           {"value", r.value},
                           {"tolerance", r.tolerance},
                           {"pass", r.pass},
                           {"detail", r.detail}});
        }
        if (failures) *failures = failed;
        *out = dup(json{{"checks", arr}, {"failures", failed}}.dump());
    });
}

}  // extern "C"
