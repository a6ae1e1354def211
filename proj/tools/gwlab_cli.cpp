#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "gwlab/gwlab.h"

namespace {

using nlohmann::json;

// Carries a library status out of a command body.
struct Failure {
    gwlab_status status;
    std::string message;
};

struct UsageError {
    std::string message;
};

void check(gwlab_status s) {
    if (s != GWLAB_OK) throw Failure{s, gwlab_last_error()};
}

int exit_code(gwlab_status s) {
    switch (s) {
        case GWLAB_ERR_IO:
        case GWLAB_ERR_SCHEMA:
        case GWLAB_ERR_SHAPE: return 2;
        default: return 1;
    }
}

std::string num(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

// Rounds every floating value to 12 significant digits; non-finite values become null.
json rounded(const json& j) {
    if (j.is_number_float()) {
        const double v = j.get<double>();
        if (!std::isfinite(v)) return nullptr;
        return std::strtod(num(v).c_str(), nullptr);
    }
    if (j.is_array() || j.is_object()) {
        json out = j;
        for (auto it = out.begin(); it != out.end(); ++it) *it = rounded(*it);
        return out;
    }
    return j;
}

json take_json(char* s) {
    std::unique_ptr<char, void (*)(char*)> guard(s, gwlab_string_free);
    return json::parse(s);
}

using SourcePtr = std::unique_ptr<gwlab_source, void (*)(gwlab_source*)>;
using PointPtr = std::unique_ptr<gwlab_point, void (*)(gwlab_point*)>;
using CodePtr = std::unique_ptr<gwlab_code, void (*)(gwlab_code*)>;

struct Table {
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;
};

struct Common {
    std::string model;
    std::optional<double> dsbs;
    std::string format = "csv";
    std::string output;
    std::optional<std::uint64_t> seed;
    unsigned threads = 0;
    int restarts = 20;
};

struct Levels {
    std::optional<double> r1, r2, d1, d2;
};

class Runner {
  public:
    explicit Runner(std::string command) : command_(std::move(command)) {}

    void set(const std::string& key, const std::string& value) { config_.emplace_back(key, value); }
    void set(const std::string& key, double value) { set(key, num(value)); }

    void resolve_common(const Common& c) {
        format_ = c.format;
        output_ = c.output;
        if (c.seed) {
            seed_ = *c.seed;
            set("seed", std::to_string(seed_));
            set("seed_source", "flag");
        } else if (const char* env = std::getenv("GWLAB_SEED"); env != nullptr && *env != '\0') {
            char* end = nullptr;
            seed_ = std::strtoull(env, &end, 10);
            if (end == env || *end != '\0') throw UsageError{"GWLAB_SEED must be an unsigned integer"};
            set("seed", std::to_string(seed_));
            set("seed_source", "env");
        } else {
            seed_ = 1;
            set("seed", "1");
            set("seed_source", "default");
        }
        threads_ = c.threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : c.threads;
        set("threads", std::to_string(threads_));
        restarts_ = c.restarts;
    }

    SourcePtr source(const Common& c, bool dsbs_default = false) {
        gwlab_source* s = nullptr;
        if (!c.model.empty()) {
            check(gwlab_source_load(c.model.c_str(), &s));
            set("model", c.model);
        } else if (c.dsbs || dsbs_default) {
            dsbs_p_ = c.dsbs.value_or(0.48);
            check(gwlab_source_dsbs(*dsbs_p_, &s));
            set("dsbs_p", *dsbs_p_);
        } else {
            throw UsageError{"a source is required: pass --model FILE or --dsbs P"};
        }
        return SourcePtr(s, gwlab_source_free);
    }

    gwlab_levels levels(const Levels& l) {
        if (!l.r1 || !l.r2 || !l.d1 || !l.d2) throw UsageError{"--r1, --r2, --D1 and --D2 are required"};
        gwlab_levels out{*l.r1, *l.r2, *l.d1, *l.d2};
        set("r1", out.r1);
        set("r2", out.r2);
        set("D1", out.d1);
        set("D2", out.d2);
        return out;
    }

    gwlab_solve_options options() {
        gwlab_solve_options o;
        gwlab_solve_options_default(&o);
        o.restarts = restarts_;
        o.seed = seed_;
        o.threads = threads_;
        set("restarts", std::to_string(restarts_));
        return o;
    }

    PointPtr solve(const gwlab_source* s, const gwlab_levels& l) {
        const gwlab_solve_options o = options();
        gwlab_point* p = nullptr;
        check(gwlab_gw_solve(s, &l, &o, &p));
        return PointPtr(p, gwlab_point_free);
    }

    std::optional<double> dsbs_p() const { return dsbs_p_; }
    std::uint64_t seed() const { return seed_; }
    unsigned threads() const { return threads_; }

    void emit(const Table& t, const json& record) const {
        std::ostringstream os;
        if (format_ == "json") {
            json cfg = json::object();
            for (const auto& [k, v] : config_) cfg[k] = v;
            json doc{{"command", command_}, {"version", gwlab_version()}, {"units", "bits/symbol"},
                     {"config", cfg}, {"result", rounded(record)}};
            os << doc.dump(2) << '\n';
        } else {
            os << "# gwlab " << gwlab_version() << " " << command_ << '\n';
            for (const auto& [k, v] : config_) os << "# " << k << '=' << v << '\n';
            os << "# units: rates and information densities in bits/symbol\n";
            for (std::size_t i = 0; i < t.columns.size(); ++i) os << (i ? "," : "") << t.columns[i];
            os << '\n';
            for (const auto& r : t.rows) {
                for (std::size_t i = 0; i < r.size(); ++i) os << (i ? "," : "") << r[i];
                os << '\n';
            }
        }
        if (output_.empty()) {
            std::cout << os.str();
            std::cout.flush();
        } else {
            std::ofstream f(output_, std::ios::binary);
            if (!f || !(f << os.str()) || !f.flush()) throw Failure{GWLAB_ERR_IO, "cannot write '" + output_ + "'"};
        }
    }

  private:
    std::string command_;
    std::vector<std::pair<std::string, std::string>> config_;
    std::string format_ = "csv";
    std::string output_;
    std::uint64_t seed_ = 1;
    unsigned threads_ = 1;
    int restarts_ = 20;
    std::optional<double> dsbs_p_;
};

void add_common(CLI::App* app, Common& c, bool with_source = true) {
    if (with_source) {
        auto* m = app->add_option("--model", c.model, "JSON source model {px_y, dx, dy}");
        auto* d = app->add_option("--dsbs", c.dsbs, "doubly symmetric binary source with this crossover");
        m->excludes(d);
    }
    app->add_option("--format", c.format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
    app->add_option("--output", c.output, "output file (default stdout)");
    app->add_option("--seed", c.seed, "seed (falls back to GWLAB_SEED, then 1)");
    app->add_option("--threads", c.threads, "worker threads (0 = machine parallelism)");
    app->add_option("--restarts", c.restarts, "random restarts of the common-rate solver")
        ->check(CLI::NonNegativeNumber);
}

void add_levels(CLI::App* app, Levels& l) {
    app->add_option("--r1", l.r1, "private rate 1 (bits/symbol)");
    app->add_option("--r2", l.r2, "private rate 2 (bits/symbol)");
    app->add_option("--D1", l.d1, "distortion level 1");
    app->add_option("--D2", l.d2, "distortion level 2");
}

std::vector<std::string> cells(std::initializer_list<double> vs) {
    std::vector<std::string> out;
    for (double v : vs) out.push_back(num(v));
    return out;
}

std::string eps_label(double e) {
    std::string s = num(e);
    std::string out;
    for (char ch : s)
        if (ch != '.') out += ch;
    return "r_sum_eps" + out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Gray-Wyner rate, dispersion and covering-code toolkit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(gwlab_version()));

    Common common;
    Levels lv;

    auto* rd = app.add_subcommand("rd", "rate-distortion function of one component");
    double rd_D = 0.0;
    std::string component = "x";
    add_common(rd, common);
    rd->add_option("--D", rd_D, "distortion level")->required();
    rd->add_option("--component", component, "x or y")->check(CLI::IsMember({"x", "y"}));

    auto* jrd = app.add_subcommand("joint-rd", "joint rate-distortion function and its tilted density");
    add_common(jrd, common);
    add_levels(jrd, lv);
    bool jrd_table = false;
    jrd->add_flag("--table", jrd_table, "emit the per-cell tilted density instead of the summary row");

    auto* gw = app.add_subcommand("gw-r0", "least common rate at given private rates and distortions");
    add_common(gw, common);
    add_levels(gw, lv);

    auto* tilted = app.add_subcommand("tilted", "tilted information density of the common rate");
    add_common(tilted, common);
    add_levels(tilted, lv);

    auto* disp = app.add_subcommand("dispersion", "variance and third absolute moment of the tilted density");
    add_common(disp, common);
    add_levels(disp, lv);

    auto* so = app.add_subcommand("second-order", "second-order region membership and Gaussian excess estimate");
    add_common(so, common);
    add_levels(so, lv);
    double so_eps = 0.1, so_n = 1000.0;
    std::vector<double> so_L{0.0, 0.0, 0.0};
    so->add_option("--eps", so_eps, "target excess-distortion probability")->required();
    so->add_option("--L", so_L, "second-order offsets L0,L1,L2")->delimiter(',')->expected(3);
    so->add_option("--n", so_n, "blocklength for the Gaussian estimate");

    auto* ex = app.add_subcommand("exponent", "error exponent at a common rate outside the region");
    add_common(ex, common);
    add_levels(ex, lv);
    double ex_r0 = 0.0;
    std::string method = "descent";
    ex->add_option("--r0", ex_r0, "common rate (bits/symbol)")->required();
    ex->add_option("--method", method, "descent or grid")->check(CLI::IsMember({"descent", "grid"}));

    auto* mdc = app.add_subcommand("mdc", "moderate-deviations constant and ratio sequence");
    add_common(mdc, common);
    add_levels(mdc, lv);
    std::vector<double> theta{1.0, 0.0, 0.0};
    double md_a = 1.0 / 3.0, md_nmin = 1e3, md_nmax = 1e7;
    mdc->add_option("--theta", theta, "back-off directions theta0,theta1,theta2")->delimiter(',')->expected(3);
    mdc->add_option("--rho-exponent", md_a, "rho_n = n^-a")->check(CLI::Range(0.0, 0.5));
    mdc->add_option("--n-min", md_nmin, "smallest blocklength (decades up to --n-max)");
    mdc->add_option("--n-max", md_nmax, "largest blocklength");

    auto* fig = app.add_subcommand("dsbs-figure", "DSBS sum rate against blocklength on the Pangloss plane");
    add_common(fig, common, false);
    double fp = 0.48, fD = 0.15, fdelta = 0.25, fnmin = 10.0, fnmax = 1e4;
    int fpoints = 50;
    std::vector<double> feps{0.01, 0.99};
    fig->add_option("--p", fp, "crossover probability");
    fig->add_option("--D", fD, "distortion level");
    fig->add_option("--delta", fdelta, "common distortion level");
    fig->add_option("--eps", feps, "excess probabilities")->delimiter(',');
    fig->add_option("--n-min", fnmin, "smallest blocklength");
    fig->add_option("--n-max", fnmax, "largest blocklength");
    fig->add_option("--points", fpoints, "log-spaced blocklengths");

    auto* sim = app.add_subcommand("simulate", "build a type-covering code and estimate its excess probability");
    add_common(sim, common);
    std::size_t sim_n = 8, trials = 100000;
    double sr0 = 0.0, sr1 = 0.0, sr2 = 0.0, sd1 = 0.0, sd2 = 0.0;
    std::string backoff = "lemma", code_in, code_out;
    sim->add_option("--n", sim_n, "blocklength");
    sim->add_option("--r0", sr0, "common rate (bits/symbol)");
    sim->add_option("--r1", sr1, "private rate 1 (bits/symbol)");
    sim->add_option("--r2", sr2, "private rate 2 (bits/symbol)");
    sim->add_option("--D1", sd1, "distortion level 1");
    sim->add_option("--D2", sd2, "distortion level 2");
    sim->add_option("--backoff", backoff, "lemma or none")->check(CLI::IsMember({"lemma", "none"}));
    sim->add_option("--trials", trials, "Monte-Carlo trials")->check(CLI::PositiveNumber);
    sim->add_option("--code-out", code_out, "write the built code to this file");
    sim->add_option("--code-in", code_in, "load a code instead of building one");

    auto* ver = app.add_subcommand("verify", "identity checks on the tilted densities");
    add_common(ver, common);
    add_levels(ver, lv);
    std::string suite;
    double vD = 0.15, vdelta = 0.25;
    ver->add_option("--suite", suite, "check suite")->required()->check(CLI::IsMember({"lemmas"}));
    ver->add_option("--D", vD, "DSBS distortion when levels are not given");
    ver->add_option("--delta", vdelta, "DSBS common distortion when levels are not given");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    CLI::App* cmd = app.get_subcommands().front();
    Runner run(cmd->get_name());
    try {
        if (cmd == fig) {
            run.resolve_common(common);
            run.set("p", fp);
            run.set("D", fD);
            run.set("delta", fdelta);
            std::string eps_list;
            for (double e : feps) eps_list += (eps_list.empty() ? "" : ";") + num(e);
            run.set("eps", eps_list);
            run.set("n_min", fnmin);
            run.set("n_max", fnmax);
            run.set("points", std::to_string(fpoints));
            if (fpoints < 2) throw UsageError{"--points must be at least 2"};
            std::vector<double> out(static_cast<std::size_t>(fpoints) * (feps.size() + 2));
            check(gwlab_dsbs_figure(fp, fD, fdelta, feps.data(), feps.size(), fnmin, fnmax, fpoints, out.data()));
            Table t;
            t.columns.push_back("n");
            for (double e : feps) t.columns.push_back(eps_label(e));
            t.columns.push_back("first_order_sum");
            json rows = json::array();
            const std::size_t w = feps.size() + 2;
            for (int i = 0; i < fpoints; ++i) {
                std::vector<std::string> r;
                json jr = json::object();
                for (std::size_t k = 0; k < w; ++k) {
                    r.push_back(num(out[i * w + k]));
                    jr[t.columns[k]] = out[i * w + k];
                }
                t.rows.push_back(std::move(r));
                rows.push_back(jr);
            }
            run.emit(t, rows);
            return 0;
        }

        run.resolve_common(common);
        if (cmd == rd) {
            auto src = run.source(common);
            run.set("component", component);
            run.set("D", rd_D);
            double rate = 0.0, slope = 0.0;
            check(gwlab_rate_distortion(src.get(), component == "x" ? GWLAB_COMPONENT_X : GWLAB_COMPONENT_Y, rd_D,
                                        &rate, &slope));
            run.emit({{"component", "D", "rate", "slope"}, {{component, num(rd_D), num(rate), num(slope)}}},
                     json{{"component", component}, {"D", rd_D}, {"rate", rate}, {"slope", slope}});
        } else if (cmd == jrd) {
            auto src = run.source(common);
            if (!lv.d1 || !lv.d2) throw UsageError{"--D1 and --D2 are required"};
            run.set("D1", *lv.d1);
            run.set("D2", *lv.d2);
            run.set("table", jrd_table ? "true" : "false");
            char* s = nullptr;
            check(gwlab_joint_rd_json(src.get(), *lv.d1, *lv.d2, &s));
            const json j = take_json(s);
            Table t;
            if (jrd_table) {
                t.columns = {"x", "y", "p", "i_xy"};
                for (const auto& c : j.at("tilted").at("cells"))
                    t.rows.push_back({std::to_string(c["x"].get<int>()), std::to_string(c["y"].get<int>()),
                                      num(c["p"].get<double>()), num(c["value"].get<double>())});
            } else {
                t.columns = {"rate", "nu1", "nu2", "mean", "variance"};
                const bool has = j.contains("tilted");
                t.rows.push_back(cells({j["rate"].get<double>(), j["nu1"].get<double>(), j["nu2"].get<double>(),
                                        has ? j["tilted"]["mean"].get<double>() : NAN,
                                        has ? j["tilted"]["variance"].get<double>() : NAN}));
            }
            run.emit(t, j);
        } else if (cmd == gw) {
            auto src = run.source(common);
            const auto l = run.levels(lv);
            auto pt = run.solve(src.get(), l);
            char* s = nullptr;
            check(gwlab_point_json(pt.get(), &s));
            const json j = take_json(s);
            auto g = [&](const char* k) { return j[k].is_null() ? INFINITY : j[k].get<double>(); };
            Table t{{"r0", "r1", "r2", "d1", "d2", "lambda1", "lambda2", "gamma1", "gamma2", "feasible",
                     "restart_spread"},
                    {}};
            auto r = cells({g("r0"), g("r1"), g("r2"), g("d1"), g("d2"), g("lambda1"), g("lambda2"), g("gamma1"),
                            g("gamma2")});
            r.push_back(j["feasible"].get<bool>() ? "true" : "false");
            r.push_back(num(g("restart_spread")));
            t.rows.push_back(r);
            run.emit(t, j);
        } else if (cmd == tilted || cmd == disp) {
            auto src = run.source(common);
            const auto l = run.levels(lv);
            auto pt = run.solve(src.get(), l);
            char* s = nullptr;
            check(gwlab_point_tilted_json(pt.get(), &s));
            const json j = take_json(s);
            Table t;
            if (cmd == tilted) {
                t.columns = {"x", "y", "p", "j_xy"};
                for (const auto& c : j.at("cells"))
                    t.rows.push_back({std::to_string(c["x"].get<int>()), std::to_string(c["y"].get<int>()),
                                      num(c["p"].get<double>()),
                                      c["value"].is_null() ? "inf" : num(c["value"].get<double>())});
                run.emit(t, j);
            } else {
                t.columns = {"r0", "mean", "variance", "third_abs_moment"};
                t.rows.push_back(cells({j["r0"].get<double>(), j["mean"].get<double>(),
                                        j["variance"].get<double>(), j["third_abs_moment"].get<double>()}));
                run.emit(t, json{{"r0", j["r0"]},
                                 {"mean", j["mean"]},
                                 {"variance", j["variance"]},
                                 {"third_abs_moment", j["third_abs_moment"]}});
            }
        } else if (cmd == so) {
            auto src = run.source(common);
            const auto l = run.levels(lv);
            run.set("eps", so_eps);
            run.set("L", num(so_L[0]) + ";" + num(so_L[1]) + ";" + num(so_L[2]));
            run.set("n", so_n);
            auto pt = run.solve(src.get(), l);
            double V = 0.0, T = 0.0, thr = 0.0, ap[4] = {0, 0, 0, 0};
            int contains = 0;
            check(gwlab_point_dispersion(pt.get(), &V, &T));
            check(gwlab_second_order(pt.get(), V, so_eps, so_L.data(), &thr, &contains));
            check(gwlab_excess_approx(pt.get(), V, T, so_n, so_L.data(), ap));
            Table t{{"V", "T", "threshold", "contains", "central", "slack", "lower", "upper"}, {}};
            auto r = cells({V, T, thr});
            r.push_back(contains ? "true" : "false");
            for (double v : ap) r.push_back(num(v));
            t.rows.push_back(r);
            run.emit(t, json{{"V", V},
                             {"T", T},
                             {"threshold", thr},
                             {"contains", contains != 0},
                             {"central", ap[0]},
                             {"slack", ap[1]},
                             {"lower", ap[2]},
                             {"upper", ap[3]}});
        } else if (cmd == ex) {
            auto src = run.source(common);
            const auto l = run.levels(lv);
            run.set("r0", ex_r0);
            run.set("method", method);
            const gwlab_solve_options o = run.options();
            char* s = nullptr;
            check(gwlab_error_exponent_json(src.get(), ex_r0, &l,
                                            method == "grid" ? GWLAB_EXPONENT_GRID : GWLAB_EXPONENT_DESCENT, &o, &s));
            const json j = take_json(s);
            Table t{{"value", "feasible", "r0_at_argmin", "feasible_restarts", "argmin"}, {}};
            std::string argmin;
            for (const auto& row : j["argmin"])
                for (const auto& v : row) argmin += (argmin.empty() ? "" : ";") + num(v.get<double>());
            t.rows.push_back({num(j["value"].get<double>()), j["feasible"].get<bool>() ? "true" : "false",
                              num(j["r0_at_argmin"].get<double>()), std::to_string(j["feasible_restarts"].get<int>()),
                              argmin});
            run.emit(t, j);
        } else if (cmd == mdc) {
            auto src = run.source(common);
            const auto l = run.levels(lv);
            run.set("theta", num(theta[0]) + ";" + num(theta[1]) + ";" + num(theta[2]));
            run.set("rho_exponent", md_a);
            run.set("n_min", md_nmin);
            run.set("n_max", md_nmax);
            if (!(md_nmin >= 1.0 && md_nmax > md_nmin)) throw UsageError{"need 1 <= --n-min < --n-max"};
            auto pt = run.solve(src.get(), l);
            double V = 0.0;
            check(gwlab_point_dispersion(pt.get(), &V, nullptr));
            std::vector<double> ns, rhos;
            for (double n = md_nmin; n <= md_nmax * (1 + 1e-12); n *= 10.0) {
                ns.push_back(n);
                rhos.push_back(std::pow(n, -md_a));
            }
            if (ns.back() < md_nmax) {
                ns.push_back(md_nmax);
                rhos.push_back(std::pow(md_nmax, -md_a));
            }
            char* s = nullptr;
            check(gwlab_md_report_json(pt.get(), theta.data(), V, ns.data(), rhos.data(), ns.size(), &s));
            json j = take_json(s);
            j["V"] = V;
            Table t{{"n", "rho", "ratio", "constant"}, {}};
            for (const auto& r : j["rows"])
                t.rows.push_back(cells({r["n"].get<double>(), r["rho"].get<double>(), r["ratio"].get<double>(),
                                        j["constant"].get<double>()}));
            run.emit(t, j);
        } else if (cmd == sim) {
            auto src = run.source(common);
            CodePtr code(nullptr, gwlab_code_free);
            gwlab_code* c = nullptr;
            if (!code_in.empty()) {
                run.set("code_in", code_in);
                check(gwlab_code_read(code_in.c_str(), &c));
            } else {
                run.set("n", std::to_string(sim_n));
                run.set("r0", sr0);
                run.set("r1", sr1);
                run.set("r2", sr2);
                run.set("D1", sd1);
                run.set("D2", sd2);
                run.set("backoff", backoff);
                const double n = static_cast<double>(sim_n);
                const double log2m[3] = {n * sr0, n * sr1, n * sr2};
                gwlab_solve_options o;
                gwlab_solve_options_default(&o);
                o.seed = run.seed();
                o.threads = run.threads();
                check(gwlab_code_build(src.get(), sim_n, log2m,
                                       backoff == "none" ? GWLAB_BACKOFF_NONE : GWLAB_BACKOFF_LEMMA, sd1, sd2, &o, &c));
            }
            code.reset(c);
            if (!code_out.empty()) {
                run.set("code_out", code_out);
                check(gwlab_code_write(code.get(), code_out.c_str()));
            }
            run.set("trials", std::to_string(trials));
            char* s = nullptr;
            check(gwlab_simulate_json(code.get(), src.get(), trials, run.seed(), run.threads(), &s));
            json j = take_json(s);
            double tail = 0.0;
            check(gwlab_exact_tail(code.get(), src.get(), &tail));
            check(gwlab_code_json(code.get(), &s));
            j["exact_tail"] = tail;
            j["code"] = take_json(s);
            Table t{{"trials", "failures", "estimate", "wilson_low", "wilson_high", "exact_tail", "types",
                     "error_types"},
                    {}};
            t.rows.push_back({std::to_string(j["trials"].get<std::size_t>()),
                              std::to_string(j["failures"].get<std::size_t>()), num(j["estimate"].get<double>()),
                              num(j["wilson_low"].get<double>()), num(j["wilson_high"].get<double>()), num(tail),
                              std::to_string(j["code"]["types"].get<std::size_t>()),
                              std::to_string(j["code"]["error_types"].get<std::size_t>())});
            run.emit(t, j);
        } else if (cmd == ver) {
            auto src = run.source(common, true);
            run.set("suite", suite);
            gwlab_levels l{};
            if (lv.r1 || lv.r2 || lv.d1 || lv.d2 || !run.dsbs_p()) {
                l = run.levels(lv);
            } else {
                char* s = nullptr;
                check(gwlab_dsbs_closed_json(*run.dsbs_p(), vD, vdelta, &s));
                const json c = take_json(s);
                l = {c["pangloss"]["r1"].get<double>(), c["pangloss"]["r2"].get<double>(), vD, vD};
                run.set("D", vD);
                run.set("delta", vdelta);
                run.set("r1", l.r1);
                run.set("r2", l.r2);
            }
            const gwlab_solve_options o = run.options();
            char* s = nullptr;
            int failures = 0;
            check(gwlab_verify_json(src.get(), &l, &o, &s, &failures));
            const json j = take_json(s);
            Table t{{"check", "value", "tolerance", "result", "detail"}, {}};
            for (const auto& c : j["checks"])
                t.rows.push_back({c["name"].get<std::string>(), num(c["value"].get<double>()),
                                  num(c["tolerance"].get<double>()), c["pass"].get<bool>() ? "PASS" : "FAIL",
                                  c["detail"].get<std::string>()});
            run.emit(t, j);
        }
    } catch (const UsageError& e) {
        std::cerr << "gwlab: " << e.message << '\n';
        return 2;
    } catch (const Failure& f) {
        std::cerr << "gwlab: " << gwlab_status_name(f.status) << ": " << f.message << '\n';
        return exit_code(f.status);
    } catch (const std::exception& e) {
        std::cerr << "gwlab: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
