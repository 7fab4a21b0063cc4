// roadopt: departure-rate planning on a single road, plus junction models.
// Commands: solve, check, oracle, junction. All file formats are JSON/CSV.
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "roadopt/config.hpp"
#include "roadopt/errors.hpp"
#include "roadopt/fluxmodel.hpp"
#include "roadopt/groups.hpp"
#include "roadopt/junction.hpp"
#include "roadopt/laxhopf.hpp"
#include "roadopt/oracle.hpp"
#include "roadopt/parallel.hpp"
#include "roadopt/planner.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace roadopt;

namespace {

std::string g12(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

// group names go into CSV headers; keep the separator safe
std::string safe_name(std::string s) {
    for (char& c : s)
        if (c == ',' || c == '\n' || c == '\r') c = '_';
    return s;
}

std::ofstream open_out(const fs::path& p) {
    std::ofstream f(p);
    if (!f) throw ConfigError("cannot write " + p.string());
    return f;
}

void write_json(const fs::path& p, const json& j) {
    auto f = open_out(p);
    f << j.dump(2) << '\n';
}

json read_json_file(const fs::path& p) {
    std::ifstream f(p);
    if (!f) throw ConfigError("cannot read " + p.string() + " (run solve first?)");
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw ConfigError(p.string() + " is not valid JSON: " + e.what());
    }
    return j;
}

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
};

Table read_csv(const fs::path& p) {
    std::ifstream f(p);
    if (!f) throw ConfigError("cannot read " + p.string() + " (run solve first?)");
    Table t;
    std::string line;
    if (!std::getline(f, line)) throw ConfigError(p.string() + " is empty");
    std::stringstream hs(line);
    std::string cell;
    while (std::getline(hs, cell, ',')) t.header.push_back(cell);
    int lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream rs(line);
        while (std::getline(rs, cell, ',')) {
            try {
                row.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw ConfigError(p.string() + " line " + std::to_string(lineno) +
                                  ": not a number: " + cell);
            }
        }
        if (row.size() != t.header.size())
            throw ConfigError(p.string() + " line " + std::to_string(lineno) +
                              ": wrong column count");
        t.rows.push_back(std::move(row));
    }
    return t;
}

// ------------------------------------------------------------------ solve

void write_constants(const fs::path& p, const Plan& plan,
                     const ProblemConfig& cfg) {
    json j;
    j["C"] = plan.C.C;
    j["kappa"] = plan.part.kappa;
    j["cost"] = plan.cost;
    j["residual"] = plan.fit.residual;
    j["iterations"] = plan.fit.iterations;
    j["non_unique"] = plan.fit.non_unique;
    j["grid"] = plan.grid;
    j["groups"] = cfg.names;
    j["G"] = cfg.sizes;
    j["log"] = plan.fit.log;
    write_json(p, j);
}

// one row per departure cell: left edge time, total rate, per-group rates
void write_departures(const fs::path& p, const Plan& plan,
                      const ProblemConfig& cfg) {
    const BoundaryProfile& total = plan.cand.departures;
    auto f = open_out(p);
    f << "t,u_total";
    for (const auto& n : cfg.names) f << ",u_" << safe_name(n);
    f << '\n';
    for (int c = 0; c < total.cells(); ++c) {
        double ta = total.node(c), tb = total.node(c + 1);
        f << g12(ta) << ',' << g12(total.rate(c));
        for (const auto& gp : plan.group_departures)
            f << ',' << g12((gp.value(tb) - gp.value(ta)) / total.dt);
        f << '\n';
    }
}

// arrival-side samples on the candidate grid: flux, group mix, active group
void write_arrivals(const fs::path& p, const Plan& plan,
                    const ProblemConfig& cfg) {
    const Candidate& cand = plan.cand;
    double G = plan.fractions.G;
    auto f = open_out(p);
    f << "T,u";
    for (const auto& n : cfg.names) f << ",theta_" << safe_name(n);
    f << ",active\n";
    for (int k = 0; k < cand.samples(); ++k) {
        double T = cand.T_node(k);
        double s = std::clamp(cand.w[k], 0.0, G);
        f << g12(T) << ',' << g12(cand.u[k]);
        for (int i = 0; i < plan.fractions.group_count(); ++i)
            f << ',' << g12(plan.fractions.at(i, s));
        f << ',' << cand.env.active(T) << '\n';
    }
}

void write_trajectories(const fs::path& p, const Plan& plan) {
    auto f = open_out(p);
    f << "T,eta\n";
    for (std::size_t k = 0; k < plan.eta_T.size(); ++k)
        f << g12(plan.eta_T[k]) << ',' << g12(plan.eta_t[k]) << '\n';
}

int cmd_solve(const ProblemConfig& cfg, const fs::path& out) {
    FluxModel m = cfg.flux();
    GroupSpec spec = cfg.groups();
    SolveOptions opts = cfg.options(Exec::parallel);

    Plan plan = solve_plan(spec, m, cfg.length, opts);
    try {
        plan.validate(cfg.sizes);
    } catch (const Error& e) {
        std::fprintf(stderr, "solver produced an invalid plan: %s\n", e.what());
        return 2;
    }

    fs::create_directories(out);
    write_constants(out / "constants.json", plan, cfg);
    write_departures(out / "departures.csv", plan, cfg);
    write_arrivals(out / "arrivals.csv", plan, cfg);
    write_trajectories(out / "trajectories.csv", plan);

    std::printf("fitted constants:\n");
    for (int i = 0; i < plan.C.count(); ++i)
        std::printf("  %-12s C = %-14.10g kappa = %-14.10g (G = %g)\n",
                    cfg.names[i].c_str(), plan.C.C[i], plan.part.kappa[i],
                    cfg.sizes[i]);
    std::printf("total cost %.12g, residual %.3e, %d iterations%s\n", plan.cost,
                plan.fit.residual, plan.fit.iterations,
                plan.fit.non_unique ? " (multiple fixed points)" : "");
    std::printf("artifacts written to %s\n", out.string().c_str());
    return 0;
}

// ------------------------------------------------------------------ check

struct Condition {
    std::string name;
    bool pass;
    double value;
    double bar;
};

int cmd_check(const ProblemConfig& cfg, const fs::path& out) {
    FluxModel m = cfg.flux();
    GroupSpec spec = cfg.groups();
    const int N = spec.count();

    json cj = read_json_file(out / "constants.json");
    std::vector<double> C = cj.at("C").get<std::vector<double>>();
    if (static_cast<int>(C.size()) != N)
        throw ConfigError("constants.json group count does not match the config");

    Table d = read_csv(out / "departures.csv");
    if (static_cast<int>(d.header.size()) != 2 + N)
        throw ConfigError("departures.csv column count does not match the config");
    if (d.rows.size() < 2) throw ConfigError("departures.csv has too few rows");

    const int cells = static_cast<int>(d.rows.size());
    const double t0 = d.rows.front()[0];
    const double dt = (d.rows.back()[0] - t0) / (cells - 1);
    std::vector<double> total_rates(cells);
    std::vector<std::vector<double>> group_rates(N, std::vector<double>(cells));
    for (int c = 0; c < cells; ++c) {
        total_rates[c] = d.rows[c][1];
        for (int i = 0; i < N; ++i) group_rates[i][c] = d.rows[c][2 + i];
    }
    BoundaryProfile total = BoundaryProfile::from_rates(t0, dt, total_rates);
    std::vector<BoundaryProfile> per_group;
    for (int i = 0; i < N; ++i)
        per_group.push_back(BoundaryProfile::from_rates(t0, dt, group_rates[i]));

    double G_cfg = 0.0;
    for (double g : cfg.sizes) G_cfg += g;
    json report;
    if (total.total_mass() <= 1e-12 * std::max(1.0, G_cfg)) {
        report["empty"] = true;
        report["warning"] = "empty plan: nothing to check";
        report["pass"] = true;
        write_json(out / "report.json", report);
        std::printf("warning: empty plan, all conditions hold vacuously\n");
        return 0;
    }

    FractionField fractions = FractionField::from_group_profiles(total, per_group);
    LaxSolution sol(m, total, cfg.length);

    std::vector<Condition> conds;
    auto add = [&](const std::string& name, bool pass, double value, double bar) {
        conds.push_back({name, pass, value, bar});
    };

    // per-group mass against the configured sizes
    double mass_worst = 0.0;
    for (int i = 0; i < N; ++i) {
        double err = std::fabs(per_group[i].total_mass() - cfg.sizes[i]) /
                     std::max(1.0, cfg.sizes[i]);
        mass_worst = std::max(mass_worst, err);
    }
    add("mass_error", mass_worst <= cfg.check_mass_tol, mass_worst,
        cfg.check_mass_tol);

    // supported cells per group, with a 2-cell margin inside each run
    auto support_points = [&](int i, int margin) {
        double rmax = *std::max_element(group_rates[i].begin(), group_rates[i].end());
        std::vector<char> sup(cells, 0);
        for (int c = 0; c < cells; ++c)
            sup[c] = group_rates[i][c] > 1e-6 * rmax ? 1 : 0;
        std::vector<double> pts;
        for (int c = 0; c < cells; ++c) {
            if (!sup[c]) continue;
            bool interior = true;
            for (int k = 1; k <= margin; ++k) {
                if (c - k < 0 || c + k >= cells || !sup[c - k] || !sup[c + k])
                    interior = false;
            }
            if (interior) pts.push_back(t0 + (c + 0.5) * dt);
        }
        return pts;
    };

    json support_dev = json::array(), off_slack = json::array();
    double sup_worst = 0.0, off_worst = 1e300;
    for (int i = 0; i < N; ++i) {
        std::vector<double> pts = support_points(i, 2);
        double bar = cfg.check_support_tol * (1.0 + std::fabs(C[i]));
        double dev = 0.0;
        int used = 0;
        std::size_t stride =
            std::max<std::size_t>(1, pts.size() / static_cast<std::size_t>(cfg.check_samples));
        for (std::size_t k = 0; k < pts.size(); k += stride) {
            try {
                double dj = marginal_cost(spec, sol, fractions, i, pts[k]);
                dev = std::max(dev, std::fabs(dj - C[i]));
                ++used;
            } catch (const AmbiguousCharacteristic&) {
            }
        }
        if (used == 0 && !pts.empty())
            throw ConfigError("all support samples hit rarefaction centers");
        support_dev.push_back({{"group", cfg.names[i]},
                               {"max_deviation", dev},
                               {"bar", bar},
                               {"samples", used}});
        sup_worst = std::max(sup_worst, dev / bar);

        // off-support: uniform window samples at least 2 cells away from support
        std::vector<char> sup(cells, 0);
        double rmax = *std::max_element(group_rates[i].begin(), group_rates[i].end());
        for (int c = 0; c < cells; ++c)
            sup[c] = group_rates[i][c] > 1e-6 * rmax ? 1 : 0;
        double slack = 1e300;
        int offn = 0;
        for (int k = 0; k < cfg.check_samples; ++k) {
            double t = cfg.t_lo + (cfg.t_hi - cfg.t_lo) * (k + 0.5) / cfg.check_samples;
            int c = static_cast<int>(std::floor((t - t0) / dt));
            bool near = false;
            for (int j = std::max(0, c - 2); j <= std::min(cells - 1, c + 2); ++j)
                if (sup[j]) near = true;
            if (near) continue;
            try {
                double dj = marginal_cost(spec, sol, fractions, i, t);
                slack = std::min(slack, dj - C[i]);
                ++offn;
            } catch (const AmbiguousCharacteristic&) {
            }
        }
        if (offn == 0) slack = 0.0; // support covers the window: vacuous
        off_slack.push_back({{"group", cfg.names[i]},
                             {"min_slack", slack},
                             {"bar", -cfg.check_off_tol},
                             {"samples", offn}});
        off_worst = std::min(off_worst, slack);
    }
    // normalized: the worst per-group deviation relative to its own bar
    if (off_worst == 1e300) off_worst = 0.0; // no off-support samples anywhere
    add("support_deviation", sup_worst <= 1.0, sup_worst, 1.0);
    add("off_support_slack", off_worst >= -cfg.check_off_tol, off_worst,
        -cfg.check_off_tol);

    // shock scan over the arrival span of the written plan
    int c_first = 0, c_last = cells - 1;
    while (c_first < cells && total_rates[c_first] <= 1e-12) ++c_first;
    while (c_last > 0 && total_rates[c_last] <= 1e-12) --c_last;
    double t_first = total.node(c_first), t_last = total.node(c_last + 1);
    double T_lo = t_first + cfg.length * m.gp0();
    double T_hi;
    try {
        T_hi = arrival_time(sol, t_last - 1e-9) + 2 * dt;
    } catch (const Error&) {
        T_hi = t_last + 3 * cfg.length * m.gp0();
    }
    double width_max = 0.0;
    for (int k = 0; k < cfg.check_samples; ++k) {
        double T = T_lo + (T_hi - T_lo) * (k + 0.5) / cfg.check_samples;
        CharInterval ci = backward_char_interval(sol, T);
        width_max = std::max(width_max, ci.eta_plus - ci.eta_minus);
    }
    add("shock_scan", width_max <= 5 * dt, width_max, 5 * dt);

    bool all_pass = true;
    json jconds = json::array();
    for (const auto& c : conds) {
        all_pass = all_pass && c.pass;
        jconds.push_back({{"name", c.name},
                          {"pass", c.pass},
                          {"value", c.value},
                          {"bar", c.bar}});
    }
    report["conditions"] = jconds;
    report["support_deviation"] = support_dev;
    report["off_support_slack"] = off_slack;
    report["shock_max_width"] = width_max;
    report["mass_error"] = mass_worst;
    report["pass"] = all_pass;
    write_json(out / "report.json", report);

    for (const auto& c : conds)
        std::printf("%-20s %s  (value %.6g, bar %.6g)\n", c.name.c_str(),
                    c.pass ? "pass" : "FAIL", c.value, c.bar);
    if (!all_pass) {
        std::string bad;
        for (const auto& c : conds)
            if (!c.pass) bad += (bad.empty() ? "" : ", ") + c.name;
        std::fprintf(stderr, "check failed: %s\n", bad.c_str());
        return 2;
    }
    std::printf("all optimality conditions hold\n");
    return 0;
}

// ------------------------------------------------------------------ oracle

int cmd_oracle(const ProblemConfig& cfg, const fs::path& out, int refine_mult) {
    FluxModel m = cfg.flux();
    GroupSpec spec = cfg.groups();
    SolveOptions opts = cfg.options(Exec::parallel);

    Plan plan = solve_plan(spec, m, cfg.length, opts);
    std::printf("plan cost %.12g\n", plan.cost);

    // finite-volume propagation of the plan's total departure curve
    const BoundaryProfile& dep = plan.cand.departures;
    int c_first = 0, c_last = dep.cells() - 1;
    while (c_first < dep.cells() && dep.rate(c_first) <= 1e-12) ++c_first;
    while (c_last > 0 && dep.rate(c_last) <= 1e-12) --c_last;
    json rep;
    rep["plan_cost"] = plan.cost;
    rep["plan_C"] = plan.C.C;
    double fv_l1 = -1.0;
    if (c_first <= c_last) {
        double ta = dep.node(c_first), tb = dep.node(c_last + 1);
        double h = cfg.oracle_dt / std::max(1, refine_mult);
        int nb = static_cast<int>(std::ceil((tb - ta) / h - 1e-9));
        std::vector<double> rates(nb);
        double umax = 0.0;
        for (int c = 0; c < nb; ++c) {
            rates[c] = (dep.value(ta + (c + 1) * h) - dep.value(ta + c * h)) / h;
            umax = std::max(umax, rates[c]);
        }
        BoundaryProfile bar = BoundaryProfile::from_rates(ta, h, rates);
        double u_margin = std::min(umax + 1e-3 * m.capacity(), 0.999 * m.capacity());
        double dx = 0.85 * h / std::max(m.gp(u_margin), m.gp0());
        FVResult fv = fv_propagate(bar, {}, m, cfg.length, dx, Exec::parallel);
        fv_l1 = 0.0;
        for (int c = 0; c < fv.cells(); ++c) {
            double Tm = fv.node(c) + 0.5 * fv.dt;
            fv_l1 += std::fabs(fv.u[c] - plan.cand.arrival_flux(Tm)) * fv.dt;
        }
        rep["fv_l1"] = fv_l1;
        rep["fv_dt"] = h;
        rep["fv_dx"] = dx;
        rep["fv_mass_in"] = fv.mass_in;
        rep["fv_mass_out"] = fv.mass_out;
        std::printf("finite-volume arrival flux: L1 distance %.6g (dt %.3g, dx %.3g)\n",
                    fv_l1, h, dx);
        if (!out.empty()) {
            fs::create_directories(out);
            auto f = open_out(out / "fv.csv");
            f << "T,u_fv,u_plan\n";
            for (int c = 0; c < fv.cells(); ++c) {
                double Tm = fv.node(c) + 0.5 * fv.dt;
                f << g12(Tm) << ',' << g12(fv.u[c]) << ','
                  << g12(plan.cand.arrival_flux(Tm)) << '\n';
            }
        }
    } else {
        rep["fv_l1"] = nullptr;
        std::printf("plan is empty; skipping the finite-volume comparison\n");
    }

    // brute-force lower bound (kept at desk scale)
    bool beaten = false;
    if (spec.count() <= 2) {
        double w_lo = cfg.oracle_w_lo, w_hi = cfg.oracle_w_hi;
        if (!(w_lo < w_hi) && c_first <= c_last) {
            double ta = dep.node(c_first), tb = dep.node(c_last + 1);
            double pad = 0.15 * (tb - ta);
            w_lo = std::max(cfg.t_lo, ta - pad);
            w_hi = std::min(cfg.t_hi, tb + pad);
        }
        BruteResult br = brute_force_optimize(spec, m, cfg.length, cfg.oracle_bins,
                                              w_lo, w_hi, cfg.oracle_starts,
                                              opts.seed, cfg.oracle_refine,
                                              Exec::parallel);
        rep["brute_cost"] = br.cost;
        rep["brute_bins"] = cfg.oracle_bins;
        rep["brute_window"] = {w_lo, w_hi};
        rep["cost_ratio"] = plan.cost / br.cost;
        std::printf("brute-force cost %.12g over %d bins (plan/brute = %.6f)\n",
                    br.cost, cfg.oracle_bins, plan.cost / br.cost);
        beaten = plan.cost > 1.01 * br.cost;
        if (beaten)
            std::fprintf(stderr,
                         "brute force beats the plan by more than 1%%\n");
    } else {
        rep["brute_cost"] = nullptr;
        rep["note"] = "brute force is limited to two groups; finite-volume mode only";
        std::printf("%d groups: brute force refused, finite-volume mode only\n",
                    spec.count());
    }

    if (!out.empty()) {
        fs::create_directories(out);
        write_json(out / "oracle.json", rep);
        std::printf("report written to %s\n", (out / "oracle.json").string().c_str());
    }
    return beaten ? 2 : 0;
}

// ---------------------------------------------------------------- junction

int cmd_junction(const JunctionFileConfig& jc, const fs::path& out) {
    const JunctionConfig& J = jc.junction;
    const int m = J.incoming(), n = J.outgoing();
    FluxBounds b = junction_bounds(J, jc.rho_in, jc.rho_out);

    std::vector<double> f;
    json rep;
    rep["model"] = jc.model;
    if (jc.model == "lp") {
        LPResult r = solve_lp(J, b);
        f = r.f;
        rep["objective"] = r.objective;
        rep["tie"] = r.tie;
        if (r.tie) std::printf("note: the optimum is attained on a whole face\n");
    } else if (jc.model == "priority") {
        f = solve_priority_curve(J, b);
    } else if (jc.model == "stopsign") {
        f = solve_stop_sign(J, b);
    } else { // buffer
        std::vector<double> rates = buffer_limit_rates(J, J.buffer_capacity);
        double dt = buffer_suggested_dt(J, b, rates);
        int steps = jc.t_end > 0 ? static_cast<int>(std::ceil(jc.t_end / dt)) : 500;
        steps = std::min(steps, 2'000'000);
        int stride = std::max(1, steps / 2000);

        std::vector<double> q(n, 0.0);
        BufferState st;
        std::ofstream csv;
        if (!out.empty()) {
            fs::create_directories(out);
            csv = open_out(out / "buffer.csv");
            csv << "t";
            for (int j = 0; j < n; ++j) csv << ",q" << j + 1;
            for (int i = 0; i < m; ++i) csv << ",f_in" << i + 1;
            for (int j = 0; j < n; ++j) csv << ",f_out" << j + 1;
            csv << '\n';
        }
        for (int s = 0; s < steps; ++s) {
            st = buffer_step(J, b, q, dt, rates);
            q = st.q;
            if (csv.is_open() && (s % stride == 0 || s == steps - 1)) {
                csv << g12((s + 1) * dt);
                for (double v : st.q) csv << ',' << g12(v);
                for (double v : st.f_in) csv << ',' << g12(v);
                for (double v : st.f_out) csv << ',' << g12(v);
                csv << '\n';
            }
        }
        f = st.f_in;
        rep["dt"] = dt;
        rep["steps"] = steps;
        rep["queues"] = st.q;
        rep["f_out"] = st.f_out;

        // the vanishing-buffer limit should land on the priority-curve point
        std::vector<double> ref = solve_priority_curve(J, b);
        double dev = 0.0;
        for (int i = 0; i < m; ++i) dev = std::max(dev, std::fabs(f[i] - ref[i]));
        rep["priority_reference"] = ref;
        rep["max_priority_deviation"] = dev;
        std::printf("buffer capacity %.3g, %d steps of dt %.3g; "
                    "max deviation from the priority point %.3g\n",
                    J.buffer_capacity, steps, dt, dev);
    }

    // flux table with the active constraints flagged
    std::vector<double> inflow(n, 0.0);
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < m; ++i) inflow[j] += J.turning[i][j] * f[i];
    std::vector<bool> demand_lim(m), supply_lim(n);
    std::printf("incoming   flux           demand bound   at bound\n");
    for (int i = 0; i < m; ++i) {
        demand_lim[i] = f[i] >= b.in_max[i] - 1e-9 * (1 + b.in_max[i]);
        std::printf("  road %-3d %-14.10g %-14.10g %s\n", i + 1, f[i],
                    b.in_max[i], demand_lim[i] ? "yes" : "no");
    }
    std::printf("outgoing   inflow         supply bound   at bound\n");
    for (int j = 0; j < n; ++j) {
        supply_lim[j] = inflow[j] >= b.out_max[j] - 1e-9 * (1 + b.out_max[j]);
        std::printf("  road %-3d %-14.10g %-14.10g %s\n", j + 1, inflow[j],
                    b.out_max[j], supply_lim[j] ? "yes" : "no");
    }
    // containment with an fp allowance: the buffer fluxes come from an ODE
    // and may sit on a bound to within rounding
    double viol = 0.0;
    for (int i = 0; i < m; ++i) {
        viol = std::max(viol, -f[i]);
        viol = std::max(viol, f[i] - b.in_max[i]);
    }
    for (int j = 0; j < n; ++j) viol = std::max(viol, inflow[j] - b.out_max[j]);
    bool inside = viol <= 1e-9;
    std::printf("fluxes %s the admissible region (worst violation %.3g)\n",
                inside ? "lie inside" : "LEFT", std::max(viol, 0.0));

    rep["f"] = f;
    rep["inflow"] = inflow;
    rep["violation"] = std::max(viol, 0.0);
    rep["in_max"] = b.in_max;
    rep["out_max"] = b.out_max;
    rep["demand_limited"] = demand_lim;
    rep["supply_limited"] = supply_lim;
    rep["admissible"] = inside;
    if (!out.empty()) {
        fs::create_directories(out);
        write_json(out / "junction.json", rep);
    }
    return inside ? 0 : 2;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"globally optimal departure rates on a single road, with "
                 "junction-model utilities"};
    app.require_subcommand(1);

    std::string config_path, out_dir;
    long long seed_flag = -1;
    int threads = 0, refine = 1;
    app.add_option("--config", config_path, "problem or junction config (JSON)");
    app.add_option("--out", out_dir, "directory for result artifacts");
    app.add_option("--seed", seed_flag, "override the config's multistart seed");
    app.add_option("--threads", threads, "worker threads (<= 0 uses all cores)");
    app.add_option("--refine", refine, "oracle: finite-volume resolution multiplier")
        ->check(CLI::PositiveNumber);

    auto* sc_solve = app.add_subcommand("solve", "fit the plan and write artifacts");
    auto* sc_check = app.add_subcommand("check", "verify written artifacts against "
                                                 "the optimality conditions");
    auto* sc_oracle = app.add_subcommand("oracle", "compare the plan against brute "
                                                   "force and finite volumes");
    auto* sc_junction = app.add_subcommand("junction", "evaluate a junction model");
    for (auto* s : {sc_solve, sc_check, sc_oracle, sc_junction}) s->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (threads > 0) set_threads(threads);
        if (config_path.empty()) throw ConfigError("--config is required");

        if (app.got_subcommand(sc_junction)) {
            JunctionFileConfig jc = load_junction_config(config_path);
            return cmd_junction(jc, out_dir);
        }

        ProblemConfig cfg = load_problem_config(config_path);
        if (seed_flag >= 0) cfg.seed = static_cast<unsigned>(seed_flag);
        if (app.got_subcommand(sc_solve)) {
            if (out_dir.empty()) throw ConfigError("solve needs --out");
            return cmd_solve(cfg, out_dir);
        }
        if (app.got_subcommand(sc_check)) {
            if (out_dir.empty()) throw ConfigError("check needs --out");
            return cmd_check(cfg, out_dir);
        }
        return cmd_oracle(cfg, out_dir, refine);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 3;
    } catch (const ParseError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 3;
    } catch (const InvalidVelocityLaw& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 3;
    } catch (const NonConcaveFlux& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 3;
    } catch (const ModelShapeError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 3;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}
