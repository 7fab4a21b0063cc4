#include "roadopt/laxhopf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "roadopt/errors.hpp"
#include "roadopt/numerics.hpp"

namespace roadopt {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

// --- BoundaryProfile -------------------------------------------------------

double BoundaryProfile::value(double t) const {
    if (U.empty()) return 0.0;
    if (t <= t_lo) return 0.0;
    double s = (t - t_lo) / dt;
    const auto n = U.size() - 1;
    if (s >= static_cast<double>(n)) return U.back();
    auto i = static_cast<std::size_t>(s);
    double w = s - static_cast<double>(i);
    return U[i] + w * (U[i + 1] - U[i]);
}

double BoundaryProfile::time_at_mass(double w) const {
    if (U.empty() || w <= 0.0) return t_lo;
    if (w > U.back()) w = U.back();
    auto it = std::lower_bound(U.begin(), U.end(), w);
    auto i = static_cast<std::size_t>(it - U.begin());
    if (i == 0) return t_lo;
    double u0 = U[i - 1], u1 = U[i];
    double frac = (u1 > u0) ? (w - u0) / (u1 - u0) : 1.0;
    return node(static_cast<int>(i) - 1) + frac * dt;
}

BoundaryProfile BoundaryProfile::from_rates(double t_lo, double dt,
                                            const std::vector<double>& rates) {
    BoundaryProfile p;
    p.t_lo = t_lo;
    p.dt = dt;
    p.U.resize(rates.size() + 1);
    p.U[0] = 0.0;
    for (std::size_t i = 0; i < rates.size(); ++i)
        p.U[i + 1] = p.U[i] + rates[i] * dt;
    return p;
}

void BoundaryProfile::validate(double M) const {
    if (U.size() < 2 || !(dt > 0.0))
        throw ConfigError("boundary profile needs at least one cell and dt > 0");
    double G = total_mass();
    if (std::fabs(U.front()) > 1e-9 * std::max(1.0, G))
        throw ConfigError("boundary profile must start at zero mass");
    const double slack = 1e-9 * std::max(1.0, M);
    for (int k = 0; k < cells(); ++k) {
        double r = rate(k);
        if (r < -slack || r > M + slack)
            throw ConfigError("departure rate out of [0, M] in cell " +
                              std::to_string(k) + ": " + std::to_string(r));
    }
}

// --- LaxSolution -----------------------------------------------------------

LaxSolution::LaxSolution(const FluxModel& m, BoundaryProfile bar, double L)
    : m_(&m), bar_(std::move(bar)), L_(L), view_(m) {
    if (!(L > 0.0)) throw ConfigError("road length must be positive");
    bar_.validate(m.capacity());
    const int n = bar_.cells();
    rate_.resize(static_cast<std::size_t>(n));
    rho_.resize(static_cast<std::size_t>(n));
    gpk_.resize(static_cast<std::size_t>(n));
    double hint = 0.0;
    for (int k = 0; k < n; ++k) {
        auto i = static_cast<std::size_t>(k);
        double r = std::clamp(bar_.rate(k), 0.0, m.u_cap());
        rate_[i] = r;
        if (r <= 0.0) {
            rho_[i] = 0.0;
            gpk_[i] = m.gp0();
        } else {
            double rho = m.g(r, hint);
            rho_[i] = rho;
            gpk_[i] = 1.0 / m.fp(rho);
            hint = rho;
        }
    }
}

double LaxSolution::exact_objective(double t, double x, double tau) const {
    double p = (t - tau) / x;
    if (p <= m_->gp0()) return bar_.value(tau);
    return x * m_->g_star(p).value + bar_.value(tau);
}

// The scan walks the boundary cells once. On cell k the rate is the constant
// r_k, so with p = (t - tau)/x the objective
//     F(tau) = x g*(p) + U_k + r_k (tau - tau_k)
// is strictly convex with interior critical point tau = t - x g'(r_k) and
// value U_k - x g(r_k) + r_k (t - tau_k) there, both in terms of the cached
// per-cell tables. Node (kink) candidates are screened with the sampled
// Legendre table, which never undershoots a convex function, so a candidate
// is kept whenever its screened value minus the interpolation bound still
// ties the best screened value; the kept few are then re-evaluated exactly.
LaxSolution::Argmin LaxSolution::argmin(double t, double x) const {
    if (x <= 1e-12 * L_) {
        double v = bar_.value(t);
        return {v, t, t, false};
    }
    const double gp0 = m_->gp0();
    const double t0 = bar_.t_lo, t1 = bar_.t_hi(), dt = bar_.dt;
    const double tau_feas = t - x * gp0;
    if (tau_feas <= t0) return {0.0, tau_feas, tau_feas, false};
    const double hi = std::min(tau_feas, t1);

    // Marching interpolation of g* along descending slopes: node k+1 queries
    // a smaller p than node k, so the table cursor only ever moves down.
    const int last = view_.size() - 1;
    int cur = last - 1;
    auto screened_gstar = [&](double p, double& err) -> double {
        if (p >= view_.p_at(last)) {
            err = 0.0; // affine continuation equals the capped transform
            return view_.gstar_at(last) + (p - view_.p_at(last)) * view_.u_at(last);
        }
        if (p <= view_.p_at(0)) {
            err = 0.0;
            return 0.0;
        }
        while (cur > 0 && p < view_.p_at(cur)) --cur;
        double pa = view_.p_at(cur), pb = view_.p_at(cur + 1);
        double w = (p - pa) / (pb - pa);
        err = 0.25 * (pb - pa) * (view_.u_at(cur + 1) - view_.u_at(cur));
        return view_.gstar_at(cur) + w * (view_.gstar_at(cur + 1) - view_.gstar_at(cur));
    };

    struct Cand {
        double tau, val;
        bool exact;
    };

    const int ncell = bar_.cells();
    const int kmax = std::min(ncell, static_cast<int>(std::floor((hi - t0) / dt)));

    // Pass 1: screened upper bound of the minimum over every candidate.
    double vmin_up = (tau_feas >= t1) ? bar_.total_mass() : bar_.value(tau_feas);
    for (int k = 0; k <= kmax; ++k) {
        auto i = static_cast<std::size_t>(k);
        double tau_k = t0 + dt * k;
        double err = 0.0;
        double node_val = x * screened_gstar((t - tau_k) / x, err) + bar_.U[i];
        vmin_up = std::min(vmin_up, node_val);
        if (k < ncell) {
            double b = std::min(tau_k + dt, hi);
            double tau_s = t - x * gpk_[i];
            if (tau_s > tau_k && tau_s < b)
                vmin_up = std::min(vmin_up, bar_.U[i] - x * rho_[i] +
                                                rate_[i] * (t - tau_k));
        }
    }

    // Pass 2: collect everything whose screened value could still tie.
    const double keep_tol = 1e-7 * (1.0 + std::fabs(vmin_up)) + 1e-9;
    std::vector<Cand> kept;
    kept.reserve(8);
    if (tau_feas >= t1)
        kept.push_back({tau_feas, bar_.total_mass(), true});
    else
        kept.push_back({tau_feas, bar_.value(tau_feas), true});
    cur = last - 1;
    for (int k = 0; k <= kmax; ++k) {
        auto i = static_cast<std::size_t>(k);
        double tau_k = t0 + dt * k;
        double err = 0.0;
        double node_val = x * screened_gstar((t - tau_k) / x, err) + bar_.U[i];
        if (node_val - x * err <= vmin_up + keep_tol)
            kept.push_back({tau_k, node_val, false});
        if (k < ncell) {
            double b = std::min(tau_k + dt, hi);
            double tau_s = t - x * gpk_[i];
            if (tau_s > tau_k && tau_s < b) {
                double val = bar_.U[i] - x * rho_[i] + rate_[i] * (t - tau_k);
                if (val <= vmin_up + keep_tol) kept.push_back({tau_s, val, true});
            }
        }
    }

    double vmin = kInf;
    for (Cand& c : kept) {
        if (!c.exact) c.val = exact_objective(t, x, c.tau);
        vmin = std::min(vmin, c.val);
    }
    std::sort(kept.begin(), kept.end(),
              [](const Cand& a, const Cand& b) { return a.tau < b.tau; });

    // Near-tied candidates converging to one smooth minimum sit within the
    // width of its value-tolerance basin; collapse those to the best point.
    // Candidates separated by more than that width are the same minimizer
    // only if the objective stays flat between them (a genuine plateau).
    const double point_tol = 1e-4 * (1.0 + t1 - t0);
    struct Region {
        double lo, hi, best_tau, best_val;
        bool interval;
    };
    auto build_regions = [&](double tol) {
        std::vector<Region> regs;
        for (const Cand& c : kept) {
            if (c.val > vmin + tol) continue;
            if (!regs.empty()) {
                Region& r = regs.back();
                double gap = c.tau - r.hi;
                bool same = gap <= point_tol;
                bool flat = false;
                if (!same) {
                    double mid = exact_objective(t, x, r.hi + 0.5 * gap);
                    flat = mid <= vmin + tol;
                    if (flat && gap <= 10.0 * point_tol) same = true;
                }
                if (same || flat) {
                    r.hi = c.tau;
                    if (flat && !same) r.interval = true;
                    if (c.val < r.best_val) { r.best_val = c.val; r.best_tau = c.tau; }
                    continue;
                }
            }
            regs.push_back({c.tau, c.tau, c.tau, c.val, false});
        }
        return regs;
    };

    Argmin out;
    out.value = vmin;
    const double tol_interval = 1e-9 * (1.0 + std::fabs(vmin));
    const double tol_shock = 1e-7 * (1.0 + std::fabs(vmin));
    std::vector<Region> r9 = build_regions(tol_interval);
    out.tau_min = r9.front().interval ? r9.front().lo : r9.front().best_tau;
    out.tau_max = r9.back().interval ? r9.back().hi : r9.back().best_tau;
    std::vector<Region> r7 = build_regions(tol_shock);
    out.multiple = r7.size() > 1;
    for (const Region& r : r7)
        if (r.interval) out.multiple = true;
    return out;
}

double LaxSolution::value(double t, double x) const { return argmin(t, x).value; }

FluxValue LaxSolution::flux(double t, double x) const {
    Argmin a = argmin(t, x);
    double p = (t - a.tau_min) / std::max(x, 1e-12 * L_);
    double u = (p <= m_->gp0()) ? 0.0 : m_->gamma(p);
    return {u, a.multiple};
}

std::vector<double> LaxSolution::value_sweep(const std::vector<double>& ts,
                                             double x, Exec ex) const {
    std::vector<double> out(ts.size());
    par_for(ex, static_cast<std::ptrdiff_t>(ts.size()), [&](std::size_t i) { out[i] = value(ts[i], x); });
    return out;
}

std::vector<LaxSolution::Argmin>
LaxSolution::argmin_sweep(const std::vector<double>& ts, double x, Exec ex) const {
    std::vector<Argmin> out(ts.size());
    par_for(ex, static_cast<std::ptrdiff_t>(ts.size()), [&](std::size_t i) { out[i] = argmin(ts[i], x); });
    return out;
}

// --- free-function operations ----------------------------------------------

double lax_value(const LaxSolution& sol, double t, double x) {
    return sol.value(t, x);
}

FluxValue lax_flux(const LaxSolution& sol, double t, double x) {
    return sol.flux(t, x);
}

CharInterval backward_char_interval(const LaxSolution& sol, double T) {
    LaxSolution::Argmin a = sol.argmin(T, sol.length());
    return {T, a.tau_min, a.tau_max};
}

double arrival_time(const LaxSolution& sol, double t0) {
    const BoundaryProfile& bar = sol.boundary();
    const double L = sol.length();
    const double level = bar.value(t0);
    const double t_ff = t0 + L * sol.model().gp0();
    const double tolv = 1e-12 * (1.0 + bar.total_mass());
    if (sol.value(t_ff, L) >= level - tolv) return t_ff;

    double lo = t_ff;
    double step = std::max(1.0, 0.25 * (bar.t_hi() - bar.t_lo));
    double hi = lo + step;
    const double reach = std::max(1.0, bar.t_hi() - bar.t_lo) * 1e7;
    while (sol.value(hi, L) < level - tolv) {
        step *= 2.0;
        hi += step;
        if (hi - lo > reach)
            throw WindowTooNarrow("arrival level was never reached downstream");
    }
    const double xtol = 1e-12 * (1.0 + std::fabs(hi));
    while (hi - lo > xtol) {
        double mid = 0.5 * (lo + hi);
        if (mid == lo || mid == hi) break;
        if (sol.value(mid, L) < level - tolv) lo = mid; else hi = mid;
    }
    return std::max(0.5 * (lo + hi), t_ff);
}

std::vector<std::pair<double, double>> car_trajectory(const LaxSolution& sol,
                                                      double t0, int samples) {
    if (samples < 2) samples = 2;
    const double L = sol.length();
    const double v0 = 1.0 / sol.model().gp0();
    const double level = sol.boundary().value(t0);
    const double tolv = 1e-12 * (1.0 + sol.boundary().total_mass());
    const double ta = arrival_time(sol, t0);

    std::vector<std::pair<double, double>> path(static_cast<std::size_t>(samples));
    par_for(Exec::parallel, static_cast<std::ptrdiff_t>(path.size()), [&](std::size_t i) {
        double t = t0 + (ta - t0) * static_cast<double>(i) / (samples - 1);
        double x_ff = std::min((t - t0) * v0, L);
        double y;
        if (sol.value(t, x_ff) >= level - tolv) {
            y = x_ff; // free-flow cap binds (vacuum ahead of the driver)
        } else {
            // level position: U(t, .) is nonincreasing in x, find the crossing
            double lo = 0.0, hi = x_ff;
            const double xtol = 1e-12 * (1.0 + L);
            while (hi - lo > xtol) {
                double mid = 0.5 * (lo + hi);
                if (mid == lo || mid == hi) break;
                if (sol.value(t, mid) >= level - tolv) lo = mid; else hi = mid;
            }
            y = 0.5 * (lo + hi);
        }
        path[i] = {t, y};
    });
    for (std::size_t i = 1; i < path.size(); ++i) // shave bisection wiggles
        path[i].second = std::max(path[i].second, path[i - 1].second);
    return path;
}

BoundaryProfile compressionize(const LaxSolution& sol, double T) {
    const BoundaryProfile& bar = sol.boundary();
    CharInterval ci = backward_char_interval(sol, T);
    const double span_tol = 1e-9 * (1.0 + bar.t_hi() - bar.t_lo);
    if (ci.eta_plus - ci.eta_minus <= span_tol)
        throw NotAShock("backward characteristic through T is unique");

    const double L = sol.length();
    const double lambda = sol.value(T, L);
    BoundaryProfile out = bar;
    for (std::size_t i = 0; i < out.U.size(); ++i) {
        double ti = out.node(static_cast<int>(i));
        if (ti <= ci.eta_minus || ti >= ci.eta_plus) continue;
        double p = (T - ti) / L;
        double repl = lambda - L * sol.model().g_star(p).value;
        out.U[i] = std::min(bar.U[i], repl); // the replacement never exceeds bar
    }
    return out;
}

} // namespace roadopt
