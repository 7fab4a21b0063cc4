#include "roadopt/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "roadopt/errors.hpp"
#include "roadopt/numerics.hpp"

namespace roadopt {

namespace {

std::string fmt(const char* f, double a, double b = 0.0) {
    char buf[192];
    std::snprintf(buf, sizeof buf, f, a, b);
    return buf;
}

// Exact Riemann flux between left state a and right state b for the convex
// flux g: min of g over [a, b] when a <= b, max over [b, a] otherwise. g is
// increasing on the whole working range, so both branches reduce to the
// upwind value g(a); ga is that cached value.
inline double godunov_flux(double ga) { return ga; }

} // namespace

FVResult fv_propagate(const BoundaryProfile& bar,
                      const std::vector<std::vector<double>>& theta_bar,
                      const FluxModel& m, double L, double dx, Exec ex) {
    if (!(L > 0.0) || !(dx > 0.0)) throw ConfigError("need L > 0 and dx > 0");
    if (!(bar.dt > 0.0) || bar.cells() < 1) throw ConfigError("empty departure curve");
    const int ng = static_cast<int>(theta_bar.size());
    for (const auto& row : theta_bar)
        if (static_cast<int>(row.size()) != bar.cells())
            throw ConfigError("fraction rows must cover the departure cells");

    const double M = m.capacity();
    const double sat = M * (1.0 - 1e-6);
    const double dt = bar.dt;

    double u_max = 0.0;
    for (int c = 0; c < bar.cells(); ++c) u_max = std::max(u_max, bar.rate(c));
    if (u_max >= sat)
        throw CapacitySaturation(fmt("departure rate %.6g at capacity %.6g", u_max, M));

    // Godunov keeps states inside [0, u_max], so u_max bounds the wave speed
    // for the whole march; pad the grid so the slowest car still arrives.
    const double reach = L * m.gp(std::max(u_max, 0.0)) * 1.25 + 4.0 * dt;
    const int pad = static_cast<int>(std::ceil(reach / dt));
    const int nt = bar.cells() + pad;
    const int nx = std::max(1, static_cast<int>(std::ceil(L / dx)));
    const double dxs = L / nx;

    std::vector<double> u(nt, 0.0), un(nt, 0.0), F(nt, 0.0), rho(nt, 0.0);
    std::vector<std::vector<double>> th, thn;
    for (int c = 0; c < bar.cells(); ++c) u[c] = std::max(0.0, bar.rate(c));
    if (ng > 0) {
        th.assign(ng, std::vector<double>(nt, 1.0 / ng));
        thn = th;
        for (int c = 0; c < bar.cells(); ++c) {
            double sum = 0.0;
            for (int i = 0; i < ng; ++i) sum += std::max(0.0, theta_bar[i][c]);
            if (sum > 0.0)
                for (int i = 0; i < ng; ++i)
                    th[i][c] = std::max(0.0, theta_bar[i][c]) / sum;
        }
    }

    const double lam = dxs / dt;
    for (int step = 0; step < nx; ++step) {
        // pass 1: cell fluxes g(u_j), warm-started on last step's densities
        par_for(ex, nt, [&](std::ptrdiff_t j) {
            const double uj = u[j];
            if (uj <= 0.0) {
                rho[j] = 0.0;
                F[j] = m.gp0() * uj; // linear extension; ~0 up to roundoff
            } else {
                rho[j] = rho[j] > 0.0 ? m.g(uj, rho[j]) : m.g(uj);
                F[j] = rho[j];
            }
        });
        // stability and capacity guard over the states actually present
        for (int j = 0; j < nt; ++j) {
            if (u[j] >= sat)
                throw CapacitySaturation(
                    fmt("state %.6g reached capacity %.6g", u[j], M));
            const double gp = u[j] <= 0.0 ? m.gp0() : 1.0 / m.fp(rho[j]);
            if (lam * gp > 1.0 + 1e-12)
                throw CFLViolation(
                    fmt("dx * g'(u) / dt = %.6g > 1 at u = %.6g", lam * gp, u[j]));
        }
        // pass 2: conservative update; fractions ride the same donor fluxes
        par_for(ex, nt, [&](std::ptrdiff_t j) {
            const double Fin = j > 0 ? godunov_flux(F[j - 1]) : 0.0;
            const double Fout = godunov_flux(F[j]);
            un[j] = u[j] - lam * (Fout - Fin);
            if (ng > 0) {
                double sum = 0.0;
                for (int i = 0; i < ng; ++i) {
                    const double thin = j > 0 ? th[i][j - 1] : th[i][j];
                    const double p = th[i][j] * u[j] - lam * (th[i][j] * Fout - thin * Fin);
                    thn[i][j] = p;
                    sum += p;
                }
                if (sum > 1e-300) {
                    for (int i = 0; i < ng; ++i) thn[i][j] /= sum;
                } else {
                    for (int i = 0; i < ng; ++i) thn[i][j] = th[i][j];
                }
            }
        });
        u.swap(un);
        if (ng > 0) th.swap(thn);
    }

    FVResult r;
    r.t_lo = bar.t_lo;
    r.dt = dt;
    r.u = std::move(u);
    r.theta = std::move(th);
    r.mass_in = bar.total_mass();
    double out = 0.0;
    for (double uj : r.u) out += uj;
    r.mass_out = out * dt;
    return r;
}

double fv_plan_cost(const GroupSpec& spec, const FluxModel& m, double L,
                    double t_lo, double dt_bin,
                    const std::vector<std::vector<double>>& rates,
                    int refine, Exec ex) {
    const int ng = static_cast<int>(rates.size());
    if (ng != spec.count()) throw ConfigError("one rate row per group required");
    if (ng == 0 || rates[0].empty()) throw ConfigError("empty plan");
    const int bins = static_cast<int>(rates[0].size());
    refine = std::max(1, refine);
    const double dt = dt_bin / refine;

    std::vector<double> total(static_cast<size_t>(bins) * refine, 0.0);
    std::vector<std::vector<double>> theta(
        ng, std::vector<double>(total.size(), 1.0 / ng));
    double u_max = 0.0;
    for (int b = 0; b < bins; ++b) {
        double sum = 0.0;
        for (int i = 0; i < ng; ++i) sum += std::max(0.0, rates[i][b]);
        u_max = std::max(u_max, sum);
        for (int k = 0; k < refine; ++k) {
            const int c = b * refine + k;
            total[c] = sum;
            if (sum > 0.0)
                for (int i = 0; i < ng; ++i)
                    theta[i][c] = std::max(0.0, rates[i][b]) / sum;
        }
    }
    const BoundaryProfile bar = BoundaryProfile::from_rates(t_lo, dt, total);
    const double dx = 0.9 * dt / m.gp(std::max(u_max, 1e-6));
    const FVResult fv = fv_propagate(bar, theta, m, L, dx, ex);

    double J = 0.0;
    for (size_t c = 0; c < total.size(); ++c)
        if (total[c] > 0.0)
            J += spec.phi_at(t_lo + dt * (c + 0.5)) * total[c] * dt;
    for (int c = 0; c < fv.cells(); ++c) {
        if (fv.u[c] <= 0.0) continue;
        const double tm = fv.node(c) + 0.5 * dt;
        for (int i = 0; i < ng; ++i)
            J += spec.psi_at(i, tm) * fv.theta[i][c] * fv.u[c] * dt;
    }
    return J;
}

namespace {

struct Descent {
    const GroupSpec& spec;
    const FluxModel& m;
    double L, w_lo, dt_bin, cap;
    int bins, refine;

    double cost(const std::vector<std::vector<double>>& r) const {
        return fv_plan_cost(spec, m, L, w_lo, dt_bin, r, refine, Exec::serial);
    }

    // Random point of the feasible set: per-group masses exact, per-bin sum
    // capped. Rejection with proportional redistribution; the cap is loose
    // in every intended use, so this settles in a few rounds.
    std::vector<std::vector<double>> random_start(std::mt19937& rng) const {
        const int ng = spec.count();
        std::uniform_real_distribution<double> uni(0.05, 1.0);
        std::vector<std::vector<double>> r(ng, std::vector<double>(bins, 0.0));
        for (int i = 0; i < ng; ++i) {
            double sum = 0.0;
            for (int b = 0; b < bins; ++b) sum += (r[i][b] = uni(rng));
            const double scale = spec.groups[i].size / (sum * dt_bin);
            for (int b = 0; b < bins; ++b) r[i][b] *= scale;
        }
        for (int round = 0; round < 200; ++round) {
            bool ok = true;
            for (int i = 0; i < ng; ++i) {
                // clamp overfull bins, then restore the group's mass on the rest
                double excess = 0.0;
                for (int b = 0; b < bins; ++b) {
                    double col = 0.0;
                    for (int k = 0; k < ng; ++k) col += r[k][b];
                    if (col > cap) {
                        const double cut = std::min(r[i][b], (col - cap));
                        r[i][b] -= cut;
                        excess += cut;
                        ok = false;
                    }
                }
                if (excess > 0.0) {
                    double room = 0.0;
                    for (int b = 0; b < bins; ++b) {
                        double col = 0.0;
                        for (int k = 0; k < ng; ++k) col += r[k][b];
                        room += std::max(0.0, cap - col);
                    }
                    if (room <= 0.0) throw InfeasibleMass("window too full to place groups");
                    for (int b = 0; b < bins; ++b) {
                        double col = 0.0;
                        for (int k = 0; k < ng; ++k) col += r[k][b];
                        r[i][b] += excess * std::max(0.0, cap - col) / room;
                    }
                }
            }
            if (ok) return r;
        }
        throw InfeasibleMass("could not draw a feasible start");
    }

    // Best transfer of mass between bins a and b for group i. delta is the
    // rate moved: u[i][a] -= d, u[i][b] += d.
    bool improve_pair(std::vector<std::vector<double>>& r, int i, int a, int b,
                      double& J) const {
        const int ng = spec.count();
        double col_a = 0.0, col_b = 0.0;
        for (int k = 0; k < ng; ++k) { col_a += r[k][a]; col_b += r[k][b]; }
        const double d_lo = -std::min(r[i][b], cap - col_a);
        const double d_hi = std::min(r[i][a], cap - col_b);
        if (d_hi - d_lo < 1e-12) return false;

        auto eval = [&](double d) {
            auto rr = r;
            rr[i][a] -= d;
            rr[i][b] += d;
            return cost(rr);
        };
        double best_d = 0.0, best_J = J;
        for (double d : {d_lo, d_hi}) {
            const double Jd = eval(d);
            if (Jd < best_J) { best_J = Jd; best_d = d; }
        }
        const double dg = num::golden_min(eval, d_lo, d_hi,
                                          1e-4 * (d_hi - d_lo), 60);
        const double Jg = eval(dg);
        if (Jg < best_J) { best_J = Jg; best_d = dg; }
        if (best_J < J - 1e-12 * (1.0 + std::fabs(J))) {
            r[i][a] -= best_d;
            r[i][b] += best_d;
            J = best_J;
            return true;
        }
        return false;
    }

    std::pair<std::vector<std::vector<double>>, double> run(std::mt19937& rng) const {
        auto r = random_start(rng);
        double J = cost(r);
        for (int round = 0; round < 40; ++round) {
            bool any = false;
            for (int i = 0; i < spec.count(); ++i)
                for (int a = 0; a < bins; ++a)
                    for (int b = a + 1; b < bins; ++b)
                        any |= improve_pair(r, i, a, b, J);
            if (!any) break;
        }
        return {std::move(r), J};
    }
};

} // namespace

BruteResult brute_force_optimize(const GroupSpec& spec, const FluxModel& m,
                                 double L, int bins, double w_lo, double w_hi,
                                 int starts, unsigned seed, int refine, Exec ex) {
    if (spec.count() < 1 || spec.count() > 2)
        throw ConfigError("direct search handles one or two groups");
    if (bins < 1 || bins > 24) throw ConfigError("need 1..24 bins");
    if (!(w_hi > w_lo)) throw ConfigError("empty window");
    const double window = w_hi - w_lo;
    const double G = spec.total_mass();
    if (m.capacity() * window < G)
        throw InfeasibleMass(fmt("capacity %.6g over the window cannot carry "
                                 "mass %.6g", m.capacity() * window, G));

    Descent d{spec, m, L, w_lo, window / bins, 0.99 * m.capacity(), bins,
              std::max(1, refine)};

    starts = std::max(1, starts);
    std::vector<double> costs(starts, 0.0);
    std::vector<std::vector<std::vector<double>>> plans(starts);
    par_for(ex, starts, [&](std::ptrdiff_t k) {
        std::mt19937 rng(seed + 1315423911u * static_cast<unsigned>(k));
        auto [r, J] = d.run(rng);
        plans[k] = std::move(r);
        costs[k] = J;
    });
    int best = 0;
    for (int k = 1; k < starts; ++k)
        if (costs[k] < costs[best]) best = k;

    BruteResult out;
    out.t_lo = w_lo;
    out.dt = window / bins;
    out.rates = std::move(plans[best]);
    out.cost = costs[best];
    return out;
}

} // namespace roadopt
