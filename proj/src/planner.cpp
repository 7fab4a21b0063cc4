#include "roadopt/planner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <exception>
#include <limits>
#include <mutex>
#include <random>
#include <utility>

#include "roadopt/errors.hpp"
#include "roadopt/numerics.hpp"

namespace roadopt {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kInf = std::numeric_limits<double>::infinity();

// par_for with first-exception capture: a throw escaping an OpenMP worker
// would terminate the process, so workers stash and the caller rethrows.
template <class Body>
void par_for_safe(Exec ex, std::ptrdiff_t n, Body&& body) {
    std::exception_ptr err;
    std::mutex mu;
    par_for(ex, n, [&](std::size_t i) {
        try {
            body(static_cast<std::ptrdiff_t>(i));
        } catch (...) {
            std::lock_guard<std::mutex> lock(mu);
            if (!err) err = std::current_exception();
        }
    });
    if (err) std::rethrow_exception(err);
}

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

std::string join(const std::vector<double>& v) {
    std::string s = "(";
    for (std::size_t i = 0; i < v.size(); ++i)
        s += fmt(i ? ", %.9g" : "%.9g", v[i]);
    return s + ")";
}

// Departure foot of the characteristic arriving at T: the t in the window
// with phi(t) = -env(T). phi is strictly decreasing, so a sign check at the
// window ends settles existence and Newton safeguarded by the bracket does
// the rest. NaN when the foot falls outside the window.
double foot_in_window(const Envelope& env, double T, double t_lo, double t_hi) {
    const GroupSpec& sp = *env.spec;
    const double level = -env.value(T);
    const double flo = sp.phi_at(t_lo) - level;
    if (flo < 0.0) return kNaN; // foot would lie before the window
    const double fhi = sp.phi_at(t_hi) - level;
    if (fhi > 0.0) return kNaN; // foot would lie after the window
    if (flo == 0.0) return t_lo;
    if (fhi == 0.0) return t_hi;
    auto fd = [&](double t) {
        return std::make_pair(sp.phi_at(t) - level, sp.phi_p_at(t));
    };
    return num::newton_bisect(fd, 0.5 * (t_lo + t_hi), t_lo, t_hi,
                              1e-14 * (1.0 + std::fabs(t_lo) + std::fabs(t_hi)));
}

// Arrival flux of the candidate at T, recomputed from scratch (foot solve +
// slope inversion). This is what the quadratures sample, so kappa and cost
// vary smoothly with C instead of inheriting grid kinks.
double exact_u(const Candidate& c, double T, double* foot_out = nullptr) {
    double ft = foot_in_window(c.env, T, c.t_lo, c.t_hi);
    if (foot_out) *foot_out = ft;
    if (std::isnan(ft)) return 0.0;
    const double p = (T - ft) / c.L;
    return p > c.model->gp0() ? c.model->gamma(p) : 0.0;
}

double simpson3(const Candidate& c, double a, double b) {
    if (!(b > a)) return 0.0;
    return (b - a) / 6.0 *
           (exact_u(c, a) + 4.0 * exact_u(c, 0.5 * (a + b)) + exact_u(c, b));
}

// Finite Legendre value at slope p, clamped at the free-flow edge where the
// transform vanishes (edge roots land a rounding error below g'(0)).
double gstar_at(const FluxModel& m, double p) {
    if (p <= m.gp0()) return 0.0;
    return m.g_star(p).value;
}

BoundaryProfile profile_from_knots(const std::vector<double>& kt,
                                   const std::vector<double>& kD,
                                   double t_lo, double t_hi, int cells) {
    cells = std::max(cells, 1);
    BoundaryProfile bar;
    bar.t_lo = t_lo;
    bar.dt = (t_hi - t_lo) / cells;
    bar.U.assign(static_cast<std::size_t>(cells) + 1, 0.0);
    if (!kt.empty()) {
        for (int j = 0; j <= cells; ++j) {
            const double t = t_lo + bar.dt * j;
            double v;
            if (t <= kt.front()) v = 0.0;
            else if (t >= kt.back()) v = kD.back();
            else {
                auto it = std::upper_bound(kt.begin(), kt.end(), t);
                std::size_t h = static_cast<std::size_t>(it - kt.begin());
                double s = (t - kt[h - 1]) / (kt[h] - kt[h - 1]);
                v = kD[h - 1] + s * (kD[h] - kD[h - 1]);
            }
            auto ju = static_cast<std::size_t>(j);
            bar.U[ju] = j ? std::max(v, bar.U[ju - 1]) : v;
        }
    }
    return bar;
}

// Geometry pass shared by the fit loop (which skips the tabulation work):
// grid placement, per-node feet and fluxes, and the refined support pieces.
void candidate_geometry(Candidate& c, int samples, Exec ex) {
    const GroupSpec& sp = *c.env.spec;
    const FluxModel& m = *c.model;
    const double gp0 = m.gp0();
    const double span = c.t_hi - c.t_lo;
    const int n = std::max(samples, 64);

    // Arrival grid: from the free-flow arrival of the earliest departure to
    // the terminus of the latest one. No supported characteristic can arrive
    // outside this range while its foot stays in the window.
    const double Tg_lo = c.t_lo + c.L * gp0;
    const double target = -sp.phi_at(c.t_hi);
    double Tg_hi;
    if (c.env.value(Tg_lo) >= target) {
        Tg_hi = Tg_lo + span; // every foot past t_hi: empty support
    } else {
        double hi = Tg_lo + span;
        int grow = 0;
        while (c.env.value(hi) < target) {
            hi = Tg_lo + (hi - Tg_lo) * 2.0;
            if (++grow > 60)
                throw NoRootInWindow(
                    "arrival cost envelope never reaches the departure level; "
                    "arrival costs must grow without bound");
        }
        auto fd = [&](double T) {
            return std::make_pair(c.env.value(T) - target, c.env.deriv(T));
        };
        Tg_hi = num::newton_bisect(fd, 0.5 * (Tg_lo + hi), Tg_lo, hi,
                                   1e-12 * (1.0 + std::fabs(hi)));
    }

    c.T0 = Tg_lo;
    c.dT = (Tg_hi - Tg_lo) / (n - 1);
    c.u.assign(static_cast<std::size_t>(n), 0.0);
    c.foot.assign(static_cast<std::size_t>(n), kNaN);
    par_for_safe(ex, n, [&](std::ptrdiff_t k) {
        const double T = c.T_node(static_cast<int>(k));
        const double ft = foot_in_window(c.env, T, c.t_lo, c.t_hi);
        c.foot[static_cast<std::size_t>(k)] = ft;
        if (!std::isnan(ft)) {
            const double p = (T - ft) / c.L;
            if (p > gp0) c.u[static_cast<std::size_t>(k)] = m.gamma(p);
        }
    });

    // Support pieces: scan for sign changes of the edge predicate and refine
    // each crossing. The predicate is the slope excess where a foot exists
    // and -1 where it does not, so window-entry edges bisect cleanly too.
    auto edge_pred = [&](double T) {
        const double ft = foot_in_window(c.env, T, c.t_lo, c.t_hi);
        if (std::isnan(ft)) return -1.0;
        return (T - ft) / c.L - gp0;
    };
    c.pieces.clear();
    int k = 0;
    while (k < n) {
        if (!(c.u[static_cast<std::size_t>(k)] > 0.0)) { ++k; continue; }
        SupportPiece p;
        if (k == 0) {
            p.T_a = c.T_node(0);
            p.t_a = c.foot[0];
            p.u_a = c.u[0];
        } else {
            p.T_a = num::bisect(edge_pred, c.T_node(k - 1), c.T_node(k),
                                1e-12 * (1.0 + std::fabs(c.T_node(k))));
            p.t_a = foot_in_window(c.env, p.T_a, c.t_lo, c.t_hi);
            p.u_a = 0.0;
        }
        p.k_lo = k;
        while (k + 1 < n && c.u[static_cast<std::size_t>(k) + 1] > 0.0) ++k;
        p.k_hi = k;
        if (k == n - 1) {
            p.T_b = c.T_node(n - 1);
            p.t_b = c.foot[static_cast<std::size_t>(n) - 1];
            p.u_b = c.u[static_cast<std::size_t>(n) - 1];
        } else {
            p.T_b = num::bisect(edge_pred, c.T_node(k), c.T_node(k + 1),
                                1e-12 * (1.0 + std::fabs(c.T_node(k))));
            p.t_b = foot_in_window(c.env, p.T_b, c.t_lo, c.t_hi);
            p.u_b = 0.0;
        }
        c.pieces.push_back(p);
        ++k;
    }
}

// Cumulative arrival counts at the grid nodes plus the departure-side curve.
// The departure count at a foot follows from the variational identity
// D(t(T)) = w(T) - L * g*(h(T)/L) + edge offsets, so no second quadrature is
// stacked on the arrival one.
void candidate_tabulate(Candidate& c, Exec ex) {
    const FluxModel& m = *c.model;
    const int n = c.samples();
    c.w.assign(static_cast<std::size_t>(n), 0.0);
    c.knots_t.clear();
    c.knots_D.clear();

    std::vector<double> inc(static_cast<std::size_t>(n) - 1, 0.0);
    par_for_safe(ex, n - 1, [&](std::ptrdiff_t j) {
        const double a = c.T_node(static_cast<int>(j));
        const double b = c.T_node(static_cast<int>(j) + 1);
        double s = 0.0;
        for (const SupportPiece& p : c.pieces) {
            const double lo = std::max(a, p.T_a);
            const double hi = std::min(b, p.T_b);
            if (hi > lo) s += simpson3(c, lo, hi);
        }
        inc[static_cast<std::size_t>(j)] = s;
    });
    for (int j = 0; j + 1 < n; ++j)
        c.w[static_cast<std::size_t>(j) + 1] =
            c.w[static_cast<std::size_t>(j)] + inc[static_cast<std::size_t>(j)];

    double D = 0.0;
    for (SupportPiece& p : c.pieces) {
        p.w_a = c.w[static_cast<std::size_t>(p.k_lo)] -
                simpson3(c, p.T_a, c.T_node(p.k_lo));
        p.w_b = c.w[static_cast<std::size_t>(p.k_hi)] +
                simpson3(c, c.T_node(p.k_hi), p.T_b);
        p.D_a = D;
        const double ga = gstar_at(m, (p.T_a - p.t_a) / c.L);
        auto push = [&](double t, double Dv) {
            if (!c.knots_t.empty()) {
                if (t <= c.knots_t.back()) return;
                Dv = std::max(Dv, c.knots_D.back());
            }
            c.knots_t.push_back(t);
            c.knots_D.push_back(Dv);
        };
        push(p.t_a, p.D_a);
        for (int j = p.k_lo; j <= p.k_hi; ++j) {
            const double h = c.T_node(j) - c.foot[static_cast<std::size_t>(j)];
            const double Dv = p.D_a + (c.w[static_cast<std::size_t>(j)] - p.w_a) -
                              c.L * (gstar_at(m, h / c.L) - ga);
            push(c.foot[static_cast<std::size_t>(j)], Dv);
        }
        const double gb = gstar_at(m, (p.T_b - p.t_b) / c.L);
        D = p.D_a + (p.w_b - p.w_a) - c.L * (gb - ga);
        push(p.t_b, D);
    }
    c.departures =
        profile_from_knots(c.knots_t, c.knots_D, c.t_lo, c.t_hi,
                           std::max(n - 1, 1));
}

Candidate candidate_core(const GroupSpec& spec, const FluxModel& m, double L,
                         const Constants& C, double t_lo, double t_hi,
                         int samples, Exec ex) {
    if (!(L > 0.0)) throw ConfigError("road length must be positive");
    if (!(t_hi > t_lo)) throw ConfigError("departure window is empty");
    C.validate();
    if (C.count() != spec.count())
        throw ConfigError("constants count does not match group count");
    Candidate c;
    c.model = &m;
    c.env = psi_envelope(spec, C);
    c.L = L;
    c.t_lo = t_lo;
    c.t_hi = t_hi;
    candidate_geometry(c, samples, ex);
    return c;
}

// Total cost of the candidate: departure charges pulled back through the
// characteristic feet (dt = t'(T) dT) plus the active arrival charges. The
// foot map derivative uses the piece's own group, not the pointwise argmin:
// at a crossing endpoint the argmin sits on the far side, and one poisoned
// endpoint value costs Simpson its order.
double plan_cost(const Candidate& cand, const Partition& part) {
    const GroupSpec& sp = *cand.env.spec;
    double J = 0.0;
    for (const ArrivalPiece& ap : part.pieces) {
        J += num::simpson(
            [&](double T) {
                double ft;
                const double u = exact_u(cand, T, &ft);
                if (!(u > 0.0) || std::isnan(ft)) return 0.0;
                const double tp =
                    sp.psi_p_at(ap.group, T) / (-sp.phi_p_at(ft));
                return u * (sp.phi_at(ft) * tp + sp.psi_at(ap.group, T));
            },
            ap.T_a, ap.T_b, 1024);
    }
    return J;
}

std::vector<double> solve_linear(std::vector<std::vector<double>> A,
                                 std::vector<double> b) {
    const int n = static_cast<int>(b.size());
    double scale = 0.0;
    for (auto& row : A)
        for (double v : row) scale = std::max(scale, std::fabs(v));
    for (int col = 0; col < n; ++col) {
        int piv = col;
        for (int r = col + 1; r < n; ++r)
            if (std::fabs(A[static_cast<std::size_t>(r)][static_cast<std::size_t>(col)]) >
                std::fabs(A[static_cast<std::size_t>(piv)][static_cast<std::size_t>(col)]))
                piv = r;
        if (std::fabs(A[static_cast<std::size_t>(piv)][static_cast<std::size_t>(col)]) <=
            1e-12 * std::max(scale, 1e-30))
            throw SingularJacobian("mass Jacobian is singular");
        std::swap(A[static_cast<std::size_t>(piv)], A[static_cast<std::size_t>(col)]);
        std::swap(b[static_cast<std::size_t>(piv)], b[static_cast<std::size_t>(col)]);
        for (int r = col + 1; r < n; ++r) {
            const double f = A[static_cast<std::size_t>(r)][static_cast<std::size_t>(col)] /
                             A[static_cast<std::size_t>(col)][static_cast<std::size_t>(col)];
            for (int cidx = col; cidx < n; ++cidx)
                A[static_cast<std::size_t>(r)][static_cast<std::size_t>(cidx)] -=
                    f * A[static_cast<std::size_t>(col)][static_cast<std::size_t>(cidx)];
            b[static_cast<std::size_t>(r)] -= f * b[static_cast<std::size_t>(col)];
        }
    }
    std::vector<double> x(static_cast<std::size_t>(n), 0.0);
    for (int r = n - 1; r >= 0; --r) {
        double s = b[static_cast<std::size_t>(r)];
        for (int cidx = r + 1; cidx < n; ++cidx)
            s -= A[static_cast<std::size_t>(r)][static_cast<std::size_t>(cidx)] *
                 x[static_cast<std::size_t>(cidx)];
        x[static_cast<std::size_t>(r)] = s / A[static_cast<std::size_t>(r)][static_cast<std::size_t>(r)];
    }
    return x;
}

struct FitCtx {
    const GroupSpec* spec;
    const FluxModel* m;
    double L, t_lo, t_hi;
    int samples;
};

std::vector<double> eval_kappa(const FitCtx& ctx, const std::vector<double>& C) {
    Constants cc{C};
    Candidate cand = candidate_core(*ctx.spec, *ctx.m, ctx.L, cc, ctx.t_lo,
                                    ctx.t_hi, ctx.samples, Exec::serial);
    return arrival_partition(cand).kappa;
}

double inf_norm_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double r = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        r = std::max(r, std::fabs(a[i] - b[i]));
    return r;
}

struct StartOutcome {
    std::vector<double> C, kappa;
    double res = kInf;
    int iters = 0;
    bool ok = false;
    std::exception_ptr err; // set when the start died on an exception
    std::vector<std::string> log;
};

// One Gauss-Seidel-style pass of scalar bisections: kappa_i grows with C_i
// (raising C_i widens the region where group i attains the envelope min), so
// each coordinate is a monotone root-find at frozen others.
bool coordinate_sweep(const FitCtx& ctx, const std::vector<double>& G,
                      std::vector<double>& C, std::vector<double>& kappa,
                      double& res, std::vector<std::string>& log, int id) {
    const int N = static_cast<int>(G.size());
    std::vector<double> Ct = C;
    for (int i = 0; i < N; ++i) {
        auto fi = [&](double ci) {
            std::vector<double> probe = Ct;
            probe[static_cast<std::size_t>(i)] = ci;
            return eval_kappa(ctx, probe)[static_cast<std::size_t>(i)] -
                   G[static_cast<std::size_t>(i)];
        };
        double step = std::max(0.5, 0.1 * std::fabs(Ct[static_cast<std::size_t>(i)]));
        double lo = Ct[static_cast<std::size_t>(i)] - step;
        double hi = Ct[static_cast<std::size_t>(i)] + step;
        double flo = fi(lo), fhi = fi(hi);
        int grow = 0;
        while (flo > 0.0 && grow++ < 40) {
            lo = Ct[static_cast<std::size_t>(i)] -
                 (Ct[static_cast<std::size_t>(i)] - lo) * 2.0;
            flo = fi(lo);
        }
        grow = 0;
        while (fhi < 0.0 && grow++ < 40) {
            hi = Ct[static_cast<std::size_t>(i)] +
                 (hi - Ct[static_cast<std::size_t>(i)]) * 2.0;
            fhi = fi(hi);
        }
        if (flo > 0.0 || fhi < 0.0) {
            log.push_back(fmt("start %d: coordinate %d has no bracket", id, i));
            continue;
        }
        Ct[static_cast<std::size_t>(i)] = num::bisect(
            fi, lo, hi, flo, fhi,
            1e-11 * (1.0 + std::fabs(Ct[static_cast<std::size_t>(i)])));
    }
    std::vector<double> kt = eval_kappa(ctx, Ct);
    const double rt = inf_norm_diff(kt, G);
    if (rt < res) {
        C = std::move(Ct);
        kappa = std::move(kt);
        res = rt;
        return true;
    }
    return false;
}

StartOutcome newton_run(const FitCtx& ctx, const std::vector<double>& G,
                        std::vector<double> C, double stop, double aim,
                        int max_it, Exec col_ex, int id) {
    const int N = static_cast<int>(G.size());
    StartOutcome out;
    out.kappa = eval_kappa(ctx, C);
    out.res = inf_norm_diff(out.kappa, G);
    out.log.push_back(fmt("start %d: C0=%s residual %.3e", id,
                          join(C).c_str(), out.res));
    const double fd_step = 1e-4;
    while (out.iters < max_it && out.res > aim) {
        ++out.iters;
        bool stepped = false;
        try {
            std::vector<std::vector<double>> cols(static_cast<std::size_t>(N));
            par_for_safe(col_ex, N, [&](std::ptrdiff_t j) {
                std::vector<double> Cp = C;
                Cp[static_cast<std::size_t>(j)] += fd_step;
                cols[static_cast<std::size_t>(j)] = eval_kappa(ctx, Cp);
            });
            std::vector<std::vector<double>> J(
                static_cast<std::size_t>(N),
                std::vector<double>(static_cast<std::size_t>(N), 0.0));
            std::vector<double> rhs(static_cast<std::size_t>(N), 0.0);
            for (int i = 0; i < N; ++i) {
                rhs[static_cast<std::size_t>(i)] =
                    G[static_cast<std::size_t>(i)] -
                    out.kappa[static_cast<std::size_t>(i)];
                for (int j = 0; j < N; ++j)
                    J[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
                        (cols[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] -
                         out.kappa[static_cast<std::size_t>(i)]) /
                        fd_step;
            }
            std::vector<double> d = solve_linear(std::move(J), std::move(rhs));
            double lam = 1.0;
            for (int halve = 0; halve < 12; ++halve, lam *= 0.5) {
                std::vector<double> Ct = C;
                for (int j = 0; j < N; ++j)
                    Ct[static_cast<std::size_t>(j)] +=
                        lam * d[static_cast<std::size_t>(j)];
                std::vector<double> kt = eval_kappa(ctx, Ct);
                const double rt = inf_norm_diff(kt, G);
                if (rt < out.res) {
                    C = std::move(Ct);
                    out.kappa = std::move(kt);
                    out.res = rt;
                    stepped = true;
                    break;
                }
            }
            if (stepped)
                out.log.push_back(fmt("start %d: iter %d residual %.3e C=%s",
                                      id, out.iters, out.res, join(C).c_str()));
        } catch (const SingularJacobian&) {
            out.log.push_back(fmt("start %d: iter %d singular Jacobian, "
                                  "coordinate sweep", id, out.iters));
        }
        if (!stepped) {
            if (!coordinate_sweep(ctx, G, C, out.kappa, out.res, out.log, id))
                break; // no direction improves: stalled
            out.log.push_back(fmt("start %d: iter %d sweep residual %.3e C=%s",
                                  id, out.iters, out.res, join(C).c_str()));
        }
    }
    out.C = std::move(C);
    out.ok = out.res <= stop;
    return out;
}

// Time the car arriving at T left the road entrance: integrate dt/dx =
// 1/speed from x = L back to 0 with step-doubled RK4. Speed is the flux
// over the density of the stored characteristic field, which tends to the
// empty-road speed in vacuum regions.
double trace_back(const Candidate& c, double T) {
    const FluxModel& m = *c.model;
    const double v0 = m.v(0.0);
    double rho_hint = 0.0;
    auto slowness = [&](double t, double x) {
        const double u = c.flux_at(t, x);
        if (!(u > 0.0)) return 1.0 / v0;
        const double rho = rho_hint > 0.0 ? m.g(u, rho_hint) : m.g(u);
        rho_hint = rho;
        const double v = m.v(rho);
        if (!(v > 1e-9 * v0))
            throw TrajectoryStalled(fmt("car from arrival %.6g stalls at x=%.6g",
                                        T, x));
        return 1.0 / v;
    };
    auto rk4 = [&](double t0, double x0, double hh) {
        const double k1 = slowness(t0, x0);
        const double k2 = slowness(t0 + 0.5 * hh * k1, x0 + 0.5 * hh);
        const double k3 = slowness(t0 + 0.5 * hh * k2, x0 + 0.5 * hh);
        const double k4 = slowness(t0 + hh * k3, x0 + hh);
        return t0 + hh * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0;
    };
    const double tol = 1e-10 * (1.0 + std::fabs(T) + (c.t_hi - c.t_lo));
    double x = c.L, t = T;
    double h = -c.L / 64.0;
    int guard = 0;
    while (x > 0.0) {
        if (++guard > 200000)
            throw TrajectoryStalled(fmt("car from arrival %.6g made no progress", T));
        if (x + h < 0.0) h = -x;
        const double one = rk4(t, x, h);
        const double mid = rk4(t, x, 0.5 * h);
        const double two = rk4(mid, x + 0.5 * h, 0.5 * h);
        const double err = std::fabs(two - one) / 15.0;
        if (err <= tol || std::fabs(h) <= c.L * 1e-7) {
            t = two + (two - one) / 15.0;
            x += h;
            if (err < tol / 32.0 && std::fabs(h) < c.L / 8.0) h *= 2.0;
        } else {
            h *= 0.5;
        }
    }
    return t;
}

} // namespace

void Constants::validate() const {
    if (C.empty()) throw ConfigError("no marginal-cost constants given");
    for (double v : C)
        if (!std::isfinite(v))
            throw ConfigError("marginal-cost constants must be finite");
}

double Envelope::value(double t) const {
    double best = kInf;
    for (int i = 0; i < spec->count(); ++i)
        best = std::min(best, spec->psi_at(i, t) - C[static_cast<std::size_t>(i)]);
    return best;
}

int Envelope::active(double t) const {
    int arg = 0;
    double best = kInf;
    for (int i = 0; i < spec->count(); ++i) {
        const double v = spec->psi_at(i, t) - C[static_cast<std::size_t>(i)];
        if (v < best) { best = v; arg = i; }
    }
    return arg;
}

double Envelope::deriv(double t) const { return spec->psi_p_at(active(t), t); }

std::vector<double> Envelope::crossings(double t_lo, double t_hi) const {
    std::vector<double> out;
    if (spec->count() < 2 || !(t_hi > t_lo)) return out;
    const int scan = 2048;
    const double step = (t_hi - t_lo) / scan;
    int prev = active(t_lo);
    for (int k = 1; k <= scan; ++k) {
        const double t = t_lo + step * k;
        const int cur = active(t);
        if (cur == prev) continue;
        // difference of the two competing shifted costs changes sign here
        auto d = [&](double s) {
            return (spec->psi_at(prev, s) - C[static_cast<std::size_t>(prev)]) -
                   (spec->psi_at(cur, s) - C[static_cast<std::size_t>(cur)]);
        };
        const double root = num::bisect(d, t - step, t, 1e-10);
        if (out.empty() || root - out.back() > 1e-9)
            out.push_back(root);
        prev = cur;
    }
    return out;
}

Envelope psi_envelope(const GroupSpec& spec, const Constants& C) {
    C.validate();
    if (C.count() != spec.count())
        throw ConfigError("constants count does not match group count");
    return Envelope{&spec, C.C};
}

double characteristic_terminus(const Envelope& env, double t, double T_lo,
                               double T_hi) {
    if (!(T_hi > T_lo)) throw NoRootInWindow("empty arrival search window");
    const double target = -env.spec->phi_at(t);
    const double flo = env.value(T_lo) - target;
    const double fhi = env.value(T_hi) - target;
    if (flo > 0.0 || fhi < 0.0)
        throw NoRootInWindow(fmt("no arrival time in [%.6g, %.6g] balances the "
                                 "departure cost at t=%.6g", T_lo, T_hi, t));
    auto fd = [&](double T) {
        return std::make_pair(env.value(T) - target, env.deriv(T));
    };
    return num::newton_bisect(fd, 0.5 * (T_lo + T_hi), T_lo, T_hi,
                              1e-12 * (1.0 + std::fabs(T_lo) + std::fabs(T_hi)));
}

double characteristic_terminus(const GroupSpec& spec, const Constants& C,
                               double t, double T_lo, double T_hi) {
    return characteristic_terminus(psi_envelope(spec, C), t, T_lo, T_hi);
}

double Candidate::flux_at(double t, double x) const {
    if (!(x >= 0.0) || !(x <= L)) return 0.0;
    const double a = x / L;
    for (const SupportPiece& p : pieces) {
        // segment sweep time at this x is monotone in T
        const double lo = p.t_a * (1.0 - a) + p.T_a * a;
        const double hi = p.t_b * (1.0 - a) + p.T_b * a;
        if (t < lo || t > hi) continue;
        // virtual node list: edge a, grid nodes k_lo..k_hi, edge b
        auto node = [&](int j, double& tj, double& Tj, double& uj) {
            if (j < p.k_lo) { tj = p.t_a; Tj = p.T_a; uj = p.u_a; return; }
            if (j > p.k_hi) { tj = p.t_b; Tj = p.T_b; uj = p.u_b; return; }
            tj = foot[static_cast<std::size_t>(j)];
            Tj = T_node(j);
            uj = u[static_cast<std::size_t>(j)];
        };
        int jlo = p.k_lo - 1, jhi = p.k_hi + 1;
        while (jhi - jlo > 1) {
            const int jm = (jlo + jhi) / 2;
            double tj, Tj, uj;
            node(jm, tj, Tj, uj);
            if (tj * (1.0 - a) + Tj * a <= t) jlo = jm; else jhi = jm;
        }
        double t1, T1, u1, t2, T2, u2;
        node(jlo, t1, T1, u1);
        node(jhi, t2, T2, u2);
        const double f1 = t1 * (1.0 - a) + T1 * a;
        const double f2 = t2 * (1.0 - a) + T2 * a;
        const double s = f2 > f1 ? (t - f1) / (f2 - f1) : 0.0;
        return u1 + s * (u2 - u1);
    }
    return 0.0;
}

double Candidate::arrival_flux(double T) const {
    const int n = samples();
    if (n == 0 || dT <= 0.0) return 0.0;
    const double pos = (T - T0) / dT;
    if (pos <= 0.0 || pos >= n - 1) return 0.0;
    const int k = static_cast<int>(pos);
    const double s = pos - k;
    return u[static_cast<std::size_t>(k)] * (1.0 - s) +
           u[static_cast<std::size_t>(k) + 1] * s;
}

double Candidate::exact_arrival_flux(double T) const { return exact_u(*this, T); }

double Candidate::arrival_count(double T) const {
    if (w.empty() || !(dT > 0.0)) return 0.0;
    const int n = samples();
    if (T <= T0) return 0.0;
    if (T >= T_node(n - 1)) return w.back();
    int k = static_cast<int>((T - T0) / dT);
    if (k > n - 2) k = n - 2;
    double s = w[static_cast<std::size_t>(k)];
    for (const SupportPiece& p : pieces) {
        const double lo = std::max(T_node(k), p.T_a);
        const double hi = std::min(T, p.T_b);
        if (hi > lo) s += simpson3(*this, lo, hi);
    }
    return s;
}

Candidate build_candidate(const GroupSpec& spec, const FluxModel& m, double L,
                          const Constants& C, double t_lo, double t_hi,
                          int arrival_samples, Exec ex) {
    Candidate c = candidate_core(spec, m, L, C, t_lo, t_hi, arrival_samples, ex);
    candidate_tabulate(c, ex);
    return c;
}

std::vector<std::vector<std::pair<double, double>>> Partition::sets() const {
    int N = 0;
    for (const ArrivalPiece& p : pieces) N = std::max(N, p.group + 1);
    N = std::max(N, static_cast<int>(kappa.size()));
    std::vector<std::vector<std::pair<double, double>>> out(
        static_cast<std::size_t>(N));
    for (const ArrivalPiece& p : pieces)
        out[static_cast<std::size_t>(p.group)].emplace_back(p.T_a, p.T_b);
    return out;
}

Partition arrival_partition(const Candidate& cand) {
    const int N = cand.env.spec->count();
    Partition out;
    out.kappa.assign(static_cast<std::size_t>(N), 0.0);
    for (const SupportPiece& p : cand.pieces) {
        std::vector<double> cuts{p.T_a};
        for (double c : cand.env.crossings(p.T_a, p.T_b)) cuts.push_back(c);
        cuts.push_back(p.T_b);
        for (std::size_t j = 0; j + 1 < cuts.size(); ++j) {
            const double a = cuts[j], b = cuts[j + 1];
            if (!(b - a > 1e-13 * (1.0 + std::fabs(a)))) continue;
            ArrivalPiece ap;
            ap.T_a = a;
            ap.T_b = b;
            ap.group = cand.env.active(0.5 * (a + b));
            ap.mass = num::simpson(
                [&](double T) { return exact_u(cand, T); }, a, b, 512);
            out.kappa[static_cast<std::size_t>(ap.group)] += ap.mass;
            out.total += ap.mass;
            out.pieces.push_back(ap);
        }
    }
    return out;
}

Constants default_start(const GroupSpec& spec, const FluxModel& m, double L,
                        double t_lo, double t_hi) {
    const double t_mid = 0.5 * (t_lo + t_hi);
    const double t_ff = t_mid + L * m.gp0();
    Constants C;
    for (int i = 0; i < spec.count(); ++i)
        C.C.push_back(spec.psi_at(i, t_ff) + spec.phi_at(t_mid));
    return C;
}

FitResult solve_constants(const GroupSpec& spec, const FluxModel& m, double L,
                          const std::vector<double>& G, const Constants& C0,
                          const SolveOptions& opts) {
    const int N = spec.count();
    if (static_cast<int>(G.size()) != N)
        throw ConfigError("target mass count does not match group count");
    for (double g : G)
        if (!(g > 0.0)) throw ConfigError("group sizes must be positive");
    C0.validate();
    if (C0.count() != N)
        throw ConfigError("start constants count does not match group count");

    double maxG = 0.0;
    for (double g : G) maxG = std::max(maxG, g);
    const double stop = opts.residual_tol * maxG;
    const double aim = std::min(stop, 1e-9 * maxG); // Newton keeps polishing
    const FitCtx ctx{&spec, &m, L, opts.t_lo, opts.t_hi, opts.arrival_grid};

    const int S = std::max(1, opts.multistarts);
    std::vector<std::vector<double>> starts(static_cast<std::size_t>(S), C0.C);
    for (int k = 1; k < S; ++k) {
        std::mt19937 rng(opts.seed + 2654435761u * static_cast<unsigned>(k));
        std::uniform_real_distribution<double> unit(-1.0, 1.0);
        for (int i = 0; i < N; ++i) {
            const double scale =
                std::max(1.0, std::fabs(C0.C[static_cast<std::size_t>(i)]));
            starts[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)] +=
                scale * unit(rng);
        }
    }

    std::vector<StartOutcome> res(static_cast<std::size_t>(S));
    const Exec col_ex = S == 1 ? opts.ex : Exec::serial;
    par_for(opts.ex, S, [&](std::size_t k) {
        StartOutcome& out = res[k];
        try {
            out = newton_run(ctx, G, starts[k], stop, aim,
                             opts.max_iterations, col_ex, static_cast<int>(k));
        } catch (const std::exception& e) {
            out.ok = false;
            out.err = std::current_exception();
            out.log.push_back(fmt("start %zu failed: %s", k, e.what()));
        }
    });

    FitResult fit;
    for (const StartOutcome& r : res)
        fit.log.insert(fit.log.end(), r.log.begin(), r.log.end());

    double best_res = kInf;
    for (const StartOutcome& r : res) best_res = std::min(best_res, r.res);
    std::vector<int> winners;
    for (int k = 0; k < S; ++k)
        if (res[static_cast<std::size_t>(k)].ok) winners.push_back(k);
    if (winners.empty()) {
        bool all_died = true;
        for (const StartOutcome& r : res) all_died = all_died && bool(r.err);
        if (all_died) std::rethrow_exception(res.front().err);
        throw MaxIterations(
            fmt("constant fit did not reach residual %.3e from %d starts "
                "(best %.3e)", stop, S, best_res),
            best_res);
    }

    // Cluster the converged points; distinct fixed points are resolved by
    // total cost (cheapest wins) and surfaced through non_unique.
    std::vector<int> reps;
    for (int k : winners) {
        bool found = false;
        for (int& r : reps) {
            if (inf_norm_diff(res[static_cast<std::size_t>(k)].C,
                              res[static_cast<std::size_t>(r)].C) <=
                1e-3 * (1.0 + std::fabs(res[static_cast<std::size_t>(r)].C[0]))) {
                if (res[static_cast<std::size_t>(k)].res <
                    res[static_cast<std::size_t>(r)].res)
                    r = k;
                found = true;
                break;
            }
        }
        if (!found) reps.push_back(k);
    }

    int pick = reps.front();
    if (reps.size() > 1) {
        fit.non_unique = true;
        double best_cost = kInf;
        for (int r : reps) {
            Constants cc{res[static_cast<std::size_t>(r)].C};
            Candidate cand = candidate_core(spec, m, L, cc, opts.t_lo,
                                            opts.t_hi, opts.arrival_grid,
                                            Exec::serial);
            const double cost = plan_cost(cand, arrival_partition(cand));
            fit.log.push_back(fmt("fixed point %s costs %.9g",
                                  join(res[static_cast<std::size_t>(r)].C).c_str(),
                                  cost));
            if (cost < best_cost) { best_cost = cost; pick = r; }
        }
        for (int r : reps)
            if (r != pick)
                fit.alternates.push_back(Constants{res[static_cast<std::size_t>(r)].C});
        fit.log.push_back(
            "warning: multiple optimality fits found; returning the cheaper "
            "plan (see alternates)");
    }

    const StartOutcome& win = res[static_cast<std::size_t>(pick)];
    fit.C = Constants{win.C};
    fit.kappa = win.kappa;
    fit.residual = win.res;
    fit.iterations = win.iters;
    return fit;
}

double Plan::eta(double T) const {
    if (eta_T.empty()) return kNaN;
    if (T <= eta_T.front()) return eta_t.front() - (eta_T.front() - T);
    if (T >= eta_T.back()) return eta_t.back() + (T - eta_T.back());
    auto it = std::upper_bound(eta_T.begin(), eta_T.end(), T);
    const std::size_t h = static_cast<std::size_t>(it - eta_T.begin());
    const double s = (T - eta_T[h - 1]) / (eta_T[h] - eta_T[h - 1]);
    return eta_t[h - 1] + s * (eta_t[h] - eta_t[h - 1]);
}

void Plan::validate(const std::vector<double>& G) const {
    const FluxModel& m = *cand.model;
    const double M = m.capacity();
    const BoundaryProfile& total = cand.departures;

    double sumG = 0.0;
    for (double g : G) sumG += g;
    if (static_cast<int>(G.size()) != static_cast<int>(group_departures.size()))
        throw ConfigError("plan group count does not match the target sizes");

    double planned = 0.0;
    for (std::size_t i = 0; i < group_departures.size(); ++i) {
        const BoundaryProfile& gi = group_departures[i];
        for (int k = 0; k < gi.cells(); ++k) {
            const double r = gi.rate(k);
            if (r < -1e-12)
                throw ConfigError(fmt("group %zu departure rate negative at "
                                      "cell %d", i, k));
            if (r >= M)
                throw ConfigError(fmt("group %zu departure rate reaches "
                                      "capacity at cell %d", i, k));
        }
        const double mass = gi.total_mass();
        planned += mass;
        const double want = part.kappa[i];
        if (std::fabs(mass - want) > 1e-4 * std::max(want, 1e-12))
            throw ConfigError(fmt("group %zu departs %.9g vehicles, partition "
                                  "says %.9g", i, mass, want));
    }
    if (sumG > 0.0 && std::fabs(planned - sumG) > 1e-6 * sumG)
        throw ConfigError(fmt("plan departs %.9g vehicles, groups total %.9g",
                              planned, sumG));

    for (int k = 0; k < total.cells(); ++k)
        if (total.rate(k) >= M)
            throw ConfigError(fmt("total departure rate reaches capacity at "
                                  "cell %d", k));

    // no-shock smoke test: adjacent arrival samples may differ by at most the
    // slope-map scale at the free-flow edge times one grid step
    const double gp0 = m.gp0();
    const double bound = 3.0 * M * cand.dT / (cand.L * gp0 * gp0 * gp0);
    for (int k = 0; k + 1 < cand.samples(); ++k) {
        const double jump = std::fabs(cand.u[static_cast<std::size_t>(k) + 1] -
                                      cand.u[static_cast<std::size_t>(k)]);
        if (jump > bound)
            throw ConfigError(fmt("arrival flux jumps by %.3g at T=%.6g; the "
                                  "candidate is not shock-free", jump,
                                  cand.T_node(k)));
    }

    fractions.validate();
}

Plan backout_departures(const Candidate& cand, const Partition& part,
                        int departure_cells, Exec ex) {
    const GroupSpec& sp = *cand.env.spec;
    const int N = sp.count();
    Plan plan;
    plan.C = Constants{cand.env.C};
    plan.cand = cand;
    plan.part = part;
    plan.grid = cand.samples();

    if (departure_cells > 0 && departure_cells != plan.cand.departures.cells())
        plan.cand.departures = profile_from_knots(
            cand.knots_t, cand.knots_D, cand.t_lo, cand.t_hi, departure_cells);
    const BoundaryProfile& total = plan.cand.departures;
    const double Gtot = total.total_mass();

    // label blocks: [w_a, w_b) of each arrival piece belongs to its group
    struct Block { double w_a, w_b; int group; };
    std::vector<Block> blocks;
    for (const ArrivalPiece& ap : part.pieces) {
        Block b{plan.cand.arrival_count(ap.T_a),
                plan.cand.arrival_count(ap.T_b), ap.group};
        b.w_a = std::min(b.w_a, Gtot);
        b.w_b = std::min(b.w_b, Gtot);
        if (b.w_b - b.w_a > 1e-12 * (1.0 + Gtot)) blocks.push_back(b);
    }

    if (blocks.empty() || !(Gtot > 0.0)) {
        std::vector<std::vector<double>> row(
            1, std::vector<double>(static_cast<std::size_t>(N), 1.0 / N));
        plan.fractions = FractionField::from_labels(std::max(Gtot, 0.0), {},
                                                    std::move(row));
    } else {
        std::vector<double> breaks;
        std::vector<std::vector<double>> theta;
        auto unit = [&](int g) {
            std::vector<double> row(static_cast<std::size_t>(N), 0.0);
            row[static_cast<std::size_t>(g)] = 1.0;
            return row;
        };
        theta.push_back(unit(blocks.front().group));
        for (std::size_t j = 1; j < blocks.size(); ++j) {
            if (blocks[j].group == blocks[j - 1].group) continue;
            double b = 0.5 * (blocks[j - 1].w_b + blocks[j].w_a);
            if (!breaks.empty() && b <= breaks.back()) continue;
            if (!(b > 0.0) || !(b < Gtot)) continue;
            breaks.push_back(b);
            theta.push_back(unit(blocks[j].group));
        }
        plan.fractions = FractionField::from_labels(Gtot, std::move(breaks),
                                                    std::move(theta));
    }

    // per-group departure curves: group i owns the label set
    // union of [w_a, w_b]; its cumulative count at time t is the overlap
    // with [0, total U(t)], which keeps the splits summing to the total.
    plan.group_departures.assign(static_cast<std::size_t>(N), BoundaryProfile{});
    for (int i = 0; i < N; ++i) {
        BoundaryProfile gi;
        gi.t_lo = total.t_lo;
        gi.dt = total.dt;
        gi.U.assign(total.U.size(), 0.0);
        for (std::size_t kn = 0; kn < total.U.size(); ++kn) {
            const double Ut = total.U[kn];
            double s = 0.0;
            for (const Block& b : blocks)
                if (b.group == i)
                    s += std::clamp(Ut - b.w_a, 0.0, b.w_b - b.w_a);
            gi.U[kn] = s;
        }
        plan.group_departures[static_cast<std::size_t>(i)] = std::move(gi);
    }

    // departure map: trace every supported arrival node (and the refined
    // piece edges) back to the entrance
    std::vector<double> Ts;
    for (const ArrivalPiece& ap : part.pieces) {
        Ts.push_back(ap.T_a);
        int k0 = static_cast<int>(std::ceil((ap.T_a - cand.T0) / cand.dT));
        for (int k = std::max(k0, 0); k < cand.samples(); ++k) {
            const double T = cand.T_node(k);
            if (T >= ap.T_b) break;
            if (T > ap.T_a) Ts.push_back(T);
        }
        Ts.push_back(ap.T_b);
    }
    std::sort(Ts.begin(), Ts.end());
    Ts.erase(std::unique(Ts.begin(), Ts.end(),
                         [](double a, double b) { return b - a < 1e-12; }),
             Ts.end());
    plan.eta_T = Ts;
    plan.eta_t.assign(Ts.size(), 0.0);
    par_for_safe(ex, static_cast<std::ptrdiff_t>(Ts.size()), [&](std::ptrdiff_t i) {
        plan.eta_t[static_cast<std::size_t>(i)] =
            trace_back(cand, Ts[static_cast<std::size_t>(i)]);
    });

    // departure-time intervals per group, in arrival order
    plan.departure_sets.assign(static_cast<std::size_t>(N), {});
    for (const ArrivalPiece& ap : part.pieces) {
        auto& sets = plan.departure_sets[static_cast<std::size_t>(ap.group)];
        const double a = plan.eta(ap.T_a), b = plan.eta(ap.T_b);
        if (!sets.empty() && a - sets.back().second < 1e-9)
            sets.back().second = b;
        else
            sets.emplace_back(a, b);
    }

    plan.cost = plan_cost(cand, part);
    return plan;
}

Plan solve_plan(const GroupSpec& spec, const FluxModel& m, double L,
                const SolveOptions& opts) {
    spec.validate(opts.t_lo, opts.t_hi);
    std::vector<double> G;
    for (const Group& g : spec.groups) G.push_back(g.size);

    const Constants C0 = default_start(spec, m, L, opts.t_lo, opts.t_hi);
    FitResult fit = solve_constants(spec, m, L, G, C0, opts);

    // grid doubling until the constants stop moving
    int n = opts.arrival_grid;
    SolveOptions refine = opts;
    refine.multistarts = 1;
    for (int d = 1;; ++d) {
        refine.arrival_grid = 2 * n;
        FitResult next = solve_constants(spec, m, L, G, fit.C, refine);
        const double move = inf_norm_diff(next.C.C, fit.C.C);
        next.non_unique = next.non_unique || fit.non_unique;
        next.iterations += fit.iterations;
        next.log.insert(next.log.begin(), fit.log.begin(), fit.log.end());
        next.log.push_back(fmt("grid %d -> %d moved constants by %.3e", n,
                               2 * n, move));
        for (auto& a : fit.alternates) next.alternates.push_back(std::move(a));
        fit = std::move(next);
        n *= 2;
        if (move < 1e-3) break;
        if (d >= 6)
            throw MaxIterations("constants kept moving under grid refinement",
                                move);
    }

    Candidate cand = build_candidate(spec, m, L, fit.C, opts.t_lo, opts.t_hi,
                                     n, opts.ex);
    Partition part = arrival_partition(cand);
    Plan plan = backout_departures(cand, part, opts.departure_grid, opts.ex);
    plan.fit = std::move(fit);
    plan.grid = n;
    plan.validate(G);
    return plan;
}

} // namespace roadopt
