#include "roadopt/groups.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "roadopt/errors.hpp"
#include "roadopt/numerics.hpp"

namespace roadopt {

namespace {

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c);
    return buf;
}

} // namespace

double GroupSpec::total_mass() const {
    double g = 0.0;
    for (const auto& gr : groups) g += gr.size;
    return g;
}

double GroupSpec::psi_at(int i, double t) const {
    if (i < 0 || i >= count())
        throw LabelOutOfRange("group index " + std::to_string(i) + " out of range");
    return costexpr::eval(groups[i].psi, t);
}

double GroupSpec::psi_p_at(int i, double t) const {
    if (i < 0 || i >= count())
        throw LabelOutOfRange("group index " + std::to_string(i) + " out of range");
    return costexpr::eval(groups[i].psi_p, t);
}

GroupSpec GroupSpec::parse(const std::string& phi_src,
                           const std::vector<std::string>& names,
                           const std::vector<double>& sizes,
                           const std::vector<std::string>& psi_srcs) {
    if (names.size() != sizes.size() || names.size() != psi_srcs.size())
        throw ConfigError("group names, sizes and arrival costs must align");
    GroupSpec s;
    s.phi = costexpr::parse(phi_src, "t");
    s.phi_p = costexpr::derivative(s.phi);
    for (size_t i = 0; i < names.size(); ++i) {
        Group g;
        g.name = names[i];
        g.size = sizes[i];
        g.psi = costexpr::parse(psi_srcs[i], "t");
        g.psi_p = costexpr::derivative(g.psi);
        s.groups.push_back(std::move(g));
    }
    return s;
}

void GroupSpec::validate(double t_lo, double t_hi) const {
    if (groups.empty()) throw ConfigError("need at least one group");
    if (!(t_hi > t_lo)) throw ConfigError("working window is empty");
    for (const auto& g : groups)
        if (!(g.size > 0.0))
            throw ConfigError("group \"" + g.name + "\" has non-positive size");

    const int n = 256;
    const double h = (t_hi - t_lo) / n;
    for (int k = 0; k <= n; ++k) {
        const double t = t_lo + h * k;
        if (!(phi_p_at(t) < 0.0))
            throw ConfigError(fmt("departure cost must strictly decrease; "
                                  "phi'(%.6g) = %.6g", t, phi_p_at(t)));
        for (int i = 0; i < count(); ++i) {
            if (!(psi_at(i, t) > 0.0))
                throw ConfigError("arrival cost of \"" + groups[i].name +
                                  "\" not positive at t=" + fmt("%.6g", t));
            if (!(psi_p_at(i, t) > 0.0))
                throw ConfigError("arrival cost of \"" + groups[i].name +
                                  "\" not strictly increasing at t=" + fmt("%.6g", t));
        }
    }

    // Wherever two marginal arrival costs cross, the crossing must be
    // transversal, otherwise the scheduling order is ill-defined there.
    std::vector<costexpr::Expr> pp;
    for (const auto& g : groups) pp.push_back(costexpr::derivative(g.psi_p));
    for (int i = 0; i < count(); ++i) {
        for (int j = i + 1; j < count(); ++j) {
            auto d = [&](double t) { return psi_p_at(i, t) - psi_p_at(j, t); };
            double prev = d(t_lo);
            for (int k = 1; k <= n; ++k) {
                const double t = t_lo + h * k;
                const double cur = d(t);
                double cross = std::numeric_limits<double>::quiet_NaN();
                if (prev == 0.0) cross = t - h;
                else if (prev * cur < 0.0)
                    cross = num::bisect(d, t - h, t, prev, cur);
                if (std::isfinite(cross)) {
                    const double a = costexpr::eval(pp[i], cross);
                    const double b = costexpr::eval(pp[j], cross);
                    if (std::fabs(a - b) <=
                        1e-9 * (1.0 + std::max(std::fabs(a), std::fabs(b))))
                        throw ConfigError("arrival-cost rates of \"" +
                                          groups[i].name + "\" and \"" +
                                          groups[j].name +
                                          "\" cross tangentially near t=" +
                                          fmt("%.6g", cross));
                }
                prev = cur;
            }
        }
    }
}

double FractionField::at(int i, double s) const {
    if (i < 0 || i >= group_count())
        throw LabelOutOfRange("group index " + std::to_string(i) + " out of range");
    s = std::clamp(s, 0.0, G);
    auto it = std::upper_bound(run_s.begin(), run_s.end(), s);
    const auto idx = std::max<std::ptrdiff_t>(0, (it - run_s.begin()) - 1);
    return run_theta[static_cast<size_t>(idx)][static_cast<size_t>(i)];
}

void FractionField::validate() const {
    if (run_s.empty() || run_s.size() != run_theta.size())
        throw ConfigError("fraction runs malformed");
    if (run_s.front() != 0.0) throw ConfigError("fraction runs must start at label 0");
    for (size_t r = 0; r < run_theta.size(); ++r) {
        if (r && !(run_s[r] > run_s[r - 1]))
            throw ConfigError("fraction run labels must increase");
        double sum = 0.0;
        for (double v : run_theta[r]) {
            if (v < -1e-12) throw ConfigError("negative group fraction");
            sum += v;
        }
        if (std::fabs(sum - 1.0) > 1e-9)
            throw ConfigError(fmt("group fractions sum to %.12g at label %.6g",
                                  sum, run_s[r]));
    }
}

FractionField FractionField::single_group(double G) {
    FractionField f;
    f.G = G;
    f.run_s = {0.0};
    f.run_theta = {{1.0}};
    return f;
}

FractionField FractionField::from_labels(double G, std::vector<double> breaks,
                                         std::vector<std::vector<double>> theta) {
    if (theta.size() != breaks.size() + 1)
        throw ConfigError("need one fraction row per label interval");
    FractionField f;
    f.G = G;
    f.run_s.push_back(0.0);
    for (double b : breaks) {
        if (!(b > f.run_s.back()) || !(b < G))
            throw ConfigError("fraction breaks must be sorted inside (0, G)");
        f.run_s.push_back(b);
    }
    f.run_theta = std::move(theta);
    f.validate();
    return f;
}

FractionField FractionField::from_group_profiles(
    const BoundaryProfile& total, const std::vector<BoundaryProfile>& per_group,
    int samples) {
    const int n = static_cast<int>(per_group.size());
    if (n == 0) throw ConfigError("need at least one group curve");
    for (const auto& p : per_group)
        if (p.t_lo != total.t_lo || p.dt != total.dt || p.cells() != total.cells())
            throw ConfigError("group curves must share the total curve's grid");

    FractionField f;
    f.G = total.total_mass();
    if (!(f.G > 0.0)) {
        f.run_s = {0.0};
        f.run_theta = {std::vector<double>(n, 1.0 / n)};
        return f;
    }

    std::vector<double> cur;
    for (int k = 0; k < samples; ++k) {
        const double s = (k + 0.5) / samples * f.G;
        const double tau = total.time_at_mass(s);
        int c = static_cast<int>(std::floor((tau - total.t_lo) / total.dt));
        c = std::clamp(c, 0, total.cells() - 1);
        double r = total.rate(c);
        if (r <= 1e-15 * (1.0 + f.G)) {
            if (cur.empty()) continue; // label landed on a dead cell; carry on
            r = 0.0;
        }
        std::vector<double> th(n, 0.0);
        if (r > 0.0) {
            double sum = 0.0;
            for (int i = 0; i < n; ++i) {
                th[i] = std::max(0.0, per_group[i].rate(c));
                sum += th[i];
            }
            if (sum <= 0.0) { th = cur; }
            else for (double& v : th) v /= sum;
        } else {
            th = cur;
        }
        bool fresh = cur.empty();
        if (!fresh)
            for (int i = 0; i < n; ++i)
                if (std::fabs(th[i] - cur[i]) > 1e-9) { fresh = true; break; }
        if (fresh) {
            f.run_s.push_back(f.run_s.empty() ? 0.0 : k * f.G / samples);
            f.run_theta.push_back(th);
            cur = th;
        }
    }
    if (f.run_s.empty()) throw ConfigError("all group curves are empty");
    f.validate();
    return f;
}

double label_inverse(const BoundaryProfile& profile, double s) {
    const double G = profile.total_mass();
    const double tol = 1e-9 * (1.0 + G);
    if (s < -tol || s > G + tol)
        throw LabelOutOfRange(fmt("label %.12g outside [0, %.12g]", s, G));
    if (s <= 0.0) {
        for (int c = 0; c < profile.cells(); ++c)
            if (profile.rate(c) > 0.0) return profile.node(c);
        return profile.t_lo;
    }
    return profile.time_at_mass(std::min(s, G));
}

double theta_at(const FractionField& f, const LaxSolution& sol, int i,
                double t, double x) {
    return f.at(i, sol.value(t, x));
}

double total_cost(const GroupSpec& spec, const LaxSolution& sol,
                  const FractionField& f, int arrival_samples, Exec ex) {
    const BoundaryProfile& bar = sol.boundary();
    const double G = bar.total_mass();

    double dep = 0.0;
    for (int c = 0; c < bar.cells(); ++c) {
        const double dU = bar.U[c + 1] - bar.U[c];
        if (dU == 0.0) continue;
        dep += spec.phi_at(bar.node(c) + 0.5 * bar.dt) * dU;
    }
    if (!(G > 0.0)) return dep;

    const double L = sol.length();
    const double t0 = bar.t_lo + L * sol.model().gp0();
    const double t1 = arrival_time(sol, bar.t_hi());
    const int K = std::max(16, arrival_samples);
    std::vector<double> ts(K + 1);
    for (int k = 0; k <= K; ++k) ts[k] = t0 + (t1 - t0) * k / K;
    const std::vector<double> Ua = sol.value_sweep(ts, L, ex);

    double arr = 0.0;
    for (int k = 0; k < K; ++k) {
        const double dU = Ua[k + 1] - Ua[k];
        if (dU <= 0.0) continue;
        const double tm = 0.5 * (ts[k] + ts[k + 1]);
        const double sm = 0.5 * (Ua[k] + Ua[k + 1]);
        for (int i = 0; i < spec.count(); ++i) {
            const double th = f.at(i, sm);
            if (th > 0.0) arr += spec.psi_at(i, tm) * th * dU;
        }
    }
    return dep + arr;
}

namespace {

// Terminus of the forward characteristic through the departure at time t:
// the T whose backward characteristic interval [eta-(T), eta+(T)] contains t.
// Both edges are nondecreasing in T, so each boundary is found by bisection.
// Returns {first such T, last such T}; they differ only when t is the center
// of a rarefaction fan.
std::pair<double, double> terminus_range(const LaxSolution& sol, double t) {
    const double L = sol.length();
    const double gp0 = sol.model().gp0();
    const BoundaryProfile& bar = sol.boundary();
    const double span = bar.t_hi() - bar.t_lo + L * gp0 + 1.0;
    const double eps = 1e-12 * (1.0 + std::fabs(t));
    const double xtol = 1e-10 * span;

    auto above = [&](double T) { // char feet already past t
        return backward_char_interval(sol, T).eta_minus > t + eps;
    };
    auto reached = [&](double T) { // char feet have caught up to t
        return backward_char_interval(sol, T).eta_plus >= t - eps;
    };

    const double lo = t + L * gp0;
    double step = std::max(L * gp0, 0.125 * span);
    double hi = lo + step;
    while (!above(hi)) {
        step *= 2.0;
        hi += step;
        if (hi - lo > 1e7 * span)
            throw WindowTooNarrow(fmt("no characteristic terminus above t=%.6g", t));
    }

    double T1 = lo;
    if (!reached(lo)) { // first T with eta+ >= t
        double a = lo, b = hi;
        while (b - a > xtol) {
            const double m = 0.5 * (a + b);
            (reached(m) ? b : a) = m;
        }
        T1 = b;
    }
    double a = T1, b = hi; // last T with eta- <= t
    while (b - a > xtol) {
        const double m = 0.5 * (a + b);
        (above(m) ? b : a) = m;
    }
    return {T1, a};
}

} // namespace

double marginal_cost(const GroupSpec& spec, const LaxSolution& sol,
                     const FractionField& f, int i, double t) {
    if (i < 0 || i >= spec.count())
        throw LabelOutOfRange("group index " + std::to_string(i) + " out of range");
    const double L = sol.length();
    const BoundaryProfile& bar = sol.boundary();
    const double span = bar.t_hi() - bar.t_lo + L * sol.model().gp0() + 1.0;

    const double ta = arrival_time(sol, t);
    auto [T1, T2] = terminus_range(sol, t);
    // The argmin layer only resolves minimizers to ~1e-4 of the window, so
    // spans below that are tie-breaking noise, not fans; genuine fans carry
    // a rate jump and are orders of magnitude wider.
    if (T2 - T1 > 1e-3 * span)
        throw AmbiguousCharacteristic(
            fmt("departure t=%.6g is a fan center (terminus spans [%.6g, %.6g])",
                t, T1, T2));
    const double T = std::max(T1, ta);

    // Everyone arriving in [ta, T] is pushed back at unit rate; charge each
    // label interval its own groups' psi' and sum the segments exactly.
    double acc = 0.0;
    if (T > ta + 1e-12 * span) {
        const double w_a = sol.value(ta, L);
        const double w_b = sol.value(T, L);
        const double tol_w = 1e-12 * (1.0 + f.G);
        auto it = std::upper_bound(f.run_s.begin(), f.run_s.end(), w_a);
        size_t r = static_cast<size_t>(
            std::max<std::ptrdiff_t>(0, (it - f.run_s.begin()) - 1));
        double t_cur = ta;
        while (t_cur < T) {
            const double s_end = (r + 1 < f.run_s.size())
                                     ? f.run_s[r + 1]
                                     : std::numeric_limits<double>::infinity();
            double t_next = T;
            if (s_end < w_b - tol_w) {
                auto h = [&](double s) { return sol.value(s, L) - s_end; };
                const double flo = h(t_cur);
                if (flo >= 0.0) t_next = t_cur;
                else t_next = num::bisect(h, t_cur, T, flo, h(T), 1e-10 * span);
            }
            for (int j = 0; j < spec.count(); ++j) {
                const double th = f.run_theta[r][static_cast<size_t>(j)];
                if (th > 0.0)
                    acc += th * (spec.psi_at(j, t_next) - spec.psi_at(j, t_cur));
            }
            t_cur = t_next;
            if (s_end >= w_b - tol_w) break;
            ++r;
        }
    }
    return spec.phi_at(t) + spec.psi_at(i, ta) + acc;
}

} // namespace roadopt
