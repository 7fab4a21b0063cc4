#pragma once

#include <utility>
#include <vector>

#include "roadopt/fluxmodel.hpp"
#include "roadopt/parallel.hpp"

namespace roadopt {

// Cumulative departure curve sampled on a uniform time grid: U[i] is the
// vehicle count that has entered the road by t_lo + i*dt. The underlying
// rate is piecewise constant on the grid cells. Outside the window the curve
// continues exactly (0 to the left, G to the right), so the window only has
// to cover the support of the rate.
struct BoundaryProfile {
    double t_lo = 0.0;
    double dt = 0.0;
    std::vector<double> U;

    int cells() const { return static_cast<int>(U.size()) - 1; }
    double t_hi() const { return t_lo + dt * cells(); }
    double total_mass() const { return U.empty() ? 0.0 : U.back(); }
    double node(int i) const { return t_lo + dt * i; }
    double rate(int cell) const {
        return (U[static_cast<std::size_t>(cell) + 1] - U[static_cast<std::size_t>(cell)]) / dt;
    }

    // Piecewise-linear evaluation with exact continuation outside the window.
    double value(double t) const;

    // Inverse: earliest time with value(t) >= w (vehicle w's departure time).
    double time_at_mass(double w) const;

    static BoundaryProfile from_rates(double t_lo, double dt,
                                      const std::vector<double>& rates);

    // Nondecreasing, U[0] = 0, rates within [0, M]; throws ConfigError.
    void validate(double M) const;
};

// Extremal backward characteristics through (T, L): they start on the t-axis
// at eta_minus and eta_plus. Distinct values mean a shock reaches (T, L).
struct CharInterval {
    double T = 0.0;
    double eta_minus = 0.0;
    double eta_plus = 0.0;
};

// Flux at a point; `shock` is set when the minimizing characteristic is not
// unique and the left (earlier-time) value was returned by convention.
struct FluxValue {
    double u = 0.0;
    bool shock = false;
};

// Entropy solution of u_x + g(u)_t = 0 on the strip x in [0, L] with boundary
// data U(t, 0) = bar(t), evaluated pointwise through the variational formula
//
//   U(t, x) = min over tau of  x * g*((t - tau) / x) + bar(tau).
//
// The minimum is scanned cell by cell over the boundary grid: on each cell
// the rate is constant, so the objective is strictly convex there and its
// interior critical point has a closed form through the cached g(rate) and
// g'(rate) tables. Kink candidates at the nodes are bounded with the sampled
// Legendre table first and only the near-minimal ones are re-evaluated
// exactly. All queries are pure; sweeps may run in parallel.
class LaxSolution {
public:
    LaxSolution(const FluxModel& m, BoundaryProfile bar, double L);

    const FluxModel& model() const { return *m_; }
    const BoundaryProfile& boundary() const { return bar_; }
    double length() const { return L_; }

    struct Argmin {
        double value = 0.0;     // U(t, x)
        double tau_min = 0.0;   // extreme minimizers (equal when unique)
        double tau_max = 0.0;
        bool multiple = false;  // distinct minimizers within tolerance
    };
    Argmin argmin(double t, double x) const;

    double value(double t, double x) const;
    FluxValue flux(double t, double x) const;

    // Batch evaluation of U(t_i, x), parallelized over the queries.
    std::vector<double> value_sweep(const std::vector<double>& ts, double x,
                                    Exec ex = Exec::parallel) const;
    std::vector<Argmin> argmin_sweep(const std::vector<double>& ts, double x,
                                     Exec ex = Exec::parallel) const;

private:
    const FluxModel* m_;
    BoundaryProfile bar_;
    double L_;
    std::vector<double> rate_, rho_, gpk_; // per boundary cell: u, g(u), g'(u)
    LegendreView view_;

    double exact_objective(double t, double x, double tau) const;
};

// Named per the operations this library exposes; thin wrappers over the
// LaxSolution queries.
double lax_value(const LaxSolution& sol, double t, double x);
FluxValue lax_flux(const LaxSolution& sol, double t, double x);

CharInterval backward_char_interval(const LaxSolution& sol, double T);

// Arrival time of the driver departing at t0: the time U(., L) reaches the
// driver's cumulative index, but never earlier than the free-flow bound
// t0 + L / v(0). Throws WindowTooNarrow if the level cannot be bracketed.
double arrival_time(const LaxSolution& sol, double t0);

// Sampled trajectory (t, y(t)) from departure to arrival: the level curve
// of U at the driver's index, capped by the free-flow line through t0.
std::vector<std::pair<double, double>> car_trajectory(const LaxSolution& sol,
                                                      double t0,
                                                      int samples = 257);

// Replace the boundary datum on [eta_minus, eta_plus] of the shock reaching
// (T, L) by the centered compression profile that breaks exactly at (T, L).
// The arrival curve U(., L) is unchanged; the departure curve drops.
// Throws NotAShock when the backward characteristic through T is unique.
BoundaryProfile compressionize(const LaxSolution& sol, double T);

} // namespace roadopt
