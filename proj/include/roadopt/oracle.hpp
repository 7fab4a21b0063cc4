#pragma once

#include <vector>

#include "roadopt/fluxmodel.hpp"
#include "roadopt/groups.hpp"
#include "roadopt/laxhopf.hpp"
#include "roadopt/parallel.hpp"

namespace roadopt {

// Output of the finite-volume march: the arrival rate at x = L sampled on
// the (padded) departure grid, plus the transported group fractions.
struct FVResult {
    double t_lo = 0.0;
    double dt = 0.0;
    std::vector<double> u;                    // arrival rate per t-cell
    std::vector<std::vector<double>> theta;   // [group][t-cell]
    double mass_in = 0.0;
    double mass_out = 0.0;

    int cells() const { return static_cast<int>(u.size()); }
    double node(int i) const { return t_lo + dt * i; }
};

// Godunov finite-volume solver for u_x + g(u)_t = 0, marching in x from the
// departure curve at x = 0 to x = L. t is the conserved-variable axis: each
// x-step updates the row of t-cells with the exact-Riemann (min/max) flux of
// the convex increasing g. Group fractions ride along as donor-cell mass
// fractions, which keeps them in the simplex exactly. theta_bar holds one
// fraction row per group over bar's cells; pass {} to skip transport. The
// grid is padded past bar.t_hi so every driver arrives on it.
//
// Throws CFLViolation if dx * max g'(u) / dt > 1 for any encountered state,
// CapacitySaturation if any state reaches M * (1 - 1e-6).
FVResult fv_propagate(const BoundaryProfile& bar,
                      const std::vector<std::vector<double>>& theta_bar,
                      const FluxModel& m, double L, double dx,
                      Exec ex = Exec::parallel);

// Cost of a binned departure plan evaluated entirely on the FV solver:
// each bin is split into `refine` sub-cells, propagated, and both cost
// integrals are summed cell by cell. rates is [group][bin].
double fv_plan_cost(const GroupSpec& spec, const FluxModel& m, double L,
                    double t_lo, double dt_bin,
                    const std::vector<std::vector<double>>& rates,
                    int refine = 8, Exec ex = Exec::serial);

struct BruteResult {
    double t_lo = 0.0;
    double dt = 0.0;                          // bin width
    std::vector<std::vector<double>> rates;   // [group][bin]
    double cost = 0.0;
};

// Direct minimization of the plan cost over piecewise-constant departure
// rates on `bins` cells of [w_lo, w_hi]: projected pairwise-transfer
// coordinate descent from `starts` random feasible points, each start run
// independently (in parallel) and the cheapest kept. Desk scale only:
// at most 2 groups and 24 bins. Per-group masses are conserved by every
// move; rates are capped at 0.99 * capacity.
//
// Throws InfeasibleMass if capacity * (w_hi - w_lo) < total mass,
// ConfigError on scale violations.
BruteResult brute_force_optimize(const GroupSpec& spec, const FluxModel& m,
                                 double L, int bins, double w_lo, double w_hi,
                                 int starts = 20, unsigned seed = 20240816u,
                                 int refine = 8, Exec ex = Exec::parallel);

} // namespace roadopt
