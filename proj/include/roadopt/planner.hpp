#pragma once

#include <string>
#include <vector>

#include "roadopt/fluxmodel.hpp"
#include "roadopt/groups.hpp"
#include "roadopt/laxhopf.hpp"
#include "roadopt/parallel.hpp"

namespace roadopt {

// Marginal-cost constants, one per group. The planner searches over these:
// at the fitted values, inserting one extra group-i driver anywhere in the
// optimal plan costs exactly C[i].
struct Constants {
    std::vector<double> C;

    int count() const { return static_cast<int>(C.size()); }
    void validate() const; // finite entries, matching a positive group count
};

// Lower envelope of the shifted arrival costs, env(t) = min_i (psi_i(t) - C_i),
// with its active-index map. Cheap value object: evaluations go straight to
// the cost expressions. Crossings are transversal (GroupSpec::validate checks
// this), so the active index changes at isolated, bisectable points.
struct Envelope {
    const GroupSpec* spec = nullptr;
    std::vector<double> C;

    double value(double t) const;
    double deriv(double t) const;   // psi_active'(t); at a tie, lowest index
    int active(double t) const;     // argmin index, lowest wins ties

    // Interior times in (t_lo, t_hi) where the active index changes, sorted,
    // each located by bisection to 1e-10 after a fixed-density scan.
    std::vector<double> crossings(double t_lo, double t_hi) const;
};

Envelope psi_envelope(const GroupSpec& spec, const Constants& C);

// The unique T in [T_lo, T_hi] with phi(t) + env(T) = 0: the arrival time of
// the backward characteristic rooted at departure time t. env is strictly
// increasing, so monotone bisection applies. Throws NoRootInWindow when the
// level -phi(t) is not bracketed by env on the window.
double characteristic_terminus(const Envelope& env, double t, double T_lo,
                               double T_hi);
double characteristic_terminus(const GroupSpec& spec, const Constants& C,
                               double t, double T_lo, double T_hi);

// One maximal arrival interval with positive flux. Edge locations are
// refined by bisection well below grid resolution; feet are the departure
// times of the edge characteristics.
struct SupportPiece {
    double T_a = 0.0, T_b = 0.0; // refined arrival-side edges
    double t_a = 0.0, t_b = 0.0; // feet of the edge characteristics
    double u_a = 0.0, u_b = 0.0; // flux at the edges (0 unless cut by the grid)
    double w_a = 0.0, w_b = 0.0; // cumulative arrival count at the edges
    double D_a = 0.0;            // departures completed before t_a
    int k_lo = 0, k_hi = 0;      // grid nodes strictly inside (k_lo > k_hi: none)
};

// Shock-free candidate solution generated by the constants C: each arrival
// time T on a uniform grid is joined to its departure foot t(T) by a straight
// characteristic carrying flux gamma((T - t(T)) / L), or zero below the
// free-flow slope. Both sides are tabulated; the stored segments answer
// pointwise flux queries anywhere on the strip.
struct Candidate {
    const FluxModel* model = nullptr;
    Envelope env;
    double L = 0.0;
    double t_lo = 0.0, t_hi = 0.0; // departure window the feet were confined to

    double T0 = 0.0, dT = 0.0;   // uniform arrival grid, samples() nodes
    std::vector<double> u;       // arrival flux u(T_k, L)
    std::vector<double> foot;    // t(T_k); NaN where no foot lies in the window
    std::vector<double> w;       // cumulative arrival count up to T_k

    std::vector<SupportPiece> pieces; // maximal {u > 0} intervals, ordered

    // departure curve sample points: time and cumulative count, one pair per
    // piece edge and per supported grid node, monotone in both coordinates
    std::vector<double> knots_t, knots_D;

    BoundaryProfile departures;  // total departure curve on a uniform t-grid

    int samples() const { return static_cast<int>(u.size()); }
    double T_node(int k) const { return T0 + dT * k; }

    // Flux at an interior point: locate the characteristic segment through
    // (t, x) within a support piece (the segment map is monotone in T) and
    // interpolate; zero when no loaded segment passes through the point.
    double flux_at(double t, double x) const;

    // Linear interpolation of the tabulated arrival flux at x = L.
    double arrival_flux(double T) const;

    // Arrival flux recomputed from scratch (fresh foot solve); smooth in T
    // and in the constants, which the fitting quadratures rely on.
    double exact_arrival_flux(double T) const;

    // Cumulative arrival count up to time T (integral of the arrival flux).
    double arrival_count(double T) const;
};

Candidate build_candidate(const GroupSpec& spec, const FluxModel& m, double L,
                          const Constants& C, double t_lo, double t_hi,
                          int arrival_samples = 10000,
                          Exec ex = Exec::parallel);

// One arrival interval on which a single group attains the envelope minimum
// and the flux is positive; mass is the integral of the arrival flux over it.
struct ArrivalPiece {
    double T_a = 0.0, T_b = 0.0;
    int group = 0;
    double mass = 0.0;
};

struct Partition {
    std::vector<ArrivalPiece> pieces; // ordered by T_a
    std::vector<double> kappa;        // per-group masses (the map Lambda(C))
    double total = 0.0;               // sum of kappa

    // A_i as a list of [T_a, T_b] intervals.
    std::vector<std::vector<std::pair<double, double>>> sets() const;
};

// Split the candidate support at the envelope crossings and integrate the
// arrival flux piece by piece (composite Simpson with exact per-node feet,
// so the masses vary smoothly with C).
Partition arrival_partition(const Candidate& cand);

// Fitting diagnostics: the constants, the masses they achieve, and the
// iteration log of the damped Newton / coordinate-bisection search.
struct FitResult {
    Constants C;
    std::vector<double> kappa;
    double residual = 0.0; // max_i |kappa_i - G_i|
    int iterations = 0;
    bool non_unique = false;          // distinct fixed points found
    std::vector<Constants> alternates; // the other fixed points, if any
    std::vector<std::string> log;     // one line per iterate / start outcome
};

struct SolveOptions {
    double t_lo = 0.0, t_hi = 0.0; // departure window
    int arrival_grid = 10000;
    int departure_grid = 0;        // 0: match arrival_grid
    double residual_tol = 1e-4;    // times max G (stop bar; Newton aims lower)
    int max_iterations = 200;
    int multistarts = 8;
    unsigned seed = 20240816u;
    Exec ex = Exec::parallel;
};

// Fit Lambda(C) = G by damped Newton with a forward-difference Jacobian
// (step 1e-4), falling back to coordinate-wise bisection (kappa_i increases
// in C_i) when the Jacobian is singular or a step stalls. Runs the given
// number of random starts around C0 in parallel; distinct fixed points are
// resolved by total cost and flagged. Throws MaxIterations when no start
// meets the residual bar.
FitResult solve_constants(const GroupSpec& spec, const FluxModel& m, double L,
                          const std::vector<double>& G, const Constants& C0,
                          const SolveOptions& opts);

// Scale-aware default start: psi_i at a free-flow arrival from the window
// midpoint, shifted by the departure cost there.
Constants default_start(const GroupSpec& spec, const FluxModel& m, double L,
                        double t_lo, double t_hi);

// The finished plan: fitted constants, the candidate they generate, the
// arrival partition, the departure map eta (car trajectories traced back
// from each supported arrival node), per-group departure profiles, and the
// total cost of the plan.
struct Plan {
    Constants C;
    Candidate cand;
    Partition part;

    std::vector<double> eta_T; // supported arrival nodes (incl. piece edges)
    std::vector<double> eta_t; // departure time of the car arriving then

    std::vector<BoundaryProfile> group_departures; // ubar_i, shared grid
    std::vector<std::vector<std::pair<double, double>>> departure_sets; // A_i*
    FractionField fractions;   // group mix by cumulative departure label

    double cost = 0.0;         // departure costs + arrival costs
    int grid = 0;              // arrival samples of the final candidate
    FitResult fit;             // empty C when the plan was built at fixed C

    double eta(double T) const; // interpolate the departure map

    // Contract checks: nonnegative rates strictly below capacity, per-group
    // masses consistent with the partition, total mass, and a no-shock bound
    // on adjacent arrival-flux jumps. Throws ConfigError on violation.
    void validate(const std::vector<double>& G) const;
};

// Trace cars back from the arrival side (RK4 in x with step-doubling error
// control on dt/dx = 1 / speed, speed = v(g(u))), build per-group departure
// profiles from the cumulative-label partition, and price the plan. Throws
// TrajectoryStalled if a trajectory stops making progress (impossible for a
// shock-free candidate below capacity; indicates an upstream bug).
Plan backout_departures(const Candidate& cand, const Partition& part,
                        int departure_cells = 0, Exec ex = Exec::parallel);

// Full pipeline: default start, multistart fit, grid doubling until the
// constants settle (move < 1e-3), then the backout at the final grid.
Plan solve_plan(const GroupSpec& spec, const FluxModel& m, double L,
                const SolveOptions& opts);

} // namespace roadopt
