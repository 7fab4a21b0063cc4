#pragma once

#include <vector>

#include "roadopt/fluxmodel.hpp"

namespace roadopt {

// A single intersection: m incoming roads, n outgoing roads, priority
// weights over the incoming side, and the turning matrix theta[i][j] =
// fraction of road-i drivers that continue onto road j. The buffer model
// additionally bounds how many cars can sit inside the intersection.
struct JunctionConfig {
    std::vector<FluxModel> in_models;
    std::vector<FluxModel> out_models;
    std::vector<double> priority;              // c_i >= 0, sum 1
    std::vector<std::vector<double>> turning;  // m rows of n, each summing 1
    double buffer_capacity = 0.0;              // > 0 only for the buffer model

    int incoming() const { return static_cast<int>(in_models.size()); }
    int outgoing() const { return static_cast<int>(out_models.size()); }

    // Shape and simplex identities to 1e-12. Throws ConfigError.
    void validate() const;
};

// Largest flux a road can send into the junction given its current density:
// the flux itself on the free branch, the road's capacity once congested.
double max_exit_flux(const FluxModel& m, double rho);

// Largest flux a road can absorb from the junction: capacity while the road
// is free, the (decreasing-branch) flux once congested.
double max_entry_flux(const FluxModel& m, double rho);

struct FluxBounds {
    std::vector<double> in_max;   // per incoming road
    std::vector<double> out_max;  // per outgoing road
};

// Bounds for the junction's current boundary densities.
FluxBounds junction_bounds(const JunctionConfig& cfg,
                           const std::vector<double>& rho_in,
                           const std::vector<double>& rho_out);

// Membership in the admissible set: 0 <= f_i <= in_max_i and every outgoing
// road receives at most out_max_j. Exact comparisons; no slack.
bool admissible_region_contains(const JunctionConfig& cfg,
                                const FluxBounds& b,
                                const std::vector<double>& f);

struct LPResult {
    std::vector<double> f;   // maximizing incoming fluxes
    double objective = 0.0;  // sum c_i f_i
    bool tie = false;        // the maximum is attained on a face, not a point
};

// Maximize sum c_i f_i over the admissible polytope by vertex enumeration
// (meant for desk-scale junctions: at most 4 incoming and 4 outgoing roads).
// Among optimal vertices the lexicographically largest flux vector is
// returned and the multiplicity is flagged.
LPResult solve_lp(const JunctionConfig& cfg, const FluxBounds& b);

// Ration the incoming fluxes along the curve gamma_i(s) = min(c_i s, in_max_i)
// and push s as far as the outgoing constraints allow (closed-form piecewise
// scan per constraint). Requires every priority strictly positive.
std::vector<double> solve_priority_curve(const JunctionConfig& cfg,
                                         const FluxBounds& b);

// Two incoming roads where road 2 yields: road 1 takes as much as it can
// alone; road 2 moves only if road 1 is at its own bound and slack remains.
// Throws ModelShapeError unless exactly two roads come in.
std::vector<double> solve_stop_sign(const JunctionConfig& cfg,
                                    const FluxBounds& b);

// One explicit Euler step of the buffer model. Queues q[j] hold the cars
// already inside the intersection waiting for road j; admission is throttled
// by the free space, drained queues release at the outgoing bound. A queue
// hitting zero mid-step drains exactly (the outflow is corrected within the
// same step), so car count is conserved and queues never go negative.
struct BufferState {
    std::vector<double> q;      // updated queues
    std::vector<double> f_in;   // admission fluxes used over the step
    std::vector<double> f_out;  // effective outgoing fluxes over the step
};
BufferState buffer_step(const JunctionConfig& cfg, const FluxBounds& b,
                        const std::vector<double>& q, double dt,
                        const std::vector<double>& admit_rates = {});

// Admission coefficients that make the small-buffer steady state reproduce
// the priority-curve solver: the plain priorities scaled so the reachable
// curve parameter (free space times coefficient) covers every saturation
// knee with a factor-two margin.
std::vector<double> buffer_limit_rates(const JunctionConfig& cfg,
                                       double M_buf);

// Step size resolving both the queue-transit and the admission-stiffness
// time scales for the given coefficients.
double buffer_suggested_dt(const JunctionConfig& cfg, const FluxBounds& b,
                           const std::vector<double>& admit_rates);

} // namespace roadopt
