#pragma once

#include <string>
#include <vector>

#include "roadopt/costexpr.hpp"
#include "roadopt/laxhopf.hpp"

namespace roadopt {

// One population of drivers: its size and its arrival cost. The departure
// cost is shared by all groups and lives on GroupSpec.
struct Group {
    std::string name;
    double size = 0.0;              // vehicles
    costexpr::Expr psi;             // arrival cost psi_i(t)
    costexpr::Expr psi_p;           // d psi_i / dt
};

struct GroupSpec {
    costexpr::Expr phi;             // departure cost phi(t), shared
    costexpr::Expr phi_p;
    std::vector<Group> groups;

    int count() const { return static_cast<int>(groups.size()); }
    double total_mass() const;
    double phi_at(double t) const { return costexpr::eval(phi, t); }
    double phi_p_at(double t) const { return costexpr::eval(phi_p, t); }
    double psi_at(int i, double t) const;
    double psi_p_at(int i, double t) const;

    // Sampled shape checks on the working window: sizes positive, phi' < 0,
    // psi_i > 0, psi_i' > 0, and wherever two psi_i' curves cross, their
    // derivatives differ (so the crossing is transversal). Throws ConfigError.
    void validate(double t_lo, double t_hi) const;

    static GroupSpec parse(const std::string& phi_src,
                           const std::vector<std::string>& names,
                           const std::vector<double>& sizes,
                           const std::vector<std::string>& psi_srcs);
};

// Group fractions indexed by the cumulative-count label s in [0, G]: driver
// number s belongs to group i with fraction Theta_i(s). Stored as maximal
// runs of constant fractions, right-continuous in s. Because every driver
// keeps its place in line, composing with the count U(t, x) yields the
// fractions anywhere on the road.
struct FractionField {
    double G = 0.0;
    std::vector<double> run_s;                   // run start labels; run_s[0] = 0
    std::vector<std::vector<double>> run_theta;  // [run][group]

    int group_count() const {
        return run_theta.empty() ? 0 : static_cast<int>(run_theta.front().size());
    }
    double at(int i, double s) const;

    // Sigma_i theta = 1 (to 1e-9) and theta >= 0 on every run.
    void validate() const;

    static FractionField single_group(double G);
    // Runs given directly: breaks = interior run boundaries (sorted).
    static FractionField from_labels(double G, std::vector<double> breaks,
                                     std::vector<std::vector<double>> theta);
    // Sampled from a total departure curve and the per-group curves summing
    // to it: Theta_i(s) = dU_i/dU at the departure time of driver s.
    static FractionField from_group_profiles(const BoundaryProfile& total,
                                             const std::vector<BoundaryProfile>& per_group,
                                             int samples = 4096);
};

// Departure time of driver s: earliest t with bar(t) >= s (flat stretches of
// the count map to their left edge). Throws LabelOutOfRange outside [0, G].
double label_inverse(const BoundaryProfile& profile, double s);

// Fraction of group i in the flow at (t, x): Theta_i(U(t, x)).
double theta_at(const FractionField& f, const LaxSolution& sol, int i,
                double t, double x);

// Total cost of the plan encoded by sol's boundary data and the fractions:
// departure costs integrated against the departure curve plus arrival costs
// integrated against the arrival curve, both by midpoint quadrature.
double total_cost(const GroupSpec& spec, const LaxSolution& sol,
                  const FractionField& f, int arrival_samples = 4096,
                  Exec ex = Exec::parallel);

// Cost of inserting one extra group-i driver at departure time t: the driver
// pays phi(t) and psi_i at its arrival, and delays everyone in the queue
// between its arrival and the terminus T(t) of the characteristic through t,
// charging each delayed driver its own psi' rate:
//
//   phi(t) + psi_i(ta(t)) + sum_j integral_{ta(t)}^{T(t)} psi_j'(s) theta_j(s, L) ds.
//
// T(t) is found by monotone search over the backward characteristics; the
// integral is summed exactly over the runs of the fractions. Throws
// AmbiguousCharacteristic if t is the center of a rarefaction fan (a whole
// interval of T's traces back to t).
double marginal_cost(const GroupSpec& spec, const LaxSolution& sol,
                     const FractionField& f, int i, double t);

} // namespace roadopt
