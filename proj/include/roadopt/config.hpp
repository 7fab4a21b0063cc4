#pragma once

#include <string>
#include <vector>

#include "roadopt/fluxmodel.hpp"
#include "roadopt/groups.hpp"
#include "roadopt/junction.hpp"
#include "roadopt/planner.hpp"

namespace roadopt {

// Everything a solve/check/oracle run needs, read from one JSON file.
// Expressions stay as source strings so configs round-trip losslessly.
struct ProblemConfig {
    // road
    std::string velocity_src;
    double rho_jam = 0.0;
    double length = 0.0;

    // window
    double t_lo = 0.0, t_hi = 0.0;

    // groups (one shared departure cost; the loader rejects differing phi)
    std::vector<std::string> names;
    std::vector<double> sizes;
    std::string phi_src;
    std::vector<std::string> psi_srcs;

    // solver knobs, defaulted to the library defaults
    int arrival_grid = 10000;
    int departure_grid = 0;
    double residual_tol = 1e-4;
    int max_iterations = 200;
    int multistarts = 8;
    unsigned seed = 20240816u;

    // oracle knobs
    int oracle_bins = 16;
    int oracle_starts = 3;
    int oracle_refine = 4;
    double oracle_w_lo = 0.0, oracle_w_hi = 0.0; // 0,0: derive from the plan
    double oracle_dt = 1e-3;                     // FV comparison step

    // check tolerances
    double check_support_tol = 5e-3;    // |dJ - C_i| on the support
    double check_off_tol = 1e-3;        // allowed dip below C_i off support
    double check_mass_tol = 1e-4;       // relative per-group mass error
    int check_samples = 500;

    FluxModel flux() const;
    GroupSpec groups() const;
    SolveOptions options(Exec ex) const;
};

// Parses and semantically validates a problem config. Throws ConfigError
// (or ParseError from the expression parser) with the offending field named.
ProblemConfig load_problem_config(const std::string& path);

// A junction instance: models, densities on both sides, and which rule to
// run. Buffer runs simulate the queue ODE for horizon t_end.
struct JunctionFileConfig {
    std::string model; // "lp", "priority", "stopsign", "buffer"
    JunctionConfig junction;
    std::vector<double> rho_in, rho_out;
    double t_end = 0.0; // buffer only; 0: a few hundred suggested steps
};

JunctionFileConfig load_junction_config(const std::string& path);

} // namespace roadopt
