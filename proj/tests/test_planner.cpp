#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <vector>

#include "roadopt/errors.hpp"
#include "roadopt/fluxmodel.hpp"
#include "roadopt/groups.hpp"
#include "roadopt/laxhopf.hpp"
#include "roadopt/planner.hpp"

using namespace roadopt;

namespace {

// v = 2 - rho: rho_max = 1, M = 1, free-flow pace 1/v(0) = 0.5.
const FluxModel& model() {
    static FluxModel m = build_flux_model("2 - rho", 2.0);
    return m;
}

const double kRoad = 10.0;      // L * gp0 = 5: free-flow travel time
const double kWinLo = -8.0, kWinHi = 6.0;

// Two rush-hour groups of equal size with arrival penalties blowing up at
// t = 4 and t = 7.6; departure cost is plain waiting time. Static because
// envelopes and candidates keep a pointer to the spec they were built from.
const GroupSpec& rush_spec() {
    static GroupSpec s = GroupSpec::parse("-t", {"early", "late"},
                                          {2.51, 2.51},
                                          {"exp(t - 4)", "exp(t - 7.6)"});
    return s;
}

// Shared full solve at default settings (the expensive fixture).
const Plan& rush_plan() {
    static Plan p = [] {
        SolveOptions o;
        o.t_lo = kWinLo;
        o.t_hi = kWinHi;
        return solve_plan(rush_spec(), model(), kRoad, o);
    }();
    return p;
}

const LaxSolution& rush_lax() {
    static LaxSolution sol(model(), rush_plan().cand.departures, kRoad);
    return sol;
}

// Single-group instance with a known fitted constant.
const GroupSpec& solo_spec() {
    static GroupSpec s = GroupSpec::parse("-t", {"solo"}, {1.0},
                                          {"exp(t - 4)"});
    return s;
}

const Plan& solo_plan() {
    static Plan p = [] {
        SolveOptions o;
        o.t_lo = -6.0;
        o.t_hi = 2.0;
        o.arrival_grid = 4000;
        o.multistarts = 2;
        return solve_plan(solo_spec(), model(), kRoad, o);
    }();
    return p;
}

// Reference (non-fitted) constants used by several checks.
Constants ref_constants() { return Constants{{5.18, 2.10}}; }

double switch_time(double c1, double c2) {
    // exp(T-4) - c1 = exp(T-7.6) - c2 on the branch crossing
    return 4.0 + std::log((c1 - c2) / (1.0 - std::exp(-3.6)));
}

} // namespace

TEST_CASE("constants validate entries") {
    Constants ok{{1.0, 2.0}};
    CHECK_NOTHROW(ok.validate());
    Constants none{{}};
    CHECK_THROWS_AS(none.validate(), ConfigError);
    Constants bad{{1.0, std::nan("")}};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("envelope takes the lower shifted arrival cost") {
    const GroupSpec& spec = rush_spec();
    Envelope env = psi_envelope(spec, ref_constants());

    // far left both arrival costs are tiny, so the bigger shift wins
    CHECK(env.value(0.0) ==
          doctest::Approx(std::exp(-4.0) - 5.18).epsilon(1e-12));
    CHECK(env.active(0.0) == 0);
    CHECK(env.active(5.0) == 0);
    CHECK(env.active(5.3) == 1);
    CHECK(env.deriv(5.0) == doctest::Approx(std::exp(1.0)).epsilon(1e-10));
    CHECK(env.deriv(5.3) == doctest::Approx(std::exp(-2.3)).epsilon(1e-10));
}

TEST_CASE("envelope crossing sits at the closed-form switch") {
    Envelope env = psi_envelope(rush_spec(), ref_constants());
    std::vector<double> xs = env.crossings(kWinLo, 12.0);
    REQUIRE(xs.size() == 1);
    CHECK(xs[0] == doctest::Approx(switch_time(5.18, 2.10)).epsilon(1e-9));
}

TEST_CASE("characteristic terminus: closed form and window behaviour") {
    Envelope env = psi_envelope(rush_spec(), ref_constants());

    // departure at t = 0 needs env(T) = 0, reached on the late branch
    double T = characteristic_terminus(env, 0.0, kWinLo, 12.0);
    CHECK(T == doctest::Approx(7.6 + std::log(2.10)).epsilon(1e-10));

    // increasing in the departure time
    double Tm = characteristic_terminus(env, -1.0, kWinLo, 12.0);
    double Tp = characteristic_terminus(env, 1.0, kWinLo, 12.0);
    CHECK(Tm < T);
    CHECK(T < Tp);

    // same root through the convenience overload
    CHECK(characteristic_terminus(rush_spec(), ref_constants(), 0.0, kWinLo,
                                  12.0) == doctest::Approx(T).epsilon(1e-12));

    // the level is not bracketed on a short window
    CHECK_THROWS_AS(characteristic_terminus(env, 0.0, kWinLo, 6.0),
                    NoRootInWindow);
}

TEST_CASE("constants far below feasibility give an empty candidate") {
    Candidate cand = build_candidate(rush_spec(), model(), kRoad,
                                     Constants{{-100.0, -100.0}}, kWinLo,
                                     kWinHi, 2000, Exec::serial);
    CHECK(cand.pieces.empty());
    CHECK(cand.departures.total_mass() == doctest::Approx(0.0));
    Partition part = arrival_partition(cand);
    CHECK(part.total == doctest::Approx(0.0));
}

TEST_CASE("candidate support and masses at the reference constants") {
    Candidate cand = build_candidate(rush_spec(), model(), kRoad,
                                     ref_constants(), kWinLo, kWinHi, 3000,
                                     Exec::serial);
    REQUIRE(!cand.pieces.empty());

    // one contiguous supported interval, zero flux at the refined edges
    CHECK(cand.pieces.size() == 1);
    CHECK(cand.pieces.front().u_a <= 1e-6);
    CHECK(cand.pieces.back().u_b <= 1e-6);
    CHECK(cand.arrival_flux(4.6) > 0.5);

    // masses of the two arrival sets (frozen from a converged run)
    Partition part = arrival_partition(cand);
    REQUIRE(part.kappa.size() == 2);
    CHECK(part.kappa[0] == doctest::Approx(2.486089492928).epsilon(1e-6));
    CHECK(part.kappa[1] == doctest::Approx(2.533893696687).epsilon(1e-6));
    CHECK(part.total == doctest::Approx(part.kappa[0] + part.kappa[1])
                            .epsilon(1e-12));

    // pieces ordered, single switch between the groups at the crossing
    REQUIRE(part.pieces.size() == 2);
    CHECK(part.pieces[0].group == 0);
    CHECK(part.pieces[1].group == 1);
    CHECK(part.pieces[0].T_b == doctest::Approx(part.pieces[1].T_a));
    CHECK(part.pieces[0].T_b ==
          doctest::Approx(switch_time(5.18, 2.10)).epsilon(1e-8));

    // interval view matches the pieces
    auto sets = part.sets();
    REQUIRE(sets.size() == 2);
    CHECK(sets[0].size() == 1);
    CHECK(sets[1].size() == 1);
    CHECK(sets[0][0].second == doctest::Approx(sets[1][0].first));
}

TEST_CASE("reference-constants plan cost is reproduced") {
    Candidate cand = build_candidate(rush_spec(), model(), kRoad,
                                     ref_constants(), kWinLo, kWinHi, 3000,
                                     Exec::serial);
    Partition part = arrival_partition(cand);
    Plan plan = backout_departures(cand, part, 0, Exec::serial);
    CHECK(plan.cost == doctest::Approx(9.710755715358005).epsilon(1e-6));
}

TEST_CASE("default start prices a free-flow arrival from the midpoint") {
    Constants c0 = default_start(rush_spec(), model(), kRoad, kWinLo, kWinHi);
    REQUIRE(c0.count() == 2);
    // midpoint -1, free-flow arrival at 4, departure cost phi(-1) = 1
    CHECK(c0.C[0] == doctest::Approx(1.0 + 1.0).epsilon(1e-12));
    CHECK(c0.C[1] == doctest::Approx(std::exp(-3.6) + 1.0).epsilon(1e-12));
}

TEST_CASE("single-group fit lands on the frozen constant") {
    const Plan& p = solo_plan();
    REQUIRE(p.C.count() == 1);
    CHECK(p.C.C[0] == doctest::Approx(3.422404075385203).epsilon(1e-6));
    CHECK(p.fit.residual <= 1e-4);
    CHECK(!p.fit.non_unique);
    CHECK(p.fit.iterations > 0);
    CHECK(!p.fit.log.empty());
    CHECK(p.fit.kappa[0] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("single-group plan: cost, support, and trajectory ends") {
    const Plan& p = solo_plan();
    CHECK(p.cost == doctest::Approx(2.815233005770873).epsilon(1e-6));

    REQUIRE(p.cand.pieces.size() == 1);
    const SupportPiece& sp = p.cand.pieces.front();
    CHECK(sp.t_a == doctest::Approx(-3.3245795052643543).epsilon(1e-6));
    CHECK(sp.t_b == doctest::Approx(0.3196290911232751).epsilon(1e-6));

    // the first car free-flows: departure = arrival - L * gp0
    REQUIRE(!p.eta_T.empty());
    CHECK(p.eta(sp.T_a) == doctest::Approx(sp.T_a - 5.0).epsilon(1e-6));
    CHECK(p.eta_t.front() == doctest::Approx(sp.t_a).epsilon(1e-6));
    CHECK(p.eta_t.back() == doctest::Approx(sp.t_b).epsilon(1e-6));

    // departure map strictly increasing, cars ahead of their characteristics
    for (std::size_t i = 1; i < p.eta_t.size(); ++i)
        CHECK(p.eta_t[i] >= p.eta_t[i - 1] - 1e-9);
    // cars ride ahead of the characteristic feet where flux is positive
    int kmid = (int)std::lround((0.5 * (sp.T_a + sp.T_b) - p.cand.T0) /
                                p.cand.dT);
    double Tmid = p.cand.T_node(kmid);
    REQUIRE(p.cand.exact_arrival_flux(Tmid) > 0.0);
    CHECK(p.eta(Tmid) > p.cand.foot[kmid] + 1e-6);

    // one group: a single full-fraction run covering all labels
    CHECK(p.fractions.run_theta.size() == 1);
    CHECK(p.fractions.at(0, 0.5) == doctest::Approx(1.0));
    CHECK_NOTHROW(p.validate({1.0}));
}

TEST_CASE("two-group solve reproduces the frozen fit") {
    const Plan& p = rush_plan();
    REQUIRE(p.C.count() == 2);
    CHECK(p.C.C[0] == doctest::Approx(5.198118421).epsilon(1e-5));
    CHECK(p.C.C[1] == doctest::Approx(2.067408375).epsilon(1e-5));
    CHECK(p.fit.kappa[0] == doctest::Approx(2.51).epsilon(1e-6));
    CHECK(p.fit.kappa[1] == doctest::Approx(2.51).epsilon(1e-6));
    CHECK(p.fit.residual <= 1e-4 * 2.51);
    CHECK(!p.fit.non_unique);
    CHECK_NOTHROW(p.validate({2.51, 2.51}));
    CHECK_THROWS_AS(p.validate({3.0, 2.0}), ConfigError);
}

TEST_CASE("two-group solve: support edges and switch are frozen") {
    const Plan& p = rush_plan();
    REQUIRE(p.cand.pieces.size() == 1);
    CHECK(p.cand.pieces.front().T_a ==
          doctest::Approx(-0.1828636594812969).epsilon(1e-6));
    CHECK(p.cand.pieces.back().T_b ==
          doctest::Approx(9.478901514475009).epsilon(1e-6));

    REQUIRE(p.part.pieces.size() == 2);
    CHECK(p.part.pieces[0].group == 0);
    CHECK(p.part.pieces[1].group == 1);
    CHECK(p.part.pieces[0].T_b ==
          doctest::Approx(switch_time(p.C.C[0], p.C.C[1])).epsilon(1e-8));
}

TEST_CASE("two-group plan cost is frozen and matches the profile quadrature") {
    const Plan& p = rush_plan();
    CHECK(p.cost == doctest::Approx(9.785040826043707).epsilon(1e-6));

    // pricing the same departure curve through the propagated profiles
    double J = total_cost(rush_spec(), rush_lax(), p.fractions, 4096,
                          Exec::serial);
    CHECK(std::fabs(J - p.cost) <= 1e-4);
}

TEST_CASE("departure sets: group order and free-flow outer edges") {
    const Plan& p = rush_plan();
    REQUIRE(p.departure_sets.size() == 2);
    REQUIRE(p.departure_sets[0].size() == 1);
    REQUIRE(p.departure_sets[1].size() == 1);

    auto a = p.departure_sets[0][0];
    auto b = p.departure_sets[1][0];
    CHECK(a.second <= b.first + 1e-9);          // early group departs first
    CHECK(a.second == doctest::Approx(b.first).epsilon(1e-6)); // contiguous
    CHECK(a.second == doctest::Approx(-0.974263).epsilon(1e-3));

    // outer edges are the support feet (free flow at zero flux)
    CHECK(a.first ==
          doctest::Approx(p.cand.pieces.front().T_a - 5.0).epsilon(1e-5));
    CHECK(b.second ==
          doctest::Approx(p.cand.pieces.back().T_b - 5.0).epsilon(1e-5));
}

TEST_CASE("marginal cost is flat at the constants on each support") {
    const Plan& p = rush_plan();
    const GroupSpec& spec = rush_spec();

    for (int i = 0; i < 2; ++i) {
        auto [lo, hi] = p.departure_sets[i][0];
        for (int k = 1; k <= 8; ++k) {
            double t = lo + (hi - lo) * k / 9.0;
            double dj = marginal_cost(spec, rush_lax(), p.fractions, i, t);
            CHECK(std::fabs(dj - p.C.C[i]) <= 5e-3);
        }
    }
}

TEST_CASE("marginal cost does not dip below the constants off support") {
    const Plan& p = rush_plan();
    const GroupSpec& spec = rush_spec();

    // before all departures, inside the other group's block, after the end
    const double off0[] = {-6.5, 2.0, 5.0};  // group 0 departs on [-5.18, -0.97]
    const double off1[] = {-6.5, -3.0, 5.0}; // group 1 departs on [-0.97, 4.48]
    for (double t : off0)
        CHECK(marginal_cost(spec, rush_lax(), p.fractions, 0, t) >=
              p.C.C[0] - 1e-3);
    for (double t : off1)
        CHECK(marginal_cost(spec, rush_lax(), p.fractions, 1, t) >=
              p.C.C[1] - 1e-3);
}

TEST_CASE("arrival labels equal departure labels along trajectories") {
    const Plan& p = rush_plan();
    const SupportPiece& sp = p.cand.pieces.front();
    for (int k = 1; k < 50; ++k) {
        double T = sp.T_a + (sp.T_b - sp.T_a) * k / 50.0;
        double w = p.cand.arrival_count(T);
        double U = p.cand.departures.value(p.eta(T));
        CHECK(std::fabs(U - w) <= 1e-5);
    }
}

TEST_CASE("backward characteristics through the plan are single points") {
    const Plan& p = rush_plan();
    const SupportPiece& sp = p.cand.pieces.front();
    double worst = 0.0;
    for (int k = 0; k <= 100; ++k) {
        double T = sp.T_a + (sp.T_b - sp.T_a) * k / 100.0;
        CharInterval ci = backward_char_interval(rush_lax(), T);
        worst = std::max(worst, ci.eta_plus - ci.eta_minus);
    }
    CHECK(worst <= p.cand.dT);
}

TEST_CASE("candidate point queries agree with the tabulation") {
    const Plan& p = rush_plan();
    const SupportPiece& sp = p.cand.pieces.front();

    for (int k = 1; k < 10; ++k) {
        double T = sp.T_a + (sp.T_b - sp.T_a) * k / 10.0;
        // at the arrival side the segment map reproduces the curve
        CHECK(std::fabs(p.cand.flux_at(T, kRoad) - p.cand.arrival_flux(T)) <=
              1e-6);
        // halfway down a straight characteristic the flux is unchanged
        int kn = (int)std::lround((T - p.cand.T0) / p.cand.dT);
        double Tk = p.cand.T_node(kn);
        double tmid = 0.5 * (Tk + p.cand.foot[kn]);
        CHECK(std::fabs(p.cand.flux_at(tmid, kRoad * 0.5) - p.cand.u[kn]) <=
              1e-3);
    }

    // cumulative arrivals: monotone, total equals the partition mass
    double prev = 0.0;
    for (int k = 0; k <= 40; ++k) {
        double T = sp.T_a + (sp.T_b - sp.T_a) * k / 40.0;
        double w = p.cand.arrival_count(T);
        CHECK(w >= prev - 1e-12);
        prev = w;
    }
    CHECK(prev == doctest::Approx(p.part.total).epsilon(1e-6));
}

TEST_CASE("swapping the groups swaps the fitted constants") {
    GroupSpec swapped =
        GroupSpec::parse("-t", {"late", "early"}, {2.51, 2.51},
                         {"exp(t - 7.6)", "exp(t - 4)"});
    SolveOptions o;
    o.t_lo = kWinLo;
    o.t_hi = kWinHi;
    Plan q = solve_plan(swapped, model(), kRoad, o);

    const Plan& p = rush_plan();
    CHECK(q.C.C[0] == doctest::Approx(p.C.C[1]).epsilon(1e-6));
    CHECK(q.C.C[1] == doctest::Approx(p.C.C[0]).epsilon(1e-6));
    CHECK(q.cost == doctest::Approx(p.cost).epsilon(1e-9));
}

TEST_CASE("fit failure after one iteration reports itself") {
    SolveOptions o;
    o.t_lo = kWinLo;
    o.t_hi = kWinHi;
    o.arrival_grid = 500;
    o.max_iterations = 1;
    o.multistarts = 1;
    Constants far{{20.0, 20.0}};
    std::vector<double> G{2.51, 2.51};
    CHECK_THROWS_AS(solve_constants(rush_spec(), model(), kRoad, G, far, o),
                    MaxIterations);
}
