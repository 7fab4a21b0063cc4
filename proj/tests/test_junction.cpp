#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>
#include <vector>

#include "grid_oracle.h"
#include "roadopt/errors.hpp"
#include "roadopt/fluxmodel.hpp"
#include "roadopt/junction.hpp"

using namespace roadopt;

namespace {

// v = 2 - rho: rho_max = 1, capacity 1
const FluxModel& wide() {
    static FluxModel m = build_flux_model("2 - rho", 2.0);
    return m;
}

// v = 1 - rho: rho_max = 0.5, capacity 0.25
const FluxModel& narrow() {
    static FluxModel m = build_flux_model("1 - rho", 1.0);
    return m;
}

JunctionConfig cross22(std::vector<double> c,
                       std::vector<std::vector<double>> theta,
                       double buffer = 0.0) {
    JunctionConfig cfg;
    cfg.in_models = {wide(), wide()};
    cfg.out_models = {wide(), wide()};
    cfg.priority = std::move(c);
    cfg.turning = std::move(theta);
    cfg.buffer_capacity = buffer;
    return cfg;
}

// random densities, priorities, and turning rows for property sweeps
JunctionConfig random_config(std::mt19937& rng, int m, int n) {
    std::uniform_real_distribution<double> uni(0.05, 1.0);
    JunctionConfig cfg;
    for (int i = 0; i < m; ++i)
        cfg.in_models.push_back(rng() % 2 ? wide() : narrow());
    for (int j = 0; j < n; ++j)
        cfg.out_models.push_back(rng() % 2 ? wide() : narrow());
    double csum = 0.0;
    for (int i = 0; i < m; ++i) {
        cfg.priority.push_back(uni(rng));
        csum += cfg.priority.back();
    }
    for (double& c : cfg.priority) c /= csum;
    // exact unit row sums: set the last entry to 1 - rest
    for (int i = 0; i < m; ++i) {
        std::vector<double> row(n);
        double rsum = 0.0;
        for (int j = 0; j + 1 < n; ++j) {
            row[j] = uni(rng) / n;
            rsum += row[j];
        }
        row[n - 1] = 1.0 - rsum;
        cfg.turning.push_back(row);
    }
    return cfg;
}

FluxBounds random_bounds(std::mt19937& rng, const JunctionConfig& cfg) {
    std::vector<double> rin, rout;
    for (const auto& m : cfg.in_models)
        rin.push_back(std::uniform_real_distribution<double>(
            0.0, m.rho_jam())(rng));
    for (const auto& m : cfg.out_models)
        rout.push_back(std::uniform_real_distribution<double>(
            0.0, m.rho_jam())(rng));
    return junction_bounds(cfg, rin, rout);
}

} // namespace

TEST_CASE("config validation: simplex identities and shapes") {
    JunctionConfig ok = cross22({0.5, 0.5}, {{0.5, 0.5}, {0.25, 0.75}});
    CHECK_NOTHROW(ok.validate());

    JunctionConfig bad = ok;
    bad.priority = {0.6, 0.6};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = ok;
    bad.turning[1] = {0.5, 0.4};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = ok;
    bad.turning[0] = {-0.1, 1.1};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = ok;
    bad.priority = {0.5};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("exit cap: flux while free, capacity once congested") {
    CHECK(max_exit_flux(wide(), 0.0) == doctest::Approx(0.0));
    CHECK(max_exit_flux(wide(), 0.5) == doctest::Approx(0.75)); // 0.5*(2-0.5)
    CHECK(max_exit_flux(wide(), 1.0) == doctest::Approx(1.0));
    CHECK(max_exit_flux(wide(), 1.5) == doctest::Approx(1.0)); // congested
    CHECK(max_exit_flux(narrow(), 0.9) == doctest::Approx(0.25));
    CHECK_THROWS_AS(max_exit_flux(wide(), -0.1), ConfigError);
    CHECK_THROWS_AS(max_exit_flux(wide(), 2.5), ConfigError);
}

TEST_CASE("entry cap: capacity while free, flux once congested") {
    CHECK(max_entry_flux(wide(), 0.0) == doctest::Approx(1.0));
    CHECK(max_entry_flux(wide(), 0.5) == doctest::Approx(1.0)); // free side
    CHECK(max_entry_flux(wide(), 1.5) == doctest::Approx(0.75)); // 1.5*(2-1.5)
    CHECK(max_entry_flux(wide(), 2.0) == doctest::Approx(0.0)); // jammed
    CHECK_THROWS_AS(max_entry_flux(narrow(), 1.00001), ConfigError);
}

TEST_CASE("admissible region membership is exact") {
    JunctionConfig cfg = cross22({0.5, 0.5}, {{0.5, 0.5}, {0.5, 0.5}});
    FluxBounds b{{0.8, 0.6}, {0.5, 0.9}};

    CHECK(admissible_region_contains(cfg, b, {0.0, 0.0}));
    // loads: j=0 gets 0.5*(f1+f2) = 0.7 > 0.5 -> reject at the caps
    CHECK(!admissible_region_contains(cfg, b, {0.8, 0.6}));
    CHECK(admissible_region_contains(cfg, b, {0.6, 0.4})); // load 0.5 exactly
    CHECK(!admissible_region_contains(cfg, b, {0.6, 0.4 + 2e-6}));
    CHECK(!admissible_region_contains(cfg, b, {-1e-9, 0.0}));
    CHECK(!admissible_region_contains(cfg, b, {0.8 + 1e-9, 0.0}));

    // slack outgoing caps: the box corner is admissible
    FluxBounds loose{{0.8, 0.6}, {2.0, 2.0}};
    CHECK(admissible_region_contains(cfg, loose, {0.8, 0.6}));
}

TEST_CASE("lp on a single in-out pair takes the tighter cap") {
    JunctionConfig cfg;
    cfg.in_models = {wide()};
    cfg.out_models = {wide()};
    cfg.priority = {1.0};
    cfg.turning = {{1.0}};

    LPResult r = solve_lp(cfg, FluxBounds{{0.9}, {0.4}});
    CHECK(r.f[0] == doctest::Approx(0.4).epsilon(1e-12));
    r = solve_lp(cfg, FluxBounds{{0.3}, {0.4}});
    CHECK(r.f[0] == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(!r.tie);
}

TEST_CASE("lp ties on a shared bottleneck are flagged and broken toward road 1") {
    // both roads pour into outgoing road 0 only
    JunctionConfig cfg = cross22({0.5, 0.5}, {{1.0, 0.0}, {1.0, 0.0}});
    FluxBounds b{{0.8, 0.6}, {0.5, 1.0}};
    LPResult r = solve_lp(cfg, b);
    CHECK(r.tie);
    CHECK(r.f[0] == doctest::Approx(0.5).epsilon(1e-9)); // lexicographic max
    CHECK(r.f[1] == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(r.objective == doctest::Approx(0.25).epsilon(1e-9));
    CHECK(admissible_region_contains(cfg, b, r.f));
}

TEST_CASE("lp matches the exhaustive grid on random 2x2 junctions") {
    std::mt19937 rng(20240816u);
    for (int trial = 0; trial < 10; ++trial) {
        JunctionConfig cfg = random_config(rng, 2, 2);
        FluxBounds b = random_bounds(rng, cfg);
        LPResult r = solve_lp(cfg, b);
        double csum = 1.0; // priorities are normalized
        double grid = grid_lp_max(cfg, b, 1e-4);
        CHECK(grid <= r.objective + 1e-9);
        CHECK(grid >= r.objective - csum * 1e-4 - 1e-9);
        CHECK(admissible_region_contains(cfg, b, r.f));
    }
}

TEST_CASE("lp matches the exhaustive grid on random 3x2 junctions") {
    std::mt19937 rng(907u);
    for (int trial = 0; trial < 3; ++trial) {
        JunctionConfig cfg = random_config(rng, 3, 2);
        FluxBounds b = random_bounds(rng, cfg);
        LPResult r = solve_lp(cfg, b);
        double grid = grid_lp_max(cfg, b, 1e-4);
        CHECK(grid <= r.objective + 1e-9);
        CHECK(grid >= r.objective - 1e-4 - 1e-9);
        CHECK(admissible_region_contains(cfg, b, r.f));
    }
}

TEST_CASE("equal priorities maximize the total junction throughput") {
    std::mt19937 rng(41u);
    for (int trial = 0; trial < 8; ++trial) {
        JunctionConfig cfg = random_config(rng, 2, 2);
        FluxBounds b = random_bounds(rng, cfg);
        JunctionConfig eq = cfg;
        eq.priority = {0.5, 0.5};
        double best = solve_lp(eq, b).objective * 2.0; // = max f1 + f2

        // no admissible point beats it: spot-check the other solvers' output
        std::vector<double> pc = solve_priority_curve(cfg, b);
        std::vector<double> ss = solve_stop_sign(cfg, b);
        CHECK(pc[0] + pc[1] <= best + 1e-9);
        CHECK(ss[0] + ss[1] <= best + 1e-9);
    }
}

TEST_CASE("priority curve: unconstrained junction sends every road at its cap") {
    JunctionConfig cfg = cross22({0.7, 0.3}, {{0.5, 0.5}, {0.5, 0.5}});
    FluxBounds b{{0.6, 0.5}, {2.0, 2.0}};
    std::vector<double> f = solve_priority_curve(cfg, b);
    CHECK(f[0] == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(f[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("priority curve: single road takes the tightest bound") {
    JunctionConfig cfg;
    cfg.in_models = {wide()};
    cfg.out_models = {wide(), narrow()};
    cfg.priority = {1.0};
    cfg.turning = {{0.8, 0.2}};
    // road caps: out 0 allows 0.5/0.8 = 0.625, out 1 allows 0.2/0.2 = 1.0
    std::vector<double> f =
        solve_priority_curve(cfg, FluxBounds{{0.9}, {0.5, 0.2}});
    CHECK(f[0] == doctest::Approx(0.625).epsilon(1e-9));
}

TEST_CASE("priority curve keeps the priority ratio while rationing") {
    // shared bottleneck: both roads squeeze into outgoing road 0
    JunctionConfig cfg = cross22({0.75, 0.25}, {{1.0, 0.0}, {1.0, 0.0}});
    FluxBounds b{{0.9, 0.9}, {0.4, 1.0}};
    std::vector<double> f = solve_priority_curve(cfg, b);
    CHECK(f[0] == doctest::Approx(0.3).epsilon(1e-9));
    CHECK(f[1] == doctest::Approx(0.1).epsilon(1e-9));
    CHECK(f[0] / f[1] == doctest::Approx(3.0).epsilon(1e-6));
}

TEST_CASE("priority curve output is admissible with a constraint active") {
    std::mt19937 rng(5150u);
    for (int trial = 0; trial < 12; ++trial) {
        JunctionConfig cfg = random_config(rng, 3, 3);
        FluxBounds b = random_bounds(rng, cfg);
        std::vector<double> f = solve_priority_curve(cfg, b);
        CHECK(admissible_region_contains(cfg, b, f));

        bool active = true; // all roads at cap counts
        for (int i = 0; i < 3; ++i)
            if (f[i] < b.in_max[i] - 1e-9) active = false;
        if (!active) {
            for (int j = 0; j < 3 && !active; ++j) {
                double load = 0.0;
                for (int i = 0; i < 3; ++i) load += f[i] * cfg.turning[i][j];
                if (load >= b.out_max[j] - 1e-9) active = true;
            }
        }
        CHECK(active);
    }
}

TEST_CASE("stop sign: road 1 first, road 2 only on leftovers") {
    JunctionConfig cfg = cross22({0.5, 0.5}, {{1.0, 0.0}, {1.0, 0.0}});

    // road 1 saturates the shared outgoing cap: road 2 waits
    std::vector<double> f = solve_stop_sign(cfg, FluxBounds{{0.9, 0.7}, {0.6, 1.0}});
    CHECK(f[0] == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(f[1] == doctest::Approx(0.0));

    // road 1 unconstrained: road 2 takes the remaining space
    f = solve_stop_sign(cfg, FluxBounds{{0.4, 0.7}, {0.6, 1.0}});
    CHECK(f[0] == doctest::Approx(0.4).epsilon(1e-12));
    CHECK(f[1] == doctest::Approx(0.2).epsilon(1e-9));

    JunctionConfig three;
    three.in_models = {wide(), wide(), wide()};
    three.out_models = {wide()};
    three.priority = {0.4, 0.3, 0.3};
    three.turning = {{1.0}, {1.0}, {1.0}};
    CHECK_THROWS_AS(solve_stop_sign(three, FluxBounds{{1, 1, 1}, {1}}),
                    ModelShapeError);
}

TEST_CASE("stop sign output is admissible on random junctions") {
    std::mt19937 rng(777u);
    for (int trial = 0; trial < 12; ++trial) {
        JunctionConfig cfg = random_config(rng, 2, 3);
        FluxBounds b = random_bounds(rng, cfg);
        std::vector<double> f = solve_stop_sign(cfg, b);
        CHECK(admissible_region_contains(cfg, b, f));
    }
}

TEST_CASE("buffer: light traffic passes through with empty queues") {
    JunctionConfig cfg = cross22({0.5, 0.5}, {{0.5, 0.5}, {0.5, 0.5}}, 10.0);
    FluxBounds b{{0.2, 0.1}, {1.0, 1.0}};
    BufferState st = buffer_step(cfg, b, {0.0, 0.0}, 1e-3);
    // admissions at the road caps (free space 10 >> caps), queues stay empty
    CHECK(st.f_in[0] == doctest::Approx(0.2));
    CHECK(st.f_in[1] == doctest::Approx(0.1));
    CHECK(st.f_out[0] == doctest::Approx(0.15)); // pass-through
    CHECK(st.f_out[1] == doctest::Approx(0.15));
    CHECK(st.q[0] == doctest::Approx(0.0));
    CHECK(st.q[1] == doctest::Approx(0.0));
}

TEST_CASE("buffer: a full intersection admits nobody") {
    JunctionConfig cfg = cross22({0.5, 0.5}, {{0.5, 0.5}, {0.5, 0.5}}, 1.0);
    FluxBounds b{{0.9, 0.9}, {0.3, 0.3}};
    BufferState st = buffer_step(cfg, b, {0.6, 0.4}, 1e-3);
    CHECK(st.f_in[0] == doctest::Approx(0.0));
    CHECK(st.f_in[1] == doctest::Approx(0.0));
    CHECK(st.f_out[0] == doctest::Approx(0.3)); // queues drain at the caps
    CHECK(st.f_out[1] == doctest::Approx(0.3));
    CHECK(st.q[0] == doctest::Approx(0.6 - 3e-4));
}

TEST_CASE("buffer invariants hold across random stepping") {
    std::mt19937 rng(2024u);
    for (int trial = 0; trial < 6; ++trial) {
        JunctionConfig cfg = random_config(rng, 2, 2);
        cfg.buffer_capacity = 0.05;
        FluxBounds b = random_bounds(rng, cfg);
        std::vector<double> rates = buffer_limit_rates(cfg, cfg.buffer_capacity);
        double dt = buffer_suggested_dt(cfg, b, rates);
        std::vector<double> q(2, 0.0);
        for (int step = 0; step < 400; ++step) {
            BufferState st = buffer_step(cfg, b, q, dt, rates);
            q = st.q;
            double qsum = 0.0;
            for (double v : q) {
                REQUIRE(v >= 0.0);
                qsum += v;
            }
            REQUIRE(qsum <= cfg.buffer_capacity * (1.0 + 1e-12));
        }
    }
}

TEST_CASE("small buffer steady state approaches the priority curve") {
    std::mt19937 rng(31337u);
    int checked = 0;
    for (int trial = 0; trial < 5; ++trial) {
        JunctionConfig cfg = random_config(rng, 2, 2);
        cfg.buffer_capacity = 1e-3;
        FluxBounds b = random_bounds(rng, cfg);
        std::vector<double> target = solve_priority_curve(cfg, b);

        std::vector<double> rates = buffer_limit_rates(cfg, cfg.buffer_capacity);
        double dt = buffer_suggested_dt(cfg, b, rates);
        std::vector<double> q(2, 0.0);
        BufferState st;
        int steps = static_cast<int>(std::lround(0.25 / dt));
        for (int step = 0; step < steps; ++step) {
            st = buffer_step(cfg, b, q, dt, rates);
            q = st.q;
        }
        for (int i = 0; i < 2; ++i)
            CHECK(std::fabs(st.f_in[i] - target[i]) <= 1e-2);
        ++checked;
    }
    CHECK(checked == 5);
}
