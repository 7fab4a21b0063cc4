#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "roadopt/junction.hpp"

// Exhaustive multilevel grid maximization of sum c_i f_i over the admissible
// region, used as an independent check of the vertex-enumeration solver.
// Each level keeps every feasible grid point within sum(c)*h of the level's
// best and refines a box of step h/8 around each kept point. Rounding the
// true optimum down coordinatewise stays feasible (all turning coefficients
// are nonnegative) and loses at most sum(c)*h, so the optimal cell survives
// every cut and the final value is within sum(c)*h_min of the true maximum.
inline double grid_lp_max(const roadopt::JunctionConfig& cfg,
                          const roadopt::FluxBounds& b, double h_min = 1e-4) {
    using roadopt::admissible_region_contains;
    const int m = cfg.incoming();
    double csum = 0.0;
    for (double c : cfg.priority) csum += c;

    double span = 0.0;
    for (double v : b.in_max) span = std::max(span, v);
    if (span == 0.0) return 0.0;

    auto objective = [&](const std::vector<double>& f) {
        double o = 0.0;
        for (int i = 0; i < m; ++i) o += cfg.priority[i] * f[i];
        return o;
    };

    double h = span / 8.0;
    std::vector<std::vector<double>> kept{std::vector<double>(m, 0.0)};
    double best = 0.0;

    while (true) {
        // candidate points: boxes of half-width 8h (previous step) around
        // every kept point, sampled at step h
        std::vector<std::vector<double>> pts;
        std::vector<double> f(m);
        for (const auto& center : kept) {
            std::vector<int> lo(m), hi(m);
            for (int i = 0; i < m; ++i) {
                double a = std::max(0.0, center[i] - 8.0 * h);
                double c = std::min(b.in_max[i], center[i] + 8.0 * h);
                lo[i] = static_cast<int>(std::floor(a / h));
                hi[i] = static_cast<int>(std::ceil(c / h));
            }
            std::vector<int> ix(lo);
            while (true) {
                for (int i = 0; i < m; ++i)
                    f[i] = std::min(b.in_max[i], ix[i] * h);
                if (admissible_region_contains(cfg, b, f)) pts.push_back(f);
                int d = 0;
                while (d < m) {
                    if (++ix[d] <= hi[d]) break;
                    ix[d] = lo[d];
                    ++d;
                }
                if (d == m) break;
            }
        }

        best = 0.0;
        for (const auto& p : pts) best = std::max(best, objective(p));
        // double width: one step for the rounding argument, one for points
        // rejected by exact feasibility right on a constraint face
        double band = best - 2.0 * csum * h;
        kept.clear();
        for (const auto& p : pts)
            if (objective(p) >= band) kept.push_back(p);
        // dedupe on the grid so the next level's boxes do not explode
        std::sort(kept.begin(), kept.end());
        kept.erase(std::unique(kept.begin(), kept.end(),
                               [&](const auto& a, const auto& c) {
                                   for (int i = 0; i < m; ++i)
                                       if (std::fabs(a[i] - c[i]) > 0.5 * h)
                                           return false;
                                   return true;
                               }),
                   kept.end());

        if (h <= h_min) break;
        h = std::max(h_min, h / 8.0);
    }
    return best;
}
