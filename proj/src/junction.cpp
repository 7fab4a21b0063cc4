#include "roadopt/junction.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <vector>

#include "roadopt/errors.hpp"

namespace roadopt {

namespace {

std::string fmt(const char* f, double a, double b = 0.0) {
    char buf[160];
    std::snprintf(buf, sizeof buf, f, a, b);
    return buf;
}

// Scale all fluxes down until every outgoing bound holds (the factor is
// 1 - O(eps), only trimming rounding noise), then clamp into the box so the
// exact membership check passes.
std::vector<double> snap_into_region(const JunctionConfig& cfg,
                                     const FluxBounds& b,
                                     std::vector<double> f) {
    const int m = cfg.incoming(), n = cfg.outgoing();
    double lambda = 1.0;
    for (int j = 0; j < n; ++j) {
        double load = 0.0;
        for (int i = 0; i < m; ++i) load += f[i] * cfg.turning[i][j];
        if (load > b.out_max[j] && load > 0.0)
            lambda = std::min(lambda, b.out_max[j] / load);
    }
    for (int i = 0; i < m; ++i)
        f[i] = std::clamp(f[i] * lambda, 0.0, b.in_max[i]) + 0.0; // flush -0
    return f;
}

} // namespace

void JunctionConfig::validate() const {
    const int m = incoming(), n = outgoing();
    if (m < 1 || n < 1)
        throw ConfigError("junction needs at least one road on each side");
    if (static_cast<int>(priority.size()) != m)
        throw ConfigError("junction priority count does not match incoming roads");
    if (static_cast<int>(turning.size()) != m)
        throw ConfigError("turning matrix row count does not match incoming roads");

    double psum = 0.0;
    for (double c : priority) {
        if (!(c >= 0.0))
            throw ConfigError("junction priorities must be nonnegative");
        psum += c;
    }
    if (std::fabs(psum - 1.0) > 1e-12)
        throw ConfigError(fmt("junction priorities sum to %.15g, expected 1", psum));

    for (const auto& row : turning) {
        if (static_cast<int>(row.size()) != n)
            throw ConfigError("turning matrix row length does not match outgoing roads");
        double rsum = 0.0;
        for (double th : row) {
            if (!(th >= 0.0))
                throw ConfigError("turning fractions must be nonnegative");
            rsum += th;
        }
        if (std::fabs(rsum - 1.0) > 1e-12)
            throw ConfigError(fmt("turning row sums to %.15g, expected 1", rsum));
    }
    if (!(buffer_capacity >= 0.0))
        throw ConfigError("buffer capacity must be nonnegative");
}

double max_exit_flux(const FluxModel& m, double rho) {
    if (!(rho >= 0.0) || rho > m.rho_jam())
        throw ConfigError(fmt("density %.6g outside [0, %.6g]", rho, m.rho_jam()));
    return rho <= m.rho_max() ? m.f(rho) : m.capacity();
}

double max_entry_flux(const FluxModel& m, double rho) {
    if (!(rho >= 0.0) || rho > m.rho_jam())
        throw ConfigError(fmt("density %.6g outside [0, %.6g]", rho, m.rho_jam()));
    return rho < m.rho_max() ? m.capacity() : m.f(rho);
}

FluxBounds junction_bounds(const JunctionConfig& cfg,
                           const std::vector<double>& rho_in,
                           const std::vector<double>& rho_out) {
    cfg.validate();
    if (static_cast<int>(rho_in.size()) != cfg.incoming() ||
        static_cast<int>(rho_out.size()) != cfg.outgoing())
        throw ConfigError("density count does not match the junction shape");
    FluxBounds b;
    for (int i = 0; i < cfg.incoming(); ++i)
        b.in_max.push_back(max_exit_flux(cfg.in_models[i], rho_in[i]));
    for (int j = 0; j < cfg.outgoing(); ++j)
        b.out_max.push_back(max_entry_flux(cfg.out_models[j], rho_out[j]));
    return b;
}

bool admissible_region_contains(const JunctionConfig& cfg,
                                const FluxBounds& b,
                                const std::vector<double>& f) {
    const int m = cfg.incoming(), n = cfg.outgoing();
    if (static_cast<int>(f.size()) != m) return false;
    for (int i = 0; i < m; ++i)
        if (!(f[i] >= 0.0) || f[i] > b.in_max[i]) return false;
    for (int j = 0; j < n; ++j) {
        double load = 0.0;
        for (int i = 0; i < m; ++i) load += f[i] * cfg.turning[i][j];
        if (load > b.out_max[j]) return false;
    }
    return true;
}

LPResult solve_lp(const JunctionConfig& cfg, const FluxBounds& b) {
    cfg.validate();
    const int m = cfg.incoming(), n = cfg.outgoing();
    if (m > 4 || n > 4)
        throw ConfigError("vertex enumeration is limited to 4x4 junctions");

    // constraint rows a.x <= rhs: the box faces first, then the outgoing caps
    std::vector<std::vector<double>> A;
    std::vector<double> rhs;
    for (int i = 0; i < m; ++i) {
        std::vector<double> row(m, 0.0);
        row[i] = 1.0;
        A.push_back(row);
        rhs.push_back(b.in_max[i]);
        row[i] = -1.0;
        A.push_back(row);
        rhs.push_back(0.0);
    }
    for (int j = 0; j < n; ++j) {
        std::vector<double> row(m);
        for (int i = 0; i < m; ++i) row[i] = cfg.turning[i][j];
        A.push_back(row);
        rhs.push_back(b.out_max[j]);
    }
    const int rows = static_cast<int>(A.size());

    double scale = 1.0;
    for (double v : b.in_max) scale = std::max(scale, v);
    const double feas_tol = 1e-9 * scale;

    // enumerate all m-subsets of the constraints, solve, keep feasible points
    std::vector<std::vector<double>> verts;
    std::vector<int> pick(m);
    auto gauss_point = [&](const std::vector<int>& idx,
                           std::vector<double>& x) -> bool {
        double M[4][5];
        for (int r = 0; r < m; ++r) {
            for (int c = 0; c < m; ++c) M[r][c] = A[idx[r]][c];
            M[r][m] = rhs[idx[r]];
        }
        for (int c = 0; c < m; ++c) {
            int piv = c;
            for (int r = c + 1; r < m; ++r)
                if (std::fabs(M[r][c]) > std::fabs(M[piv][c])) piv = r;
            if (std::fabs(M[piv][c]) < 1e-12) return false;
            if (piv != c)
                for (int k = c; k <= m; ++k) std::swap(M[c][k], M[piv][k]);
            for (int r = 0; r < m; ++r) {
                if (r == c) continue;
                double t = M[r][c] / M[c][c];
                for (int k = c; k <= m; ++k) M[r][k] -= t * M[c][k];
            }
        }
        x.resize(m);
        for (int c = 0; c < m; ++c) x[c] = M[c][m] / M[c][c];
        return true;
    };
    auto feasible = [&](const std::vector<double>& x) {
        for (int r = 0; r < rows; ++r) {
            double ax = 0.0;
            for (int c = 0; c < m; ++c) ax += A[r][c] * x[c];
            if (ax > rhs[r] + feas_tol) return false;
        }
        return true;
    };
    auto enumerate = [&](auto&& self, int from, int depth) -> void {
        if (depth == m) {
            std::vector<double> x;
            if (gauss_point(pick, x) && feasible(x)) verts.push_back(x);
            return;
        }
        for (int r = from; r < rows; ++r) {
            pick[depth] = r;
            self(self, r + 1, depth + 1);
        }
    };
    enumerate(enumerate, 0, 0);

    LPResult out;
    double best = -1.0;
    for (const auto& v : verts) {
        double obj = 0.0;
        for (int i = 0; i < m; ++i) obj += cfg.priority[i] * v[i];
        if (obj > best) best = obj;
    }
    const double obj_tol = 1e-9 * (1.0 + std::fabs(best));
    const double pt_tol = 1e-7 * scale;
    for (const auto& v : verts) {
        double obj = 0.0;
        for (int i = 0; i < m; ++i) obj += cfg.priority[i] * v[i];
        if (obj < best - obj_tol) continue;
        if (out.f.empty()) {
            out.f = v;
            continue;
        }
        // lexicographically largest optimal vertex; any distinct one is a tie
        bool differs = false, greater = false;
        for (int i = 0; i < m && !greater && !differs; ++i) {
            if (v[i] > out.f[i] + pt_tol) greater = true;
            else if (v[i] < out.f[i] - pt_tol) differs = true;
        }
        if (greater) {
            out.f = v;
            out.tie = true;
        } else if (differs) {
            out.tie = true;
        }
    }
    out.f = snap_into_region(cfg, b, out.f);
    out.objective = 0.0;
    for (int i = 0; i < m; ++i) out.objective += cfg.priority[i] * out.f[i];
    return out;
}

std::vector<double> solve_priority_curve(const JunctionConfig& cfg,
                                         const FluxBounds& b) {
    cfg.validate();
    const int m = cfg.incoming(), n = cfg.outgoing();
    for (double c : cfg.priority)
        if (!(c > 0.0))
            throw ConfigError("the rationing curve needs strictly positive priorities");

    // saturation knees, ascending: above s = in_max/c the road holds its cap
    std::vector<double> knee(m);
    for (int i = 0; i < m; ++i) knee[i] = b.in_max[i] / cfg.priority[i];
    std::vector<int> ord(m);
    for (int i = 0; i < m; ++i) ord[i] = i;
    std::sort(ord.begin(), ord.end(),
              [&](int a, int c) { return knee[a] < knee[c]; });

    // tightest s on each outgoing constraint by walking the knee segments
    double sbar = -1.0; // < 0: nothing binds
    for (int j = 0; j < n; ++j) {
        double cap = b.out_max[j];
        double sat = 0.0; // load from roads already at their cap
        double slope = 0.0;
        for (int i = 0; i < m; ++i) slope += cfg.priority[i] * cfg.turning[i][j];
        double s_lo = 0.0, load_lo = 0.0;
        double sj = -1.0;
        for (int k = 0; k <= m; ++k) {
            double s_hi = k < m ? knee[ord[k]] : -1.0;
            if (k < m) {
                double load_hi = load_lo + slope * (s_hi - s_lo);
                if (load_hi >= cap - 1e-15 && slope > 0.0) {
                    sj = s_lo + (cap - load_lo) / slope;
                    break;
                }
                int i = ord[k];
                slope -= cfg.priority[i] * cfg.turning[i][j];
                sat += b.in_max[i] * cfg.turning[i][j];
                s_lo = s_hi;
                load_lo = load_hi;
            } else {
                // all knees passed: load saturates at sat unless slope remains
                if (slope > 0.0) {
                    sj = s_lo + (cap - load_lo) / slope; // always reached
                } // else constraint never binds
            }
        }
        if (sj >= 0.0 && (sbar < 0.0 || sj < sbar)) sbar = sj;
    }

    std::vector<double> f(m);
    for (int i = 0; i < m; ++i)
        f[i] = sbar < 0.0 ? b.in_max[i]
                          : std::min(cfg.priority[i] * sbar, b.in_max[i]);
    return snap_into_region(cfg, b, f);
}

std::vector<double> solve_stop_sign(const JunctionConfig& cfg,
                                    const FluxBounds& b) {
    cfg.validate();
    if (cfg.incoming() != 2)
        throw ModelShapeError("the stop-sign rule needs exactly two incoming roads");
    const int n = cfg.outgoing();

    // road 1 alone takes everything the outgoing side allows
    double f1 = b.in_max[0];
    for (int j = 0; j < n; ++j)
        if (cfg.turning[0][j] > 0.0)
            f1 = std::min(f1, b.out_max[j] / cfg.turning[0][j]);

    // road 2 moves only when road 1 is not limited by the junction at all
    double f2 = 0.0;
    if (f1 >= b.in_max[0] * (1.0 - 1e-12)) {
        f1 = b.in_max[0];
        f2 = b.in_max[1];
        for (int j = 0; j < n; ++j)
            if (cfg.turning[1][j] > 0.0)
                f2 = std::min(f2, (b.out_max[j] - f1 * cfg.turning[0][j]) /
                                      cfg.turning[1][j]);
        f2 = std::max(f2, 0.0);
    }
    return snap_into_region(cfg, b, {f1, f2});
}

BufferState buffer_step(const JunctionConfig& cfg, const FluxBounds& b,
                        const std::vector<double>& q, double dt,
                        const std::vector<double>& admit_rates) {
    cfg.validate();
    const int m = cfg.incoming(), n = cfg.outgoing();
    const double M = cfg.buffer_capacity;
    if (!(M > 0.0)) throw ConfigError("buffer model needs a positive capacity");
    if (!(dt > 0.0)) throw ConfigError("buffer step needs a positive dt");
    if (static_cast<int>(q.size()) != n)
        throw ConfigError("queue count does not match outgoing roads");
    double qsum = 0.0;
    for (double v : q) {
        if (!(v >= 0.0)) throw ConfigError("queues must be nonnegative");
        qsum += v;
    }
    if (qsum > M * (1.0 + 1e-12))
        throw ConfigError("queues exceed the buffer capacity");
    const std::vector<double>& c = admit_rates.empty() ? cfg.priority : admit_rates;
    if (static_cast<int>(c.size()) != m)
        throw ConfigError("admission rate count does not match incoming roads");

    // one Euler step at admission level lambda in [0, 1]
    auto advance = [&](double lambda, BufferState& st) -> double {
        st.q.assign(n, 0.0);
        st.f_in.assign(m, 0.0);
        st.f_out.assign(n, 0.0);
        double free = std::max(0.0, M - qsum);
        for (int i = 0; i < m; ++i)
            st.f_in[i] = lambda * std::min(b.in_max[i], c[i] * free);
        double total = 0.0;
        for (int j = 0; j < n; ++j) {
            double inflow = 0.0;
            for (int i = 0; i < m; ++i) inflow += st.f_in[i] * cfg.turning[i][j];
            double fj = q[j] > 0.0 ? b.out_max[j]
                                   : std::min(b.out_max[j], inflow);
            double qn = q[j] + dt * (inflow - fj);
            if (qn < 0.0) {
                // the queue drains mid-step: release exactly what was there
                fj = inflow + q[j] / dt;
                qn = 0.0;
            }
            st.q[j] = qn;
            st.f_out[j] = fj;
            total += qn;
        }
        return total;
    };

    BufferState st;
    double total = advance(1.0, st);
    if (total > M) {
        // Euler overshoot of the capacity: throttle admissions within the
        // step so the buffer lands exactly full (bisection on the factor)
        double lo = 0.0, hi = 1.0;
        for (int it = 0; it < 60; ++it) {
            double mid = 0.5 * (lo + hi);
            if (advance(mid, st) > M) hi = mid;
            else lo = mid;
        }
        advance(lo, st);
    }
    return st;
}

std::vector<double> buffer_limit_rates(const JunctionConfig& cfg,
                                       double M_buf) {
    cfg.validate();
    if (!(M_buf > 0.0)) throw ConfigError("buffer capacity must be positive");
    double s_cover = 0.0;
    for (int i = 0; i < cfg.incoming(); ++i) {
        if (!(cfg.priority[i] > 0.0))
            throw ConfigError("the small-buffer limit needs positive priorities");
        s_cover = std::max(s_cover,
                           2.0 * cfg.in_models[i].capacity() / cfg.priority[i]);
    }
    std::vector<double> rates(cfg.incoming());
    for (int i = 0; i < cfg.incoming(); ++i)
        rates[i] = cfg.priority[i] * s_cover / M_buf;
    return rates;
}

double buffer_suggested_dt(const JunctionConfig& cfg, const FluxBounds& b,
                           const std::vector<double>& admit_rates) {
    const double M = cfg.buffer_capacity;
    double csum = 0.0;
    for (double c : admit_rates) csum += c;
    double fmax = 1e-12;
    for (double v : b.in_max) fmax = std::max(fmax, v);
    for (double v : b.out_max) fmax = std::max(fmax, v);
    return M / (10.0 * std::max(1.0, csum * M) * fmax);
}

} // namespace roadopt
