#pragma once

#include <string>
#include <vector>

#include "roadopt/costexpr.hpp"
#include "roadopt/errors.hpp"

namespace roadopt {

// Extended-real value for the Legendre transform. infinite() compares greater
// than every finite value, so argmin scans stay total without NaN poisoning.
struct ExtValue {
    double value = 0.0;
    bool finite = true;

    static ExtValue of(double v) { return {v, true}; }
    static ExtValue infinite() { return {0.0, false}; }
};

inline bool operator<(const ExtValue& a, const ExtValue& b) {
    if (!a.finite) return false;
    if (!b.finite) return true;
    return a.value < b.value;
}

// Concave road flux f(rho) = rho * v(rho) on [0, rho_jam], together with the
// partial inverse g of f on the increasing branch [0, rho_max], the linear
// extension of g to u < 0, the slope map gamma, and the Legendre transform
// g_star. Immutable after construction; safe for concurrent evaluation.
class FluxModel {
public:
    double rho_jam() const { return rho_jam_; }
    double rho_max() const { return rho_max_; }   // density maximizing f
    double capacity() const { return M_; }        // M = f(rho_max)
    double gp0() const { return gp0_; }           // g'(0+) = 1/v(0)
    double u_cap() const { return u_cap_; }       // M * (1 - 1e-9), see g()

    double v(double rho) const;
    double vp(double rho) const;   // dv/drho; analytic with difference fallback
    double f(double rho) const { return rho * v(rho); }
    double fp(double rho) const { return v(rho) + rho * vp(rho); }

    // Density with f(rho) = u on [0, rho_max] for u in [0, M]; gp0 * u for
    // u < 0. Evaluations are capped at u_cap (g' blows up at u = M).
    // Throws FluxExceedsCapacity for u > M. rho_hint warm-starts the Newton
    // solve when the caller evaluates along a smoothly varying sequence.
    double g(double u) const;
    double g(double u, double rho_hint) const;

    // g'(u) = 1 / f'(g(u)) for u in (0, u_cap]; gp0 for u <= 0.
    double gp(double u) const;

    // Unique u in [0, u_cap] with g'(u) = p. Throws SlopeBelowCharacteristic
    // for p < gp0; saturates at u_cap for very large p.
    double gamma(double p) const;

    // Legendre transform: sup_u (p*u - g(u)). Infinite for p < gp0, else
    // p * gamma(p) - g(gamma(p)).
    ExtValue g_star(double p) const;

private:
    friend FluxModel build_flux_model(costexpr::Expr velocity, double rho_jam);

    struct GammaPoint { double rho, u; };
    GammaPoint gamma_point(double p) const;

    costexpr::Expr v_;
    costexpr::Expr vp_;
    double rho_jam_ = 0, rho_max_ = 0, M_ = 0, gp0_ = 0, u_cap_ = 0;
    double rho_cap_ = 0; // g(u_cap)
};

// Validates the velocity law (v(0) > 0, strictly decreasing, v(rho_jam) = 0,
// f strictly concave on a sample grid) and locates rho_max and M by bracketed
// maximization. Throws InvalidVelocityLaw / NonConcaveFlux with the violating
// samples named in the message.
FluxModel build_flux_model(costexpr::Expr velocity, double rho_jam);
FluxModel build_flux_model(const std::string& velocity_src, double rho_jam);

// Read-only sample table of the slope map, built once and shared by scan
// kernels: aligned arrays (u_i, rho_i = g(u_i), p_i = g'(u_i), g*_i) over a
// uniform u grid on [0, u_cap]. The *_fast lookups interpolate linearly and
// match the exact maps to O(table spacing squared); use them to bracket, then
// polish with the exact FluxModel calls.
class LegendreView {
public:
    explicit LegendreView(const FluxModel& m, int samples = 4096);

    const FluxModel& model() const { return *m_; }
    int size() const { return static_cast<int>(u_.size()); }
    double u_at(int i) const { return u_[static_cast<std::size_t>(i)]; }
    double p_at(int i) const { return p_[static_cast<std::size_t>(i)]; }
    double rho_at(int i) const { return rho_[static_cast<std::size_t>(i)]; }
    double gstar_at(int i) const { return gstar_[static_cast<std::size_t>(i)]; }

    double rho_fast(double u) const;     // ~ g(u), u in [0, u_cap]
    double gamma_fast(double p) const;   // ~ gamma(p); throws below gp0
    double g_star_fast(double p) const;  // finite branch; throws below gp0

private:
    const FluxModel* m_;
    std::vector<double> u_, rho_, p_, gstar_;
};

} // namespace roadopt
