#include "roadopt/fluxmodel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "roadopt/numerics.hpp"

namespace roadopt {

namespace {

std::string fmt(const char* pattern, double a, double b = 0, double c = 0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, pattern, a, b, c);
    return buf;
}

} // namespace

double FluxModel::v(double rho) const { return costexpr::eval(v_, rho); }

double FluxModel::vp(double rho) const {
    if (!vp_.empty()) {
        try {
            return costexpr::eval(vp_, rho);
        } catch (const EvalError&) {
            // fall through to the difference quotient (e.g. log-derivative
            // undefined exactly at a domain edge the law itself tolerates)
        }
    }
    const double h = 1e-6 * (1.0 + std::fabs(rho));
    return (costexpr::eval(v_, rho + h) - costexpr::eval(v_, rho - h)) / (2.0 * h);
}

double FluxModel::g(double u) const {
    double s = (M_ > 0) ? std::min(std::max(u / M_, 0.0), 1.0) : 0.0;
    return g(u, rho_max_ * (1.0 - std::sqrt(1.0 - s)));
}

double FluxModel::g(double u, double rho_hint) const {
    if (u > M_ + 1e-12 * std::max(1.0, M_))
        throw FluxExceedsCapacity(fmt("flux %.12g exceeds road capacity %.12g", u, M_));
    if (u <= 0.0) return gp0_ * u;
    if (u >= u_cap_) return rho_cap_;
    auto fd = [&](double rho) { return std::pair<double, double>(f(rho) - u, fp(rho)); };
    return num::newton_bisect(fd, rho_hint, 0.0, rho_max_, 1e-14 * (1.0 + rho_max_));
}

double FluxModel::gp(double u) const {
    if (u <= 0.0) return gp0_;
    double rho = g(std::min(u, u_cap_));
    return 1.0 / fp(rho);
}

FluxModel::GammaPoint FluxModel::gamma_point(double p) const {
    if (p < gp0_ * (1.0 - 1e-12))
        throw SlopeBelowCharacteristic(
            fmt("slope %.12g is below the free-flow characteristic slope %.12g", p, gp0_));
    if (p <= gp0_) return {0.0, 0.0};
    // g'(u) = p  <=>  f'(rho) * p = 1 on the increasing branch.
    auto h = [&](double rho) { return fp(rho) * p - 1.0; };
    double h_cap = h(rho_cap_);
    if (h_cap >= 0.0) return {rho_cap_, u_cap_}; // saturated: p beyond the cap
    double rho = num::bisect(h, 0.0, rho_cap_, h(0.0), h_cap, 1e-14 * (1.0 + rho_max_));
    return {rho, f(rho)};
}

double FluxModel::gamma(double p) const { return gamma_point(p).u; }

ExtValue FluxModel::g_star(double p) const {
    if (p < gp0_ * (1.0 - 1e-12)) return ExtValue::infinite();
    GammaPoint q = gamma_point(p);
    return ExtValue::of(p * q.u - q.rho); // g(q.u) = q.rho by construction
}

FluxModel build_flux_model(costexpr::Expr velocity, double rho_jam) {
    FluxModel m;
    m.v_ = std::move(velocity);
    m.vp_ = costexpr::derivative(m.v_);
    m.rho_jam_ = rho_jam;

    if (!(rho_jam > 0.0))
        throw InvalidVelocityLaw(fmt("rho_jam must be positive, got %.12g", rho_jam));
    const double v0 = m.v(0.0);
    if (!(v0 > 0.0))
        throw InvalidVelocityLaw(fmt("v(0) must be positive, got %.12g", v0));
    const double v_jam = m.v(rho_jam);
    if (std::fabs(v_jam) > 1e-9 * v0)
        throw InvalidVelocityLaw(
            fmt("v(rho_jam) must vanish: v(%.12g) = %.12g", rho_jam, v_jam));

    // Sampled shape checks: v strictly decreasing, f strictly concave.
    const int n = 512;
    const double h = rho_jam / n;
    std::vector<double> fs(n + 1);
    double v_prev = v0;
    for (int i = 0; i <= n; ++i) {
        double rho = i * h;
        double vi = m.v(rho);
        if (i > 0 && vi >= v_prev)
            throw InvalidVelocityLaw(
                fmt("velocity not strictly decreasing between rho = %.12g and %.12g",
                    rho - h, rho));
        v_prev = vi;
        fs[static_cast<std::size_t>(i)] = rho * vi;
    }
    for (int i = 1; i < n; ++i) {
        double d2 = fs[i - 1] - 2.0 * fs[i] + fs[i + 1];
        if (d2 >= 1e-13 * std::max(1.0, std::fabs(fs[i])))
            throw NonConcaveFlux(
                fmt("flux not concave on sample triple rho = (%.12g, %.12g, %.12g)",
                    (i - 1) * h, i * h, (i + 1) * h));
    }

    // f concave with f'(0) = v(0) > 0 and f'(rho_jam) < 0: the maximizer is
    // the unique zero of f'.
    auto fprime = [&](double rho) { return m.fp(rho); };
    m.rho_max_ = num::bisect(fprime, 0.0, rho_jam, 1e-14 * rho_jam);
    m.M_ = m.f(m.rho_max_);
    m.gp0_ = 1.0 / v0;
    m.u_cap_ = m.M_ * (1.0 - 1e-9);
    auto at_cap = [&](double rho) { return m.f(rho) - m.u_cap_; };
    m.rho_cap_ = num::bisect(at_cap, 0.0, m.rho_max_, 1e-15 * (1.0 + m.rho_max_));
    return m;
}

FluxModel build_flux_model(const std::string& velocity_src, double rho_jam) {
    return build_flux_model(costexpr::parse(velocity_src, "rho"), rho_jam);
}

LegendreView::LegendreView(const FluxModel& m, int samples) : m_(&m) {
    if (samples < 2) samples = 2;
    const std::size_t n = static_cast<std::size_t>(samples);
    u_.resize(n);
    rho_.resize(n);
    p_.resize(n);
    gstar_.resize(n);
    const double du = m.u_cap() / (samples - 1);
    double rho_prev = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double u = static_cast<double>(i) * du;
        double rho = (i == 0) ? 0.0 : m.g(u, rho_prev);
        u_[i] = u;
        rho_[i] = rho;
        p_[i] = 1.0 / m.fp(rho);
        gstar_[i] = p_[i] * u - rho;
        rho_prev = rho;
    }
    u_.back() = m.u_cap();
}

double LegendreView::rho_fast(double u) const {
    if (u <= 0.0) return m_->gp0() * u;
    const double du = u_[1] - u_[0];
    double s = u / du;
    auto i = static_cast<std::size_t>(s);
    if (i + 1 >= u_.size()) return rho_.back();
    double w = s - static_cast<double>(i);
    return rho_[i] + w * (rho_[i + 1] - rho_[i]);
}

double LegendreView::gamma_fast(double p) const {
    if (p < m_->gp0() * (1.0 - 1e-12))
        throw SlopeBelowCharacteristic(
            fmt("slope %.12g is below the free-flow characteristic slope %.12g",
                p, m_->gp0()));
    if (p >= p_.back()) return u_.back();
    auto it = std::upper_bound(p_.begin(), p_.end(), p);
    if (it == p_.begin()) return 0.0;
    auto i = static_cast<std::size_t>(it - p_.begin()) - 1;
    double w = (p - p_[i]) / (p_[i + 1] - p_[i]);
    return u_[i] + w * (u_[i + 1] - u_[i]);
}

double LegendreView::g_star_fast(double p) const {
    if (p < m_->gp0() * (1.0 - 1e-12))
        throw SlopeBelowCharacteristic(
            fmt("slope %.12g is below the free-flow characteristic slope %.12g",
                p, m_->gp0()));
    if (p >= p_.back()) // affine continuation with slope u_cap beyond the table
        return gstar_.back() + (p - p_.back()) * u_.back();
    auto it = std::upper_bound(p_.begin(), p_.end(), p);
    if (it == p_.begin()) return 0.0;
    auto i = static_cast<std::size_t>(it - p_.begin()) - 1;
    double w = (p - p_[i]) / (p_[i + 1] - p_[i]);
    return gstar_[i] + w * (gstar_[i + 1] - gstar_[i]);
}

} // namespace roadopt
