#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>

namespace roadopt::num {

// Bisection on a sign change. flo/fhi are f(lo), f(hi); the caller supplies
// them so repeated shrinking brackets don't re-evaluate endpoints.
template <class F>
double bisect(F&& f, double lo, double hi, double flo, double fhi,
              double xtol = 1e-13, int max_iter = 200) {
    if (flo == 0.0) return lo;
    if (fhi == 0.0) return hi;
    if ((flo > 0) == (fhi > 0))
        throw std::invalid_argument("bisect: no sign change in bracket");
    for (int it = 0; it < max_iter && hi - lo > xtol; ++it) {
        double mid = 0.5 * (lo + hi);
        if (mid == lo || mid == hi) break; // double resolution exhausted
        double fm = f(mid);
        if (fm == 0.0) return mid;
        if ((fm > 0) == (flo > 0)) { lo = mid; flo = fm; }
        else                       { hi = mid; fhi = fm; }
    }
    return 0.5 * (lo + hi);
}

template <class F>
double bisect(F&& f, double lo, double hi, double xtol = 1e-13,
              int max_iter = 200) {
    return bisect(f, lo, hi, f(lo), f(hi), xtol, max_iter);
}

// Newton safeguarded by a bracket; falls back to bisection steps whenever
// the Newton update leaves [lo, hi] or stalls. f returns (value, derivative).
template <class FD>
double newton_bisect(FD&& fd, double x0, double lo, double hi,
                     double xtol = 1e-14, int max_iter = 100) {
    double x = std::min(std::max(x0, lo), hi);
    auto [flo, dlo] = fd(lo);
    (void)dlo;
    if (flo == 0.0) return lo;
    for (int it = 0; it < max_iter; ++it) {
        auto [fx, dx] = fd(x);
        if (fx == 0.0) return x;
        if ((fx > 0) == (flo > 0)) lo = x; else hi = x;
        double step = (dx != 0.0) ? fx / dx : std::numeric_limits<double>::infinity();
        double xn = x - step;
        if (!(xn > lo && xn < hi)) xn = 0.5 * (lo + hi);
        if (std::fabs(xn - x) <= xtol) return xn;
        x = xn;
    }
    return x;
}

// Golden-section minimization of a unimodal function on [a, b].
template <class F>
double golden_min(F&& f, double a, double b, double xtol = 1e-12,
                  int max_iter = 200) {
    constexpr double invphi = 0.6180339887498949;
    double x1 = b - invphi * (b - a);
    double x2 = a + invphi * (b - a);
    double f1 = f(x1), f2 = f(x2);
    for (int it = 0; it < max_iter && (b - a) > xtol; ++it) {
        if (f1 <= f2) {
            b = x2; x2 = x1; f2 = f1;
            x1 = b - invphi * (b - a); f1 = f(x1);
        } else {
            a = x1; x1 = x2; f1 = f2;
            x2 = a + invphi * (b - a); f2 = f(x2);
        }
    }
    return 0.5 * (a + b);
}

// Composite Simpson over [a, b] with n subintervals (n forced even).
template <class F>
double simpson(F&& f, double a, double b, int n) {
    if (b <= a) return 0.0;
    if (n % 2) ++n;
    if (n < 2) n = 2;
    const double h = (b - a) / n;
    double s = f(a) + f(b);
    for (int k = 1; k < n; ++k) s += f(a + k * h) * (k % 2 ? 4.0 : 2.0);
    return s * h / 3.0;
}

} // namespace roadopt::num
