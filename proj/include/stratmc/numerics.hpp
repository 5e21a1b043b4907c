#pragma once

// One-dimensional numerical kernel: normal and chi-square distribution
// functions, regularized incomplete gamma/beta, sin^k normalization
// constants, adaptive quadrature and bracketed root finding.

#include <cmath>
#include <cstdint>
#include <limits>
#include <functional>
#include <stdexcept>
#include <string>

namespace stratmc {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kLog2Pi = 1.8378770664093454836;
inline constexpr double kSqrt2 = 1.4142135623730950488;

struct Interval {
    double lo;
    double hi;

    double length() const { return hi - lo; }
    bool contains(double x) const { return x > lo && x <= hi; }  // (lo, hi]
};

// ---------------------------------------------------------------------------
// standard normal

inline double std_normal_pdf(double x) {
    return std::exp(-0.5 * x * x) / std::sqrt(2.0 * kPi);
}

inline double std_normal_cdf(double x) {
    return 0.5 * std::erfc(-x / kSqrt2);
}

// Acklam's rational approximation refined with Halley steps on the
// implemented cdf, so cdf and quantile are self-consistent.
inline double std_normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0))
        throw std::domain_error("std_normal_quantile: p must be in (0,1)");
    if (p == 0.5) return 0.0;

    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                               -2.759285104469687e+02, 1.383577518672690e+02,
                               -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                               -1.556989798598866e+02, 6.680131188771972e+01,
                               -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                               -2.400758277161838e+00, -2.549732539343734e+00,
                               4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                               2.445134137142996e+00, 3.754408661907416e+00};

    const double plow = 0.02425;
    double x;
    if (p < plow) {
        double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= 1.0 - plow) {
        double q = p - 0.5, r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        double q = std::sqrt(-2.0 * std::log1p(-p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    // Halley refinement; two rounds push the residual to ~1e-16 in p.
    for (int it = 0; it < 2; ++it) {
        double e = std_normal_cdf(x) - p;
        double u = e / std_normal_pdf(x);
        x -= u / (1.0 + 0.5 * x * u);
    }
    return x;
}

// ---------------------------------------------------------------------------
// regularized incomplete gamma (series / continued fraction split)

namespace detail {

inline double gamma_p_series(double a, double x) {
    double term = 1.0 / a;
    double sum = term;
    for (int n = 1; n < 500; ++n) {
        term *= x / (a + n);
        sum += term;
        if (std::fabs(term) < std::fabs(sum) * 1e-16) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

inline double gamma_q_contfrac(double a, double x) {
    // Lentz's method for the upper-tail continued fraction.
    const double tiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i < 500; ++i) {
        double an = -static_cast<double>(i) * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::fabs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        double delta = d * c;
        h *= delta;
        if (std::fabs(delta - 1.0) < 1e-16) break;
    }
    return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

} // namespace detail

inline double gamma_p(double a, double x) {
    if (a <= 0.0 || x < 0.0)
        throw std::domain_error("gamma_p: requires a > 0, x >= 0");
    if (x == 0.0) return 0.0;
    if (x < a + 1.0) return detail::gamma_p_series(a, x);
    return 1.0 - detail::gamma_q_contfrac(a, x);
}

inline double chi2_pdf(double x, int dof) {
    if (x <= 0.0) return 0.0;
    double a = 0.5 * dof;
    return std::exp((a - 1.0) * std::log(x) - 0.5 * x - a * std::log(2.0) - std::lgamma(a));
}

inline double chi2_cdf(double x, int dof) {
    if (dof < 1) throw std::domain_error("chi2_cdf: dof must be >= 1");
    if (x < 0.0) throw std::domain_error("chi2_cdf: x must be >= 0");
    return gamma_p(0.5 * dof, 0.5 * x);
}

inline double chi2_quantile(double p, int dof) {
    if (dof < 1) throw std::domain_error("chi2_quantile: dof must be >= 1");
    if (!(p > 0.0 && p < 1.0))
        throw std::domain_error("chi2_quantile: p must be in (0,1)");

    // Wilson-Hilferty start, then Newton with bisection safeguard.
    double nu = static_cast<double>(dof);
    double z = std_normal_quantile(p);
    double t = 1.0 - 2.0 / (9.0 * nu) + z * std::sqrt(2.0 / (9.0 * nu));
    double x = nu * t * t * t;
    if (!(x > 0.0)) x = 0.5 * std::exp((std::log(p) + std::lgamma(0.5 * nu)) / (0.5 * nu)) * 2.0;
    if (!(x > 0.0) || !std::isfinite(x)) x = nu;

    double lo = 0.0, hi = std::numeric_limits<double>::infinity();
    for (int it = 0; it < 200; ++it) {
        double f = chi2_cdf(x, dof) - p;
        if (f > 0.0) hi = x; else lo = x;
        if (std::fabs(f) < 1e-14) break;
        double dpdx = chi2_pdf(x, dof);
        double step = (dpdx > 0.0) ? f / dpdx : 0.0;
        double xn = x - step;
        if (!(xn > lo) || !(xn < hi) || step == 0.0)
            xn = std::isinf(hi) ? 2.0 * x : 0.5 * (lo + hi);
        if (std::fabs(xn - x) < 1e-13 * (1.0 + std::fabs(x))) { x = xn; break; }
        x = xn;
    }
    return x;
}

// ---------------------------------------------------------------------------
// regularized incomplete beta

namespace detail {

inline double betacf(double a, double b, double x) {
    const double tiny = 1e-300;
    double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0, d = 1.0 - qab * x / qap;
    if (std::fabs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= 500; ++m) {
        int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        double delta = d * c;
        h *= delta;
        if (std::fabs(delta - 1.0) < 1e-16) break;
    }
    return h;
}

} // namespace detail

inline double beta_inc(double a, double b, double x) {
    if (a <= 0.0 || b <= 0.0)
        throw std::domain_error("beta_inc: requires a, b > 0");
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    double lbeta = std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
    double front = std::exp(a * std::log(x) + b * std::log1p(-x) - lbeta);
    if (x < (a + 1.0) / (a + b + 2.0))
        return front * detail::betacf(a, b, x) / a;
    return 1.0 - front * detail::betacf(b, a, 1.0 - x) / b;
}

// c_k = Integral_0^pi sin^k = B(1/2, (k+1)/2)
inline double sin_power_norm(int k) {
    if (k < 1) throw std::domain_error("sin_power_norm: k must be >= 1");
    return std::exp(std::lgamma(0.5) + std::lgamma(0.5 * (k + 1)) - std::lgamma(0.5 * k + 1.0));
}

// ---------------------------------------------------------------------------
// quadrature

enum class QuadRule { AdaptiveSimpson, GaussLegendre };

struct QuadratureSpec {
    QuadRule rule = QuadRule::AdaptiveSimpson;
    double abs_tol = 1e-10;
    int max_subdivisions = 60;
};

class IntegrationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

template <typename F>
double simpson_adapt(const F& f, double a, double b, double fa, double fm, double fb,
                     double whole, double tol, int depth) {
    double m = 0.5 * (a + b);
    double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
    double flm = f(lm), frm = f(rm);
    double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    double delta = left + right - whole;
    if (std::fabs(delta) <= 15.0 * tol)
        return left + right + delta / 15.0;
    if (depth <= 0)
        throw IntegrationError("integrate: adaptive Simpson did not converge");
    return simpson_adapt(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
           simpson_adapt(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

// 10-point Gauss-Legendre nodes/weights on [-1,1] (positive half).
inline const double kGlNode[5] = {0.1488743389816312, 0.4333953941292472,
                                  0.6794095682990244, 0.8650633666889845,
                                  0.9739065285171717};
inline const double kGlWeight[5] = {0.2955242247147529, 0.2692667193099963,
                                    0.2190863625159821, 0.1494513491505806,
                                    0.0666713443086881};

template <typename F>
double gauss10(const F& f, double a, double b) {
    double c = 0.5 * (a + b), h = 0.5 * (b - a);
    double s = 0.0;
    for (int i = 0; i < 5; ++i)
        s += kGlWeight[i] * (f(c - h * kGlNode[i]) + f(c + h * kGlNode[i]));
    return s * h;
}

} // namespace detail

template <typename F>
double integrate(const F& f, double a, double b, const QuadratureSpec& spec = {}) {
    if (!(a <= b) || !std::isfinite(a) || !std::isfinite(b))
        throw std::domain_error("integrate: requires finite a <= b");
    if (spec.abs_tol <= 0.0 || spec.max_subdivisions < 1)
        throw std::domain_error("integrate: invalid quadrature spec");
    if (a == b) return 0.0;

    if (spec.rule == QuadRule::AdaptiveSimpson) {
        double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
        double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        return detail::simpson_adapt(f, a, b, fa, fm, fb, whole, spec.abs_tol,
                                     spec.max_subdivisions);
    }
    // Composite Gauss-Legendre, doubling the panel count until stable.
    double prev = detail::gauss10(f, a, b);
    long panels = 2;
    for (int level = 1; level <= spec.max_subdivisions; ++level) {
        double s = 0.0, h = (b - a) / static_cast<double>(panels);
        for (long i = 0; i < panels; ++i)
            s += detail::gauss10(f, a + i * h, a + (i + 1) * h);
        if (std::fabs(s - prev) <= spec.abs_tol) return s;
        prev = s;
        panels *= 2;
    }
    throw IntegrationError("integrate: Gauss-Legendre did not converge");
}

// ---------------------------------------------------------------------------
// root finding

namespace detail {

// Touching-root fallback: |g| is unimodal when g only grazes zero, so a grid
// scan plus ternary search locates the graze point.
template <typename G>
double find_touching_root(const G& g, double lo, double hi, double tol) {
    const int grid = 128;
    double best_x = lo, best = std::fabs(g(lo));
    for (int i = 1; i <= grid; ++i) {
        double x = lo + (hi - lo) * i / grid;
        double v = std::fabs(g(x));
        if (v < best) { best = v; best_x = x; }
    }
    double h = (hi - lo) / grid;
    double a = std::max(lo, best_x - h), b = std::min(hi, best_x + h);
    while (b - a > tol) {
        double m1 = a + (b - a) / 3.0, m2 = b - (b - a) / 3.0;
        if (std::fabs(g(m1)) < std::fabs(g(m2))) b = m2; else a = m1;
    }
    double x = 0.5 * (a + b);
    if (std::fabs(g(x)) > tol)
        throw std::invalid_argument("find_root_monotone: g(lo) and g(hi) have the same sign");
    return x;
}

} // namespace detail

template <typename G>
double find_root_monotone(const G& g, double lo, double hi, double tol) {
    if (!(lo <= hi)) throw std::invalid_argument("find_root_monotone: lo > hi");
    if (tol <= 0.0) throw std::invalid_argument("find_root_monotone: tol must be > 0");
    double flo = g(lo), fhi = g(hi);
    if (flo == 0.0) return lo;
    if (fhi == 0.0) return hi;
    if (flo * fhi > 0.0)
        return detail::find_touching_root(g, lo, hi, tol);

    // Bisection with an Illinois-style secant accelerant.
    double a = lo, b = hi, fa = flo, fb = fhi;
    for (int it = 0; it < 200; ++it) {
        double m;
        if (std::isfinite(fa) && std::isfinite(fb) && fb != fa) {
            m = b - fb * (b - a) / (fb - fa);
            if (!(m > a && m < b)) m = 0.5 * (a + b);
        } else {
            m = 0.5 * (a + b);
        }
        double fm = g(m);
        if (std::fabs(fm) <= tol || (b - a) <= tol)
            return m;
        if (fa * fm <= 0.0) {
            b = m; fb = fm;
        } else {
            a = m; fa = fm;
        }
        // force occasional bisection so the bracket provably shrinks
        if (it % 2 == 1) {
            double mid = 0.5 * (a + b);
            double fmid = g(mid);
            if (std::fabs(fmid) <= tol || (b - a) <= tol) return mid;
            if (fa * fmid <= 0.0) { b = mid; fb = fmid; }
            else { a = mid; fa = fmid; }
        }
    }
    return 0.5 * (a + b);
}

} // namespace stratmc
