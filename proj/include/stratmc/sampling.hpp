#pragma once

// Primitive samplers on top of RngStream: iid standard normal vectors,
// uniform directions on the hypersphere, the spherical-coordinate chart,
// and acceptance-rejection sampling of the angular densities
// h_k(phi) proportional to sin^k(phi) on (0,pi), optionally restricted to a
// subinterval.

#include <cmath>
#include <stdexcept>
#include <vector>

#include "numerics.hpp"
#include "rng.hpp"

namespace stratmc {

inline std::vector<double> standard_normal_vector(int d, RngStream& rng) {
    if (d < 1) throw std::domain_error("standard_normal_vector: d must be >= 1");
    std::vector<double> z(d);
    for (auto& v : z) v = rng.normal();
    return z;
}

inline std::vector<double> sphere_uniform(int d, RngStream& rng) {
    if (d < 2) throw std::domain_error("sphere_uniform: d must be >= 2");
    for (;;) {
        std::vector<double> z = standard_normal_vector(d, rng);
        double n2 = 0.0;
        for (double v : z) n2 += v * v;
        if (n2 > 0.0) {
            double inv = 1.0 / std::sqrt(n2);
            for (auto& v : z) v *= inv;
            return z;
        }
    }
}

// Chart on S_{d-1}: x1 = cos phi1, x2 = sin phi1 cos phi2, ...,
// x_{d-1} = sin phi1 ... sin phi_{d-2} cos theta,
// x_d     = sin phi1 ... sin phi_{d-2} sin theta.
// For d = 2 only theta is used, giving (cos theta, sin theta).
inline std::vector<double> spherical_to_cartesian(double theta,
                                                  const std::vector<double>& phis) {
    int d = static_cast<int>(phis.size()) + 2;
    if (!(theta >= 0.0 && theta < 2.0 * kPi))
        throw std::domain_error("spherical_to_cartesian: theta must be in [0, 2*pi)");
    for (double p : phis)
        if (!(p >= 0.0 && p < kPi))
            throw std::domain_error("spherical_to_cartesian: polar angles must be in [0, pi)");

    std::vector<double> x(d);
    double sin_prod = 1.0;
    for (int k = 0; k < d - 2; ++k) {
        x[k] = sin_prod * std::cos(phis[k]);
        sin_prod *= std::sin(phis[k]);
    }
    x[d - 2] = sin_prod * std::cos(theta);
    x[d - 1] = sin_prod * std::sin(theta);
    return x;
}

// Recover (theta, phis) from a unit direction; total (poles resolved
// arbitrarily, they carry zero probability).
inline void cartesian_to_spherical(const std::vector<double>& u, double& theta,
                                   std::vector<double>& phis) {
    int d = static_cast<int>(u.size());
    phis.assign(d - 2, 0.0);
    double sin_prod = 1.0;
    for (int k = 0; k < d - 2; ++k) {
        double c = (sin_prod > 1e-300) ? u[k] / sin_prod : 0.0;
        if (c > 1.0) c = 1.0;
        if (c < -1.0) c = -1.0;
        phis[k] = std::acos(c);
        sin_prod *= std::sin(phis[k]);
    }
    theta = std::atan2(u[d - 1], u[d - 2]);
    if (theta < 0.0) theta += 2.0 * kPi;
    if (theta >= 2.0 * kPi) theta = 0.0;
}

struct ArResult {
    double value;
    long iterations;
};

class ArIterationCap : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Uniform proposal on the window, accept when U <= sin^k(T). Restricting the
// proposal to the window leaves the target law untouched and only improves
// the acceptance rate.
inline ArResult ar_sample_sin_power(int k, Interval window, RngStream& rng,
                                    long max_iterations = 1000000) {
    if (k < 1) throw std::domain_error("ar_sample_sin_power: k must be >= 1");
    if (!(window.lo >= 0.0 && window.hi <= kPi && window.lo < window.hi))
        throw std::domain_error("ar_sample_sin_power: window must be inside (0, pi)");

    for (long it = 1; it <= max_iterations; ++it) {
        double t = rng.uniform(window.lo, window.hi);
        double u = rng.next_open01();
        if (u <= std::pow(std::sin(t), static_cast<double>(k)))
            return {t, it};
    }
    throw ArIterationCap("ar_sample_sin_power: iteration cap reached (degenerate window)");
}

} // namespace stratmc
