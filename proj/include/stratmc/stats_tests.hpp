#pragma once

// Goodness-of-fit helpers used by strata diagnostics and the test suites:
// chi-square test against given cell probabilities, one- and two-sample
// Kolmogorov-Smirnov tests, and Pearson correlation.

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "numerics.hpp"

namespace stratmc {

// Asymptotic Kolmogorov survival function Q(lambda).
inline double kolmogorov_q(double lambda) {
    if (lambda < 1e-8) return 1.0;
    double sum = 0.0;
    for (int k = 1; k <= 100; ++k) {
        double term = 2.0 * ((k % 2 == 1) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
        sum += term;
        if (std::fabs(term) < 1e-12) break;
    }
    return std::min(1.0, std::max(0.0, sum));
}

struct GofResult {
    double statistic;
    double p_value;
};

inline GofResult chi2_gof(const std::vector<long>& counts, const std::vector<double>& probs) {
    if (counts.size() != probs.size() || counts.empty())
        throw std::invalid_argument("chi2_gof: counts and probs must have equal nonzero size");
    long n = 0;
    for (long c : counts) n += c;
    double stat = 0.0;
    for (size_t i = 0; i < counts.size(); ++i) {
        double expected = probs[i] * n;
        double diff = counts[i] - expected;
        stat += diff * diff / expected;
    }
    int dof = static_cast<int>(counts.size()) - 1;
    double p = (dof >= 1) ? 1.0 - chi2_cdf(stat, dof) : 1.0;
    return {stat, p};
}

inline GofResult ks_one_sample(std::vector<double> sample,
                               const std::function<double(double)>& cdf) {
    std::sort(sample.begin(), sample.end());
    size_t n = sample.size();
    double d = 0.0;
    for (size_t i = 0; i < n; ++i) {
        double f = cdf(sample[i]);
        d = std::max(d, std::fabs(f - static_cast<double>(i) / n));
        d = std::max(d, std::fabs(static_cast<double>(i + 1) / n - f));
    }
    double sn = std::sqrt(static_cast<double>(n));
    double lambda = (sn + 0.12 + 0.11 / sn) * d;  // Stephens' correction
    return {d, kolmogorov_q(lambda)};
}

inline GofResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    size_t i = 0, j = 0;
    double d = 0.0;
    while (i < a.size() && j < b.size()) {
        double x = std::min(a[i], b[j]);
        while (i < a.size() && a[i] <= x) ++i;
        while (j < b.size() && b[j] <= x) ++j;
        double fa = static_cast<double>(i) / a.size();
        double fb = static_cast<double>(j) / b.size();
        d = std::max(d, std::fabs(fa - fb));
    }
    double ne = static_cast<double>(a.size()) * b.size() / (a.size() + b.size());
    double sn = std::sqrt(ne);
    double lambda = (sn + 0.12 + 0.11 / sn) * d;
    return {d, kolmogorov_q(lambda)};
}

inline double pearson_correlation(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2)
        throw std::invalid_argument("pearson_correlation: size mismatch");
    double mx = 0.0, my = 0.0;
    for (size_t i = 0; i < x.size(); ++i) { mx += x[i]; my += y[i]; }
    mx /= x.size();
    my /= y.size();
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    return sxy / std::sqrt(sxx * syy);
}

} // namespace stratmc
