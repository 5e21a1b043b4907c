#pragma once

// Minimal dense helpers for the small (d <= 30) covariance work: Cholesky
// factorization, lower-triangular products and solves.

#include <cmath>
#include <stdexcept>
#include <vector>

namespace stratmc {

using Matrix = std::vector<std::vector<double>>;

// lower-triangular L with L L^T = A; throws if A is not positive definite
inline Matrix cholesky_lower(const Matrix& a) {
    size_t d = a.size();
    Matrix L(d, std::vector<double>(d, 0.0));
    for (size_t i = 0; i < d; ++i) {
        if (a[i].size() != d) throw std::domain_error("cholesky_lower: non-square input");
        for (size_t j = 0; j <= i; ++j) {
            double sum = a[i][j];
            for (size_t k = 0; k < j; ++k) sum -= L[i][k] * L[j][k];
            if (i == j) {
                if (sum <= 0.0)
                    throw std::domain_error("cholesky_lower: matrix is not positive definite");
                L[i][j] = std::sqrt(sum);
            } else {
                L[i][j] = sum / L[j][j];
            }
        }
    }
    return L;
}

inline std::vector<double> lower_mul(const Matrix& L, const std::vector<double>& v) {
    size_t d = L.size();
    std::vector<double> out(d, 0.0);
    for (size_t i = 0; i < d; ++i)
        for (size_t j = 0; j <= i; ++j) out[i] += L[i][j] * v[j];
    return out;
}

inline std::vector<double> lower_solve(const Matrix& L, const std::vector<double>& b) {
    size_t d = L.size();
    std::vector<double> y(d, 0.0);
    for (size_t i = 0; i < d; ++i) {
        double acc = b[i];
        for (size_t j = 0; j < i; ++j) acc -= L[i][j] * y[j];
        y[i] = acc / L[i][i];
    }
    return y;
}

} // namespace stratmc
