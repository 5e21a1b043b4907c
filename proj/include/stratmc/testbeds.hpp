#pragma once

// Synthetic example distributions with exact samplers, closed-form (or
// quadrature) oracles for E f(X), exact Gaussian-to-data transports where a
// Rosenblatt construction is available, the target-function catalogue, and
// 2-column CSV ingestion.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "linalg.hpp"
#include "numerics.hpp"
#include "rng.hpp"
#include "transport.hpp"

namespace stratmc {

// ---------------------------------------------------------------------------
// target functions

struct TargetFunction {
    std::string name;
    int arity = 0;  // 0 = any dimension
    std::function<double(const std::vector<double>&)> fn;

    double operator()(const std::vector<double>& x) const { return fn(x); }
};

inline double evaluate_target(const TargetFunction& f, const std::vector<double>& x) {
    if (f.arity > 0 && static_cast<int>(x.size()) != f.arity)
        throw std::invalid_argument("evaluate_target: arity mismatch for " + f.name);
    return f.fn(x);
}

namespace detail {

inline bool all_above(const std::vector<double>& x, double t) {
    for (double v : x)
        if (!(v > t)) return false;
    return true;
}

inline bool all_at_most(const std::vector<double>& x, double t) {
    for (double v : x)
        if (!(v <= t)) return false;
    return true;
}

inline double coord_product(const std::vector<double>& x) {
    double p = 1.0;
    for (double v : x) p *= v;
    return p;
}

} // namespace detail

// Names: jplus_<t>, jminus_<t>, h1..h3, rho1..rho3, g1..g6.
inline TargetFunction parse_target_function(const std::string& name) {
    auto starts = [&](const char* p) { return name.rfind(p, 0) == 0; };
    if (starts("jplus_") || starts("jminus_")) {
        bool plus = starts("jplus_");
        std::string num = name.substr(plus ? 6 : 7);
        size_t used = 0;
        double t = std::stod(num, &used);
        if (used != num.size())
            throw std::invalid_argument("bad threshold in target function " + name);
        if (plus)
            return {name, 0, [t](const std::vector<double>& x) {
                        return detail::all_above(x, t) ? 1.0 : 0.0;
                    }};
        return {name, 0, [t](const std::vector<double>& x) {
                    return detail::all_at_most(x, t) ? 1.0 : 0.0;
                }};
    }
    // the h's guard their log/ratio singularities behind the indicator: every
    // coordinate exceeds 1, so the product exceeds 1 strictly
    if (name == "h1")
        return {name, 0, [](const std::vector<double>& x) {
                    if (!detail::all_above(x, 1.0)) return 0.0;
                    return 1.0 / std::log(detail::coord_product(x));
                }};
    if (name == "h2")
        return {name, 0, [](const std::vector<double>& x) {
                    if (!detail::all_above(x, 1.0)) return 0.0;
                    return std::sin(detail::coord_product(x));
                }};
    if (name == "h3")
        return {name, 0, [](const std::vector<double>& x) {
                    if (!detail::all_above(x, 1.0)) return 0.0;
                    return 1.0 / detail::coord_product(x);
                }};
    if (name == "rho1")
        return {name, 1, [](const std::vector<double>& x) { return std::sin(std::exp(x[0])); }};
    if (name == "rho2")
        return {name, 1,
                [](const std::vector<double>& x) { return std::log1p(std::fabs(x[0])); }};
    if (name == "rho3")
        return {name, 1,
                [](const std::vector<double>& x) { return 1.0 / std::log1p(std::fabs(x[0])); }};
    if (name == "g1")
        return {name, 2, [](const std::vector<double>& x) {
                    return std::max(x[0], x[1]) > 0.01 ? 1.0 : 0.0;
                }};
    if (name == "g2")
        return {name, 2,
                [](const std::vector<double>& x) { return x[1] / (1.0 + x[0] * x[0]); }};
    if (name == "g3")
        return {name, 2,
                [](const std::vector<double>& x) { return std::fabs(x[0] * x[1]); }};
    if (name == "g4")
        return {name, 2, [](const std::vector<double>& x) {
                    return std::fabs(std::cos(std::exp(x[0] * x[1])));
                }};
    if (name == "g5")
        return {name, 2, [](const std::vector<double>& x) { return std::log(x[0] + x[1]); }};
    if (name == "g6")
        return {name, 2, [](const std::vector<double>& x) {
                    return 1.0 / std::fabs(std::log(std::fabs(x[0] + x[1])));
                }};
    throw std::invalid_argument("unknown target function: " + name);
}

// ---------------------------------------------------------------------------
// scalar draw helpers

namespace detail {

inline double exp_draw(double scale, RngStream& rng) {
    return -scale * std::log(rng.next_open01());
}

// Marsaglia-Tsang; exact for any shape > 0
inline double gamma_draw(double shape, double scale, RngStream& rng) {
    if (shape < 1.0) {
        double u = rng.next_open01();
        return gamma_draw(shape + 1.0, scale, rng) * std::pow(u, 1.0 / shape);
    }
    double dd = shape - 1.0 / 3.0;
    double c = 1.0 / std::sqrt(9.0 * dd);
    for (;;) {
        double x = rng.normal();
        double v = 1.0 + c * x;
        if (v <= 0.0) continue;
        v = v * v * v;
        double u = rng.next_open01();
        if (u < 1.0 - 0.0331 * x * x * x * x) return scale * dd * v;
        if (std::log(u) < 0.5 * x * x + dd * (1.0 - v + std::log(v))) return scale * dd * v;
    }
}

inline double beta_draw(double a, double b, RngStream& rng) {
    double x = gamma_draw(a, 1.0, rng);
    double y = gamma_draw(b, 1.0, rng);
    return x / (x + y);
}

} // namespace detail

// ---------------------------------------------------------------------------
// bivariate exponential/Pareto testbed: density x1*exp(-x1*(x2+1)) on
// the positive quadrant; X1 ~ Exp(1), X2 | X1 ~ Exp(rate X1)

inline std::vector<double> example1_sampler(RngStream& rng) {
    double x1 = detail::exp_draw(1.0, rng);
    double x2 = -std::log(rng.next_open01()) / x1;
    return {x1, x2};
}

class Example1Map final : public TransportMap {
public:
    int dim() const override { return 2; }
    std::string kind() const override { return "exact:example1"; }

    std::vector<double> forward(const std::vector<double>& z) const override {
        double x1 = -std::log(std_normal_cdf(-z[0]));
        double x2 = -std::log(std_normal_cdf(-z[1])) / x1;
        return {x1, x2};
    }

    std::vector<double> inverse(const std::vector<double>& x) const override {
        return {-std_normal_quantile(std::exp(-x[0])),
                -std_normal_quantile(std::exp(-x[0] * x[1]))};
    }

    double log_prob(const std::vector<double>& x) const override {
        if (x[0] <= 0.0 || x[1] < 0.0) return -std::numeric_limits<double>::infinity();
        return std::log(x[0]) - x[0] * (x[1] + 1.0);
    }
};

// ---------------------------------------------------------------------------
// univariate mixture testbed: U(0.2,0.4), N(0.6, var 0.0046), Beta(7,1.1)
// with weights 1/2, 1/4, 1/4

namespace detail {

inline constexpr double kMixNormalSd = 0.0678232998312527;  // sqrt(0.0046)

inline double mixtureA1_cdf(double x) {
    double uniform_part = std::clamp((x - 0.2) / 0.2, 0.0, 1.0);
    double normal_part = std_normal_cdf((x - 0.6) / kMixNormalSd);
    double beta_part = (x <= 0.0) ? 0.0 : (x >= 1.0 ? 1.0 : beta_inc(7.0, 1.1, x));
    return 0.5 * uniform_part + 0.25 * normal_part + 0.25 * beta_part;
}

inline double mixtureA1_pdf(double x) {
    double uniform_part = (x > 0.2 && x <= 0.4) ? 5.0 : 0.0;
    double zn = (x - 0.6) / kMixNormalSd;
    double normal_part = std_normal_pdf(zn) / kMixNormalSd;
    double beta_part = 0.0;
    if (x > 0.0 && x < 1.0) {
        double lb = std::lgamma(7.0) + std::lgamma(1.1) - std::lgamma(8.1);
        beta_part = std::exp(6.0 * std::log(x) + 0.1 * std::log1p(-x) - lb);
    }
    return 0.5 * uniform_part + 0.25 * normal_part + 0.25 * beta_part;
}

} // namespace detail

inline double exampleA1_sampler_scalar(RngStream& rng) {
    double u = rng.next_open01();
    if (u < 0.5) return rng.uniform(0.2, 0.4);
    if (u < 0.75) return 0.6 + detail::kMixNormalSd * rng.normal();
    return detail::beta_draw(7.0, 1.1, rng);
}

inline std::vector<double> exampleA1_sampler(RngStream& rng) {
    return {exampleA1_sampler_scalar(rng)};
}

class ExampleA1Map final : public TransportMap {
public:
    int dim() const override { return 1; }
    std::string kind() const override { return "exact:exampleA1"; }

    std::vector<double> forward(const std::vector<double>& z) const override {
        double p = std_normal_cdf(z[0]);
        // mixture quantile by bracketed root finding; support is [0,1] plus
        // thin normal tails around 0.6
        double x = find_root_monotone(
            [&](double t) { return detail::mixtureA1_cdf(t) - p; }, -0.5, 1.5, 1e-13);
        return {x};
    }

    std::vector<double> inverse(const std::vector<double>& x) const override {
        double p = detail::mixtureA1_cdf(x[0]);
        p = std::clamp(p, 1e-300, 1.0 - 1e-16);
        return {std_normal_quantile(p)};
    }

    double log_prob(const std::vector<double>& x) const override {
        return std::log(detail::mixtureA1_pdf(x[0]));
    }
};

// ---------------------------------------------------------------------------
// multivariate Student-t testbed (sampler only; no Rosenblatt transport)

struct StudentTSpec {
    int d;
    double nu;
    std::vector<double> mu;
    Matrix sigma;
};

inline StudentTSpec student_t_spec(int d, double nu = 5.0) {
    StudentTSpec s{d, nu, std::vector<double>(d, 0.0),
                   Matrix(d, std::vector<double>(d, 0.2))};
    for (int i = 0; i < d; ++i) s.sigma[i][i] = 1.0;
    return s;
}

inline std::vector<double> student_t_sampler(const StudentTSpec& spec, const Matrix& chol,
                                             RngStream& rng) {
    std::vector<double> z = standard_normal_vector(spec.d, rng);
    double w = 0.0;
    for (int i = 0; i < static_cast<int>(spec.nu); ++i) {
        double g = rng.normal();
        w += g * g;
    }
    double scale = std::sqrt(spec.nu / w);
    std::vector<double> x = lower_mul(chol, z);
    for (int i = 0; i < spec.d; ++i) x[i] = spec.mu[i] + scale * x[i];
    return x;
}

// ---------------------------------------------------------------------------
// 30-dimensional synthetic testbed: independent normals, exponentials and
// gammas plus two correlated 5-blocks

namespace detail {

struct Synth30Layout {
    std::vector<double> mu1{-1.0, 1.0, 2.0, 1.0, 1.0};
    std::vector<double> mu2{1.0, -0.5, 0.0, 1.2, -0.8};
    Matrix sigma1{{55, 8, 17, 19, 23},
                  {8, 8, 8, 9, 11},
                  {17, 8, 13, 15, 20},
                  {19, 9, 15, 23, 24},
                  {23, 11, 20, 24, 32}};
    Matrix sigma2{{1.0, 0.8, 0.6, 0.4, -0.3},
                  {0.8, 2.0, 1.0, 0.7, -0.5},
                  {0.6, 1.0, 1.5, 0.9, -0.4},
                  {0.4, 0.7, 0.9, 1.2, -0.2},
                  {-0.3, -0.5, -0.4, -0.2, 1.0}};
    std::vector<double> normal_sd{1.0, 1.2, 1.4, 1.6};
    std::vector<double> exp_scale{0.4, 0.5, 0.6, 0.7};
    std::vector<double> gamma_scale{1.6, 1.8};
    Matrix chol1, chol2;

    Synth30Layout() {
        chol1 = cholesky_lower(sigma1);
        chol2 = cholesky_lower(sigma2);
    }

    static const Synth30Layout& instance() {
        static const Synth30Layout layout;
        return layout;
    }
};

} // namespace detail

inline std::vector<double> synth30_sampler(RngStream& rng) {
    const auto& lay = detail::Synth30Layout::instance();
    std::vector<double> x(30);
    for (int half = 0; half < 2; ++half) {
        int base = half * 15;
        const auto& mu = half ? lay.mu2 : lay.mu1;
        const auto& L = half ? lay.chol2 : lay.chol1;
        std::vector<double> z = standard_normal_vector(5, rng);
        std::vector<double> b = lower_mul(L, z);
        for (int i = 0; i < 5; ++i) x[base + i] = mu[i] + b[i];
        for (int i = 0; i < 4; ++i) x[base + 5 + i] = lay.normal_sd[i] * rng.normal();
        for (int i = 0; i < 4; ++i) x[base + 9 + i] = detail::exp_draw(lay.exp_scale[i], rng);
        for (int i = 0; i < 2; ++i) {
            double s = lay.gamma_scale[i];
            x[base + 13 + i] = detail::exp_draw(s, rng) + detail::exp_draw(s, rng);
        }
    }
    return x;
}

class Synth30Map final : public TransportMap {
public:
    int dim() const override { return 30; }
    std::string kind() const override { return "exact:synth30"; }

    std::vector<double> forward(const std::vector<double>& z) const override {
        const auto& lay = detail::Synth30Layout::instance();
        std::vector<double> x(30);
        for (int half = 0; half < 2; ++half) {
            int base = half * 15;
            const auto& mu = half ? lay.mu2 : lay.mu1;
            const auto& L = half ? lay.chol2 : lay.chol1;
            std::vector<double> zb(z.begin() + base, z.begin() + base + 5);
            std::vector<double> b = lower_mul(L, zb);
            for (int i = 0; i < 5; ++i) x[base + i] = mu[i] + b[i];
            for (int i = 0; i < 4; ++i)
                x[base + 5 + i] = lay.normal_sd[i] * z[base + 5 + i];
            for (int i = 0; i < 4; ++i)
                x[base + 9 + i] = -lay.exp_scale[i] * std::log(std_normal_cdf(-z[base + 9 + i]));
            for (int i = 0; i < 2; ++i) {
                // Gamma(2, s) equals (s/2) * chi-square with 4 dof
                double p = std::clamp(std_normal_cdf(z[base + 13 + i]), 1e-300, 1.0 - 1e-16);
                x[base + 13 + i] = 0.5 * lay.gamma_scale[i] * chi2_quantile(p, 4);
            }
        }
        return x;
    }

    std::vector<double> inverse(const std::vector<double>& x) const override {
        const auto& lay = detail::Synth30Layout::instance();
        std::vector<double> z(30);
        for (int half = 0; half < 2; ++half) {
            int base = half * 15;
            const auto& mu = half ? lay.mu2 : lay.mu1;
            const auto& L = half ? lay.chol2 : lay.chol1;
            std::vector<double> diff(5);
            for (int i = 0; i < 5; ++i) diff[i] = x[base + i] - mu[i];
            std::vector<double> zb = lower_solve(L, diff);
            for (int i = 0; i < 5; ++i) z[base + i] = zb[i];
            for (int i = 0; i < 4; ++i)
                z[base + 5 + i] = x[base + 5 + i] / lay.normal_sd[i];
            for (int i = 0; i < 4; ++i)
                z[base + 9 + i] = -std_normal_quantile(std::exp(-x[base + 9 + i] / lay.exp_scale[i]));
            for (int i = 0; i < 2; ++i) {
                double p = chi2_cdf(2.0 * x[base + 13 + i] / lay.gamma_scale[i], 4);
                z[base + 13 + i] = std_normal_quantile(std::clamp(p, 1e-300, 1.0 - 1e-16));
            }
        }
        return z;
    }

    double log_prob(const std::vector<double>& x) const override {
        const auto& lay = detail::Synth30Layout::instance();
        double lp = 0.0;
        for (int half = 0; half < 2; ++half) {
            int base = half * 15;
            const auto& mu = half ? lay.mu2 : lay.mu1;
            const auto& L = half ? lay.chol2 : lay.chol1;
            std::vector<double> diff(5);
            for (int i = 0; i < 5; ++i) diff[i] = x[base + i] - mu[i];
            std::vector<double> y = lower_solve(L, diff);
            for (int i = 0; i < 5; ++i)
                lp += -0.5 * y[i] * y[i] - std::log(L[i][i]);
            lp += -2.5 * kLog2Pi;
            for (int i = 0; i < 4; ++i) {
                double s = lay.normal_sd[i], v = x[base + 5 + i] / s;
                lp += -0.5 * v * v - 0.5 * kLog2Pi - std::log(s);
            }
            for (int i = 0; i < 4; ++i) {
                double s = lay.exp_scale[i], v = x[base + 9 + i];
                lp += (v < 0.0) ? -std::numeric_limits<double>::infinity()
                                : -v / s - std::log(s);
            }
            for (int i = 0; i < 2; ++i) {
                double s = lay.gamma_scale[i], v = x[base + 13 + i];
                lp += (v <= 0.0) ? -std::numeric_limits<double>::infinity()
                                 : std::log(v) - v / s - 2.0 * std::log(s);
            }
        }
        return lp;
    }
};

// ---------------------------------------------------------------------------
// testbed catalogue

struct TargetSpec {
    std::string name;
    int dim = 0;
    size_t default_train_n = 1000;
    std::function<std::vector<double>(RngStream&)> sampler;
    TransportPtr exact_transport;  // null when no Rosenblatt construction exists
    std::function<std::optional<double>(const std::string&)> oracle;
};

namespace detail {

inline std::optional<double> example1_oracle(const std::string& fn) {
    if (fn.rfind("jplus_", 0) == 0) {
        double t = std::stod(fn.substr(6));
        if (t < 0.0) return 1.0;
        return std::exp(-t * (t + 1.0)) / (t + 1.0);
    }
    if (fn.rfind("jminus_", 0) == 0) {
        double t = std::stod(fn.substr(7));
        if (t < 0.0) return 0.0;
        return (1.0 - std::exp(-t)) - (1.0 - std::exp(-t * (t + 1.0))) / (t + 1.0);
    }
    return std::nullopt;
}

inline double mixtureA1_expectation(const TargetFunction& f) {
    // the density is smooth between these knots; the lower cut at 0.05 leaves
    // out a sub-1e-9 sliver of beta/normal mass
    static const double knots[] = {0.05, 0.2, 0.4, 0.6, 0.95, 1.0, 1.3};
    QuadratureSpec spec{QuadRule::AdaptiveSimpson, 1e-11, 60};
    double acc = 0.0;
    for (size_t i = 0; i + 1 < sizeof(knots) / sizeof(knots[0]); ++i)
        acc += integrate(
            [&](double x) { return f.fn({x}) * mixtureA1_pdf(x); }, knots[i], knots[i + 1],
            spec);
    return acc;
}

inline std::optional<double> exampleA1_oracle(const std::string& fn) {
    if (fn.rfind("jminus_", 0) == 0) return mixtureA1_cdf(std::stod(fn.substr(7)));
    if (fn.rfind("jplus_", 0) == 0) return 1.0 - mixtureA1_cdf(std::stod(fn.substr(6)));
    if (fn == "rho1" || fn == "rho2" || fn == "rho3")
        return mixtureA1_expectation(parse_target_function(fn));
    return std::nullopt;
}

} // namespace detail

inline std::vector<std::string> testbed_names() {
    return {"example1", "exampleA1", "student-t-d3", "student-t-d4", "synth30"};
}

inline TargetSpec testbed_by_name(const std::string& name) {
    if (name == "example1") {
        return {name, 2, 1000, example1_sampler, std::make_shared<Example1Map>(),
                detail::example1_oracle};
    }
    if (name == "exampleA1") {
        return {name, 1, 1000, exampleA1_sampler, std::make_shared<ExampleA1Map>(),
                detail::exampleA1_oracle};
    }
    if (name == "student-t-d3" || name == "student-t-d4") {
        int d = (name.back() == '3') ? 3 : 4;
        auto spec = student_t_spec(d);
        auto chol = cholesky_lower(spec.sigma);
        return {name, d, 20000,
                [spec, chol](RngStream& rng) { return student_t_sampler(spec, chol, rng); },
                nullptr, [](const std::string&) { return std::nullopt; }};
    }
    if (name == "synth30") {
        return {name, 30, 500, synth30_sampler, std::make_shared<Synth30Map>(),
                [](const std::string&) { return std::nullopt; }};
    }
    throw std::invalid_argument("unknown testbed: " + name);
}

// ---------------------------------------------------------------------------
// CSV ingestion: first two numeric columns, optional per-column first
// difference

inline std::vector<std::vector<double>> load_csv_2d(const std::string& path,
                                                    bool apply_first_difference) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_csv_2d: cannot open " + path);

    auto split = [](const std::string& line) {
        std::vector<std::string> cells;
        std::string cell;
        std::stringstream ss(line);
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        return cells;
    };
    auto parse_cell = [](const std::string& cell, double& out) {
        size_t used = 0;
        try {
            out = std::stod(cell, &used);
        } catch (...) {
            return false;
        }
        while (used < cell.size() && std::isspace(static_cast<unsigned char>(cell[used])))
            ++used;
        return used == cell.size();
    };

    std::vector<std::vector<double>> rows;
    std::string line;
    long line_no = 0;
    int col_a = -1, col_b = -1;
    bool first_content_line = true;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto cells = split(line);
        if (col_a < 0) {
            // pick the first two numeric columns; a fully non-numeric first
            // line is treated as a header
            double tmp;
            for (size_t c = 0; c < cells.size(); ++c) {
                if (parse_cell(cells[c], tmp)) {
                    if (col_a < 0) col_a = static_cast<int>(c);
                    else { col_b = static_cast<int>(c); break; }
                }
            }
            if (col_b < 0) {
                col_a = -1;
                if (first_content_line) {
                    first_content_line = false;
                    continue;  // header
                }
                throw std::runtime_error("load_csv_2d: line " + std::to_string(line_no) +
                                         ": fewer than two numeric columns");
            }
        }
        first_content_line = false;
        if (static_cast<int>(cells.size()) <= std::max(col_a, col_b))
            throw std::runtime_error("load_csv_2d: line " + std::to_string(line_no) +
                                     ": fewer than two numeric columns");
        double a, b;
        if (!parse_cell(cells[col_a], a) || !parse_cell(cells[col_b], b))
            throw std::runtime_error("load_csv_2d: line " + std::to_string(line_no) +
                                     ": non-numeric cell");
        rows.push_back({a, b});
    }

    if (apply_first_difference) {
        if (rows.size() < 3)
            throw std::runtime_error("load_csv_2d: need at least 3 rows for differencing");
        std::vector<std::vector<double>> diff;
        diff.reserve(rows.size() - 1);
        for (size_t i = 1; i < rows.size(); ++i)
            diff.push_back({rows[i][0] - rows[i - 1][0], rows[i][1] - rows[i - 1][1]});
        return diff;
    }
    if (rows.empty()) throw std::runtime_error("load_csv_2d: no data rows in " + path);
    return rows;
}

// All-numeric-columns variant for training on generated testbed files of any
// dimension; same header handling and line-numbered errors.
inline std::vector<std::vector<double>> load_csv_matrix(const std::string& path,
                                                        bool apply_first_difference = false) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_csv_matrix: cannot open " + path);
    std::vector<std::vector<double>> rows;
    std::string line;
    long line_no = 0;
    size_t width = 0;
    bool maybe_header = true;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        bool ok = true;
        while (std::getline(ss, cell, ',')) {
            try {
                size_t used = 0;
                double v = std::stod(cell, &used);
                while (used < cell.size() && std::isspace(static_cast<unsigned char>(cell[used])))
                    ++used;
                if (used != cell.size()) { ok = false; break; }
                row.push_back(v);
            } catch (...) {
                ok = false;
                break;
            }
        }
        if (!ok || row.empty()) {
            if (maybe_header) { maybe_header = false; continue; }
            throw std::runtime_error("load_csv_matrix: line " + std::to_string(line_no) +
                                     ": non-numeric cell");
        }
        maybe_header = false;
        if (width == 0) width = row.size();
        if (row.size() != width)
            throw std::runtime_error("load_csv_matrix: line " + std::to_string(line_no) +
                                     ": ragged row");
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw std::runtime_error("load_csv_matrix: no data rows in " + path);
    if (apply_first_difference) {
        if (rows.size() < 3)
            throw std::runtime_error("load_csv_matrix: need at least 3 rows for differencing");
        std::vector<std::vector<double>> diff;
        for (size_t i = 1; i < rows.size(); ++i) {
            std::vector<double> r(width);
            for (size_t c = 0; c < width; ++c) r[c] = rows[i][c] - rows[i - 1][c];
            diff.push_back(std::move(r));
        }
        return diff;
    }
    return rows;
}

} // namespace stratmc
