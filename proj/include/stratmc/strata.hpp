#pragma once

// Equiprobable stratification schemes of the d-dimensional standard Gaussian:
// per-coordinate quantile splits (cartesian), radius x angle splits
// (spherical), radius-only shells, and splits of a selected coordinate
// subset. Every scheme supports conditional sampling inside a stratum and
// total classification of arbitrary points, with the half-open convention
// (a_{j-1}, a_j] on every axis.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "numerics.hpp"
#include "rng.hpp"
#include "sampling.hpp"

namespace stratmc {

enum class SchemeKind { Cartesian, Spherical, Radial, SelectedDims };

class StratumCapExceeded : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

enum class AxisType { NormalCoord, Radius, Theta, Phi };

struct Axis {
    AxisType type;
    int coord = -1;  // NormalCoord: z index; Phi: exponent k of sin^k
    int count = 1;
    // full boundary list, size count+1, in the axis' native space
    // (real line for coordinates, D^2 for the radius, (0,2pi) / (0,pi) for angles)
    std::vector<double> bounds;

    int locate(double v) const {
        // smallest j with v <= bounds[j+1]; boundary points go left
        auto first = bounds.begin() + 1;
        auto last = bounds.begin() + count;  // interior boundaries only
        return static_cast<int>(std::lower_bound(first, last, v) - first);
    }
};

} // namespace detail

struct StratumId {
    std::vector<int> multi;
    long flat = 0;
};

struct StrataScheme {
    SchemeKind kind;
    int dim = 0;
    long num_strata = 1;
    std::vector<detail::Axis> axes;
    std::vector<int> selected;        // SelectedDims: stratified coordinates
    std::vector<int> m0_per_dim;      // Cartesian
    int m_r = 1;                      // Spherical / Radial
    int m0 = 1;                       // Spherical / SelectedDims angular or per-dim count
    std::vector<double> stratum_probs;

    long flat_index(const std::vector<int>& multi) const {
        long f = 0;
        for (size_t a = 0; a < axes.size(); ++a)
            f = f * axes[a].count + multi[a];
        return f;
    }

    std::vector<int> multi_index(long flat) const {
        std::vector<int> multi(axes.size());
        for (size_t a = axes.size(); a-- > 0;) {
            multi[a] = static_cast<int>(flat % axes[a].count);
            flat /= axes[a].count;
        }
        return multi;
    }

    std::string label() const {
        switch (kind) {
            case SchemeKind::Cartesian:
                return "M1(m0=" + std::to_string(m0) + ")";
            case SchemeKind::Spherical:
                return "M2(mr=" + std::to_string(m_r) + ",m0=" + std::to_string(m0) + ")";
            case SchemeKind::Radial:
                return "Mrad(mr=" + std::to_string(m_r) + ")";
            case SchemeKind::SelectedDims:
                return "Msel(eta=" + std::to_string(selected.size()) +
                       ",m0=" + std::to_string(m0) + ")";
        }
        return "?";
    }
};

namespace detail {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

inline void check_cap(long m, long cap) {
    if (m > cap)
        throw StratumCapExceeded("stratum count " + std::to_string(m) +
                                 " exceeds cap " + std::to_string(cap));
}

inline Axis normal_axis(int coord, int m0) {
    Axis ax{AxisType::NormalCoord, coord, m0, {}};
    ax.bounds.resize(m0 + 1);
    ax.bounds.front() = -kInf;
    ax.bounds.back() = kInf;
    for (int j = 1; j < m0; ++j)
        ax.bounds[j] = std_normal_quantile(static_cast<double>(j) / m0);
    return ax;
}

inline Axis radius_axis(int d, int m_r) {
    Axis ax{AxisType::Radius, -1, m_r, {}};
    ax.bounds.resize(m_r + 1);
    ax.bounds.front() = 0.0;
    ax.bounds.back() = kInf;
    for (int j = 1; j < m_r; ++j)
        ax.bounds[j] = chi2_quantile(static_cast<double>(j) / m_r, d);
    return ax;
}

inline Axis theta_axis(int m0) {
    Axis ax{AxisType::Theta, -1, m0, {}};
    ax.bounds.resize(m0 + 1);
    for (int j = 0; j <= m0; ++j)
        ax.bounds[j] = 2.0 * kPi * j / m0;
    return ax;
}

// Split (0,pi) into m0 intervals carrying equal mass of sin^k.
inline Axis phi_axis(int k, int m0) {
    Axis ax{AxisType::Phi, k, m0, {}};
    ax.bounds.resize(m0 + 1);
    ax.bounds.front() = 0.0;
    ax.bounds.back() = kPi;
    if (m0 > 1) {
        double ck = sin_power_norm(k);
        QuadratureSpec spec;
        auto mass_to = [&](double x) {
            return integrate([k](double t) { return std::pow(std::sin(t), k); }, 0.0, x, spec) / ck;
        };
        for (int j = 1; j < m0; ++j) {
            double target = static_cast<double>(j) / m0;
            ax.bounds[j] = find_root_monotone(
                [&](double x) { return mass_to(x) - target; }, 0.0, kPi, 1e-12);
        }
    }
    return ax;
}

inline void finalize(StrataScheme& s) {
    long m = 1;
    for (const auto& ax : s.axes) {
        check_cap(m * ax.count, 1000000000L);
        m *= ax.count;
    }
    s.num_strata = m;
    s.stratum_probs.assign(m, 1.0 / static_cast<double>(m));
}

} // namespace detail

inline StrataScheme build_cartesian(int d, int m0, long cap = 1000000) {
    if (d < 1 || m0 < 1) throw std::domain_error("build_cartesian: d, m0 must be >= 1");
    double logm = d * std::log(static_cast<double>(m0));
    if (logm > std::log(static_cast<double>(cap)) + 1e-9)
        throw StratumCapExceeded("build_cartesian: m0^d exceeds stratum cap");
    StrataScheme s;
    s.kind = SchemeKind::Cartesian;
    s.dim = d;
    s.m0 = m0;
    s.m0_per_dim.assign(d, m0);
    detail::Axis proto = detail::normal_axis(0, m0);
    for (int c = 0; c < d; ++c) {
        proto.coord = c;
        s.axes.push_back(proto);
    }
    detail::finalize(s);
    detail::check_cap(s.num_strata, cap);
    return s;
}

inline StrataScheme build_spherical(int d, int m_r, int m0, long cap = 1000000) {
    if (d < 2) throw std::domain_error("build_spherical: d must be >= 2");
    if (m_r < 1 || m0 < 1) throw std::domain_error("build_spherical: m_r, m0 must be >= 1");
    double logm = std::log(static_cast<double>(m_r)) + (d - 1) * std::log(static_cast<double>(m0));
    if (logm > std::log(static_cast<double>(cap)) + 1e-9)
        throw StratumCapExceeded("build_spherical: m_r*m0^(d-1) exceeds stratum cap");
    StrataScheme s;
    s.kind = SchemeKind::Spherical;
    s.dim = d;
    s.m_r = m_r;
    s.m0 = m0;
    s.axes.push_back(detail::radius_axis(d, m_r));
    s.axes.push_back(detail::theta_axis(m0));
    for (int k = 1; k <= d - 2; ++k)
        s.axes.push_back(detail::phi_axis(k, m0));
    detail::finalize(s);
    detail::check_cap(s.num_strata, cap);
    return s;
}

inline StrataScheme build_radial(int d, int m_r) {
    if (d < 1 || m_r < 1) throw std::domain_error("build_radial: d, m_r must be >= 1");
    StrataScheme s;
    s.kind = SchemeKind::Radial;
    s.dim = d;
    s.m_r = m_r;
    s.axes.push_back(detail::radius_axis(d, m_r));
    detail::finalize(s);
    return s;
}

inline StrataScheme build_selected_dims(int d, const std::vector<int>& dims, int m0,
                                        long cap = 1000000) {
    if (dims.empty()) throw std::domain_error("build_selected_dims: need at least one dim");
    if (m0 < 1) throw std::domain_error("build_selected_dims: m0 must be >= 1");
    std::vector<int> sorted = dims;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
        throw std::domain_error("build_selected_dims: duplicate dims");
    for (int c : dims)
        if (c < 0 || c >= d) throw std::domain_error("build_selected_dims: dim out of range");
    double logm = dims.size() * std::log(static_cast<double>(m0));
    if (logm > std::log(static_cast<double>(cap)) + 1e-9)
        throw StratumCapExceeded("build_selected_dims: m0^eta exceeds stratum cap");
    StrataScheme s;
    s.kind = SchemeKind::SelectedDims;
    s.dim = d;
    s.m0 = m0;
    s.selected = dims;
    detail::Axis proto = detail::normal_axis(0, m0);
    for (int c : dims) {
        proto.coord = c;
        s.axes.push_back(proto);
    }
    detail::finalize(s);
    detail::check_cap(s.num_strata, cap);
    return s;
}

inline std::vector<int> select_random_dims(int d, int eta, RngStream& rng) {
    if (eta < 1 || eta > d) throw std::domain_error("select_random_dims: need 1 <= eta <= d");
    std::vector<int> pool(d);
    for (int i = 0; i < d; ++i) pool[i] = i;
    for (int i = 0; i < eta; ++i) {
        int j = i + static_cast<int>(rng.below(d - i));
        std::swap(pool[i], pool[j]);
    }
    std::vector<int> out(pool.begin(), pool.begin() + eta);
    std::sort(out.begin(), out.end());
    return out;
}

inline StratumId make_stratum_id(const StrataScheme& s, long flat) {
    if (flat < 0 || flat >= s.num_strata)
        throw std::out_of_range("make_stratum_id: flat index out of range");
    return {s.multi_index(flat), flat};
}

namespace detail {

inline double sample_normal_axis(const Axis& ax, int j, RngStream& rng) {
    double plo = (j == 0) ? 0.0 : std_normal_cdf(ax.bounds[j]);
    double phi = (j == ax.count - 1) ? 1.0 : std_normal_cdf(ax.bounds[j + 1]);
    return std_normal_quantile(plo + (phi - plo) * rng.next_open01());
}

inline double sample_radius(const Axis& ax, int j, int d, RngStream& rng) {
    double p = (static_cast<double>(j) + rng.next_open01()) / ax.count;
    return std::sqrt(chi2_quantile(p, d));
}

} // namespace detail

// Law of (Z | Z in stratum) for Z ~ N(0, I_d). Axis draws happen in a fixed
// order so per-stratum streams replay identically.
inline std::vector<double> sample_latent_in_stratum(const StrataScheme& s, const StratumId& id,
                                                    RngStream& rng) {
    if (id.flat < 0 || id.flat >= s.num_strata ||
        id.multi.size() != s.axes.size() || s.flat_index(id.multi) != id.flat)
        throw std::invalid_argument("sample_latent_in_stratum: stratum id does not match scheme");

    switch (s.kind) {
        case SchemeKind::Cartesian: {
            std::vector<double> z(s.dim);
            for (size_t a = 0; a < s.axes.size(); ++a)
                z[s.axes[a].coord] = detail::sample_normal_axis(s.axes[a], id.multi[a], rng);
            return z;
        }
        case SchemeKind::SelectedDims: {
            std::vector<double> z(s.dim);
            std::vector<char> taken(s.dim, 0);
            for (size_t a = 0; a < s.axes.size(); ++a) {
                z[s.axes[a].coord] = detail::sample_normal_axis(s.axes[a], id.multi[a], rng);
                taken[s.axes[a].coord] = 1;
            }
            for (int c = 0; c < s.dim; ++c)
                if (!taken[c]) z[c] = rng.normal();
            return z;
        }
        case SchemeKind::Radial: {
            double radius = detail::sample_radius(s.axes[0], id.multi[0], s.dim, rng);
            if (s.dim == 1)
                return {(rng.next_u64() & 1) ? radius : -radius};
            std::vector<double> u = sphere_uniform(s.dim, rng);
            for (auto& v : u) v *= radius;
            return u;
        }
        case SchemeKind::Spherical: {
            double radius = detail::sample_radius(s.axes[0], id.multi[0], s.dim, rng);
            const auto& th = s.axes[1];
            double theta = rng.uniform(th.bounds[id.multi[1]], th.bounds[id.multi[1] + 1]);
            std::vector<double> phis(s.dim - 2);
            for (int k = 0; k < s.dim - 2; ++k) {
                const auto& ax = s.axes[2 + k];
                Interval win{ax.bounds[id.multi[2 + k]], ax.bounds[id.multi[2 + k] + 1]};
                phis[k] = ar_sample_sin_power(ax.coord, win, rng).value;
            }
            std::vector<double> x = spherical_to_cartesian(theta, phis);
            for (auto& v : x) v *= radius;
            return x;
        }
    }
    throw std::logic_error("sample_latent_in_stratum: unreachable");
}

inline StratumId classify_latent(const StrataScheme& s, const std::vector<double>& z) {
    if (static_cast<int>(z.size()) != s.dim)
        throw std::invalid_argument("classify_latent: dimension mismatch");

    std::vector<int> multi(s.axes.size());
    switch (s.kind) {
        case SchemeKind::Cartesian:
        case SchemeKind::SelectedDims:
            for (size_t a = 0; a < s.axes.size(); ++a)
                multi[a] = s.axes[a].locate(z[s.axes[a].coord]);
            break;
        case SchemeKind::Radial:
        case SchemeKind::Spherical: {
            double r2 = 0.0;
            for (double v : z) r2 += v * v;
            multi[0] = s.axes[0].locate(r2);
            if (s.kind == SchemeKind::Spherical) {
                double r = std::sqrt(r2);
                std::vector<double> u(z.size());
                for (size_t i = 0; i < z.size(); ++i)
                    u[i] = (r > 0.0) ? z[i] / r : 0.0;
                double theta;
                std::vector<double> phis;
                cartesian_to_spherical(u, theta, phis);
                multi[1] = s.axes[1].locate(theta);
                for (int k = 0; k < s.dim - 2; ++k)
                    multi[2 + k] = s.axes[2 + k].locate(phis[k]);
            }
            break;
        }
    }
    StratumId id;
    id.flat = s.flat_index(multi);
    id.multi = std::move(multi);
    return id;
}

// ---------------------------------------------------------------------------
// JSON description (interior boundaries only; endpoints are implied by the
// axis type, so everything serialized is finite)

inline nlohmann::json scheme_to_json(const StrataScheme& s) {
    nlohmann::json j;
    switch (s.kind) {
        case SchemeKind::Cartesian: j["kind"] = "cartesian"; break;
        case SchemeKind::Spherical: j["kind"] = "spherical"; break;
        case SchemeKind::Radial: j["kind"] = "radial"; break;
        case SchemeKind::SelectedDims: j["kind"] = "selected-dims"; break;
    }
    j["d"] = s.dim;
    j["num_strata"] = s.num_strata;
    if (s.kind == SchemeKind::Cartesian) j["m0_per_dim"] = s.m0_per_dim;
    if (s.kind == SchemeKind::Spherical) { j["m_r"] = s.m_r; j["m0"] = s.m0; }
    if (s.kind == SchemeKind::Radial) j["m_r"] = s.m_r;
    if (s.kind == SchemeKind::SelectedDims) { j["dims"] = s.selected; j["m0"] = s.m0; }
    nlohmann::json axes = nlohmann::json::array();
    for (const auto& ax : s.axes) {
        nlohmann::json a;
        switch (ax.type) {
            case detail::AxisType::NormalCoord: a["type"] = "normal"; a["coord"] = ax.coord; break;
            case detail::AxisType::Radius: a["type"] = "radius"; break;
            case detail::AxisType::Theta: a["type"] = "theta"; break;
            case detail::AxisType::Phi: a["type"] = "phi"; a["k"] = ax.coord; break;
        }
        a["count"] = ax.count;
        std::vector<double> interior(ax.bounds.begin() + 1, ax.bounds.begin() + ax.count);
        a["interior_bounds"] = interior;
        axes.push_back(std::move(a));
    }
    j["axes"] = std::move(axes);
    return j;
}

inline StrataScheme scheme_from_json(const nlohmann::json& j) {
    std::string kind = j.at("kind").get<std::string>();
    int d = j.at("d").get<int>();
    StrataScheme s;
    s.dim = d;
    if (kind == "cartesian") {
        s.kind = SchemeKind::Cartesian;
        s.m0_per_dim = j.at("m0_per_dim").get<std::vector<int>>();
        s.m0 = s.m0_per_dim.empty() ? 1 : s.m0_per_dim.front();
    } else if (kind == "spherical") {
        s.kind = SchemeKind::Spherical;
        s.m_r = j.at("m_r").get<int>();
        s.m0 = j.at("m0").get<int>();
    } else if (kind == "radial") {
        s.kind = SchemeKind::Radial;
        s.m_r = j.at("m_r").get<int>();
    } else if (kind == "selected-dims") {
        s.kind = SchemeKind::SelectedDims;
        s.selected = j.at("dims").get<std::vector<int>>();
        s.m0 = j.at("m0").get<int>();
    } else {
        throw std::invalid_argument("scheme_from_json: unknown kind " + kind);
    }
    for (const auto& aj : j.at("axes")) {
        detail::Axis ax;
        std::string t = aj.at("type").get<std::string>();
        ax.count = aj.at("count").get<int>();
        auto interior = aj.at("interior_bounds").get<std::vector<double>>();
        if (static_cast<int>(interior.size()) != ax.count - 1)
            throw std::invalid_argument("scheme_from_json: boundary count mismatch");
        if (t == "normal") {
            ax.type = detail::AxisType::NormalCoord;
            ax.coord = aj.at("coord").get<int>();
            ax.bounds.push_back(-detail::kInf);
            ax.bounds.insert(ax.bounds.end(), interior.begin(), interior.end());
            ax.bounds.push_back(detail::kInf);
        } else if (t == "radius") {
            ax.type = detail::AxisType::Radius;
            ax.bounds.push_back(0.0);
            ax.bounds.insert(ax.bounds.end(), interior.begin(), interior.end());
            ax.bounds.push_back(detail::kInf);
        } else if (t == "theta") {
            ax.type = detail::AxisType::Theta;
            ax.bounds.push_back(0.0);
            ax.bounds.insert(ax.bounds.end(), interior.begin(), interior.end());
            ax.bounds.push_back(2.0 * kPi);
        } else if (t == "phi") {
            ax.type = detail::AxisType::Phi;
            ax.coord = aj.at("k").get<int>();
            ax.bounds.push_back(0.0);
            ax.bounds.insert(ax.bounds.end(), interior.begin(), interior.end());
            ax.bounds.push_back(kPi);
        } else {
            throw std::invalid_argument("scheme_from_json: unknown axis type " + t);
        }
        s.axes.push_back(std::move(ax));
    }
    detail::finalize(s);
    return s;
}

} // namespace stratmc
