#pragma once

// Estimator layer: crude Monte Carlo, stratified estimation with arbitrary
// allocations, proportional and pilot-driven optimal budget splits, variance
// and confidence-interval accounting, the accuracy metric, and the
// within/between variance decomposition.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "numerics.hpp"
#include "rng.hpp"
#include "strata.hpp"
#include "testbeds.hpp"
#include "transport.hpp"

namespace stratmc {

class BudgetError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct Allocation {
    std::vector<long> counts;
    long total = 0;
    bool proportional_fallback = false;
};

struct StratumStats {
    long count = 0;
    double mean = 0.0;
    double sample_variance = 0.0;
};

enum class Method { CMC, Prop, Opt, General };

inline std::string method_name(Method m) {
    switch (m) {
        case Method::CMC: return "cmc";
        case Method::Prop: return "prop";
        case Method::Opt: return "opt";
        case Method::General: return "general";
    }
    return "?";
}

struct EstimateReport {
    std::string method_label;
    std::string function_name;
    long num_strata = 1;
    long budget = 0;
    long pilot_budget = 0;
    double estimate = 0.0;
    double sd = 0.0;
    std::optional<double> accuracy;
    std::optional<double> ci_lo, ci_hi, ci_alpha;
    std::vector<StratumStats> per_stratum;
    std::vector<StratumStats> pilot_per_stratum;
    std::optional<double> posthoc_var;  // (sum_j p_j s_j)^2 / R
    std::optional<double> posthoc_d2;   // (sum_j p_j s_j)^2 as printed without 1/R
    bool proportional_fallback = false;
    uint64_t seed = 0;

    nlohmann::json to_json() const {
        nlohmann::json j{{"method", method_label}, {"f", function_name},
                         {"m", num_strata},       {"R", budget},
                         {"R_prime", pilot_budget}, {"E", estimate},
                         {"SD", sd},              {"seed", seed}};
        if (accuracy) j["AC"] = std::isinf(*accuracy) ? nlohmann::json("inf")
                                                      : nlohmann::json(*accuracy);
        if (ci_lo) j["CI"] = {{"lo", *ci_lo}, {"hi", *ci_hi}, {"alpha", *ci_alpha}};
        if (posthoc_var) j["posthoc_var"] = *posthoc_var;
        if (posthoc_d2) j["posthoc_d2"] = *posthoc_d2;
        if (proportional_fallback) j["proportional_fallback"] = true;
        if (!per_stratum.empty()) {
            nlohmann::json arr = nlohmann::json::array();
            for (const auto& s : per_stratum)
                arr.push_back({{"count", s.count}, {"mean", s.mean},
                               {"var", s.sample_variance}});
            j["per_stratum"] = std::move(arr);
        }
        if (!pilot_per_stratum.empty()) {
            nlohmann::json arr = nlohmann::json::array();
            for (const auto& s : pilot_per_stratum)
                arr.push_back({{"count", s.count}, {"mean", s.mean},
                               {"var", s.sample_variance}});
            j["pilot_per_stratum"] = std::move(arr);
        }
        return j;
    }

    static std::string csv_header() {
        return "method,f,m,R,R_prime,E,SD,AC,CI_lo,CI_hi,seed";
    }

    std::string csv_row() const {
        auto num = [](double v) {
            if (std::isinf(v)) return std::string(v > 0 ? "inf" : "-inf");
            char buf[40];
            std::snprintf(buf, sizeof(buf), "%.12g", v);
            return std::string(buf);
        };
        std::string row = method_label + "," + function_name + "," +
                          std::to_string(num_strata) + "," + std::to_string(budget) + "," +
                          std::to_string(pilot_budget) + "," + num(estimate) + "," + num(sd);
        row += ",";
        if (accuracy) row += num(*accuracy);
        row += ",";
        if (ci_lo) row += num(*ci_lo);
        row += ",";
        if (ci_hi) row += num(*ci_hi);
        row += "," + std::to_string(seed);
        return row;
    }
};

// ---------------------------------------------------------------------------
// allocations

namespace detail {

// largest-remainder split of R along nonnegative weights, then lift every
// stratum to min_per by taking replications from the largest counts
inline std::vector<long> apportion(const std::vector<double>& weights, long R, long min_per) {
    size_t m = weights.size();
    double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
    std::vector<long> counts(m, 0);
    std::vector<std::pair<double, size_t>> remainders(m);
    long assigned = 0;
    for (size_t j = 0; j < m; ++j) {
        double target = (wsum > 0.0) ? weights[j] / wsum * static_cast<double>(R) : 0.0;
        counts[j] = static_cast<long>(std::floor(target + 1e-12));
        remainders[j] = {target - counts[j], j};
        assigned += counts[j];
    }
    std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (size_t i = 0; assigned < R; ++i, ++assigned)
        ++counts[remainders[i % m].second];

    for (size_t j = 0; j < m; ++j)
        if (counts[j] < min_per) counts[j] = min_per;
    long total = std::accumulate(counts.begin(), counts.end(), 0L);
    while (total > R) {
        size_t best = m;
        for (size_t j = 0; j < m; ++j)
            if (counts[j] > min_per && (best == m || counts[j] > counts[best])) best = j;
        if (best == m)
            throw BudgetError("allocation: budget too small for the per-stratum floor");
        --counts[best];
        --total;
    }
    return counts;
}

inline void check_probs(const std::vector<double>& p) {
    double sum = 0.0;
    for (double v : p) {
        if (v < 0.0) throw std::invalid_argument("allocation: negative stratum probability");
        sum += v;
    }
    if (std::fabs(sum - 1.0) > 1e-9)
        throw std::invalid_argument("allocation: stratum probabilities must sum to 1");
}

} // namespace detail

inline Allocation proportional_allocation(const std::vector<double>& p, long R,
                                          long min_per_stratum = 2) {
    detail::check_probs(p);
    long m = static_cast<long>(p.size());
    if (R < m * min_per_stratum)
        throw BudgetError("proportional_allocation: R < m * min_per_stratum");
    Allocation a;
    a.counts = detail::apportion(p, R, min_per_stratum);
    a.total = R;
    return a;
}

inline Allocation optimal_allocation(const std::vector<double>& p,
                                     const std::vector<double>& pilot_sd, long R,
                                     long min_per_stratum = 2) {
    detail::check_probs(p);
    if (p.size() != pilot_sd.size())
        throw std::invalid_argument("optimal_allocation: size mismatch");
    long m = static_cast<long>(p.size());
    if (R < m * min_per_stratum)
        throw BudgetError("optimal_allocation: R < m * min_per_stratum");

    std::vector<double> weights(p.size());
    double wsum = 0.0;
    for (size_t j = 0; j < p.size(); ++j) {
        if (pilot_sd[j] < 0.0)
            throw std::invalid_argument("optimal_allocation: negative pilot sd");
        weights[j] = p[j] * pilot_sd[j];
        wsum += weights[j];
    }
    Allocation a;
    if (wsum <= 0.0) {
        a = proportional_allocation(p, R, min_per_stratum);
        a.proportional_fallback = true;
        return a;
    }
    a.counts = detail::apportion(weights, R, min_per_stratum);
    a.total = R;
    return a;
}

// ---------------------------------------------------------------------------
// estimators

namespace detail {

struct Welford {
    long n = 0;
    double mean = 0.0;
    double m2 = 0.0;

    void add(double x) {
        ++n;
        double d = x - mean;
        mean += d / static_cast<double>(n);
        m2 += d * (x - mean);
    }
    double sample_variance() const { return (n > 1) ? m2 / static_cast<double>(n - 1) : 0.0; }
};

// stream phases inside one estimate
inline constexpr uint64_t kPhaseMain = 1;
inline constexpr uint64_t kPhasePilot = 2;
inline constexpr uint64_t kPhaseFinal = 3;
inline constexpr uint64_t kPhaseDimPilot = 4;

} // namespace detail

template <typename DrawY>
EstimateReport cmc_estimate(DrawY&& draw_y, long R, RngStream& rng) {
    if (R < 2) throw BudgetError("cmc_estimate: R must be >= 2");
    detail::Welford acc;
    for (long i = 0; i < R; ++i) acc.add(draw_y(rng));
    EstimateReport rep;
    rep.method_label = method_name(Method::CMC);
    rep.num_strata = 1;
    rep.budget = R;
    rep.estimate = acc.mean;
    rep.sd = std::sqrt(acc.sample_variance() / static_cast<double>(R));
    rep.per_stratum.push_back({acc.n, acc.mean, acc.sample_variance()});
    rep.seed = rng.seed();
    return rep;
}

// Draws alloc.counts[j] conditional samples per stratum, each stratum on its
// own substream, pushes them through the transport and combines by the law of
// total expectation. Strata are combined in flat-index order, so results do
// not depend on evaluation order.
inline EstimateReport stratified_estimate(const StrataScheme& scheme, const TransportMap& map,
                                          const TargetFunction& f, const Allocation& alloc,
                                          uint64_t seed, uint64_t stream_base,
                                          Method tag = Method::General,
                                          uint64_t phase = detail::kPhaseMain) {
    if (!map.invertible())
        throw NoInverseError("stratified estimation requires an invertible transport");
    if (map.dim() != scheme.dim)
        throw std::invalid_argument("stratified_estimate: scheme/transport dimension mismatch");
    if (static_cast<long>(alloc.counts.size()) != scheme.num_strata)
        throw std::invalid_argument("stratified_estimate: allocation does not match scheme");

    EstimateReport rep;
    rep.method_label = method_name(tag);
    rep.function_name = f.name;
    rep.num_strata = scheme.num_strata;
    rep.budget = alloc.total;
    rep.seed = seed;
    rep.proportional_fallback = alloc.proportional_fallback;

    double estimate = 0.0, variance = 0.0;
    for (long j = 0; j < scheme.num_strata; ++j) {
        long r_j = alloc.counts[j];
        if (r_j < 2)
            throw BudgetError("stratified_estimate: every stratum needs at least 2 draws");
        RngStream rng(seed, derive_stream(stream_base, phase, static_cast<uint64_t>(j)));
        auto id = make_stratum_id(scheme, j);
        detail::Welford acc;
        for (long i = 0; i < r_j; ++i) {
            auto z = sample_latent_in_stratum(scheme, id, rng);
            acc.add(f.fn(map.forward(z)));
        }
        double p_j = scheme.stratum_probs[j];
        estimate += p_j * acc.mean;
        variance += p_j * p_j / static_cast<double>(r_j) * acc.sample_variance();
        rep.per_stratum.push_back({acc.n, acc.mean, acc.sample_variance()});
    }
    rep.estimate = estimate;
    rep.sd = std::sqrt(variance);
    return rep;
}

// Proportional pilot -> per-stratum sd -> optimal split -> fresh final run.
// Pilot draws are extra and never reused in the final estimate.
inline EstimateReport run_optimal_pipeline(const StrataScheme& scheme, const TransportMap& map,
                                           const TargetFunction& f, long R,
                                           double pilot_fraction, uint64_t seed,
                                           uint64_t stream_base) {
    if (pilot_fraction <= 0.0 || pilot_fraction >= 1.0)
        throw std::invalid_argument("run_optimal_pipeline: pilot_fraction must be in (0,1)");
    long r_pilot = std::lround(pilot_fraction * static_cast<double>(R));
    if (r_pilot < 2 * scheme.num_strata)
        throw BudgetError("run_optimal_pipeline: pilot budget below 2 per stratum");

    Allocation pilot_alloc = proportional_allocation(scheme.stratum_probs, r_pilot);
    EstimateReport pilot = stratified_estimate(scheme, map, f, pilot_alloc, seed, stream_base,
                                               Method::Prop, detail::kPhasePilot);
    std::vector<double> pilot_sd(scheme.num_strata);
    for (long j = 0; j < scheme.num_strata; ++j)
        pilot_sd[j] = std::sqrt(pilot.per_stratum[j].sample_variance);

    Allocation final_alloc = optimal_allocation(scheme.stratum_probs, pilot_sd, R);
    EstimateReport rep = stratified_estimate(scheme, map, f, final_alloc, seed, stream_base,
                                             Method::Opt, detail::kPhaseFinal);
    rep.pilot_budget = r_pilot;
    rep.pilot_per_stratum = pilot.per_stratum;
    rep.proportional_fallback = final_alloc.proportional_fallback;

    double d_hat = 0.0;
    for (long j = 0; j < scheme.num_strata; ++j)
        d_hat += scheme.stratum_probs[j] * std::sqrt(rep.per_stratum[j].sample_variance);
    rep.posthoc_d2 = d_hat * d_hat;
    rep.posthoc_var = d_hat * d_hat / static_cast<double>(R);
    return rep;
}

inline std::pair<double, double> confidence_interval(const EstimateReport& rep, double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0))
        throw std::domain_error("confidence_interval: alpha must be in (0,1)");
    double z = std_normal_quantile(1.0 - alpha / 2.0);
    return {rep.estimate - z * rep.sd, rep.estimate + z * rep.sd};
}

inline EstimateReport& attach_interval(EstimateReport& rep, double alpha) {
    auto [lo, hi] = confidence_interval(rep, alpha);
    rep.ci_lo = lo;
    rep.ci_hi = hi;
    rep.ci_alpha = alpha;
    return rep;
}

// AC = -log10 |(I - E)/I|, roughly the number of correct digits
inline double accuracy(double i_true, double estimate) {
    if (i_true == 0.0) throw std::domain_error("accuracy: I must be nonzero");
    if (estimate == i_true) return std::numeric_limits<double>::infinity();
    return -std::log10(std::fabs((i_true - estimate) / i_true));
}

struct VarianceDecomposition {
    double within = 0.0;
    double between = 0.0;
    double total = 0.0;
};

inline VarianceDecomposition variance_decomposition(const std::vector<double>& p,
                                                    const std::vector<double>& stratum_means,
                                                    const std::vector<double>& stratum_vars) {
    detail::check_probs(p);
    if (p.size() != stratum_means.size() || p.size() != stratum_vars.size())
        throw std::invalid_argument("variance_decomposition: size mismatch");
    VarianceDecomposition out;
    double grand = 0.0;
    for (size_t j = 0; j < p.size(); ++j) grand += p[j] * stratum_means[j];
    for (size_t j = 0; j < p.size(); ++j) {
        if (stratum_vars[j] < 0.0)
            throw std::invalid_argument("variance_decomposition: negative variance");
        out.within += p[j] * stratum_vars[j];
        out.between += p[j] * (stratum_means[j] - grand) * (stratum_means[j] - grand);
    }
    out.total = out.within + out.between;
    return out;
}

// For each coordinate, run a proportional pilot that stratifies only that
// coordinate and score it by the spread of the per-stratum means, i.e. the
// variance that stratifying this coordinate explains. The eta
// highest-scoring coordinates win (ties to the lower index).
inline std::vector<int> select_high_variance_dims(const TransportMap& map,
                                                  const TargetFunction& f, int d, int eta,
                                                  int m0, long r0, uint64_t seed,
                                                  uint64_t stream_base) {
    if (eta < 1 || eta > d)
        throw std::domain_error("select_high_variance_dims: need 1 <= eta <= d");
    if (r0 < 2 * m0)
        throw BudgetError("select_high_variance_dims: pilot budget below 2 per stratum");

    std::vector<std::pair<double, int>> scored(d);
    for (int b = 0; b < d; ++b) {
        StrataScheme scheme = build_selected_dims(d, {b}, m0);
        Allocation alloc = proportional_allocation(scheme.stratum_probs, r0);
        EstimateReport rep =
            stratified_estimate(scheme, map, f, alloc, seed,
                                derive_stream(stream_base, detail::kPhaseDimPilot,
                                              static_cast<uint64_t>(b)),
                                Method::Prop);
        double between = 0.0;
        for (long j = 0; j < scheme.num_strata; ++j) {
            double diff = rep.per_stratum[j].mean - rep.estimate;
            between += scheme.stratum_probs[j] * diff * diff;
        }
        scored[b] = {std::sqrt(between), b};
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    std::vector<int> dims(eta);
    for (int i = 0; i < eta; ++i) dims[i] = scored[i].second;
    std::sort(dims.begin(), dims.end());
    return dims;
}

} // namespace stratmc
