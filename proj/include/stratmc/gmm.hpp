#pragma once

// Gaussian mixture model fitted by EM with k-means++ seeding, full
// covariances held as Cholesky factors, and log-sum-exp responsibilities.
// The mixture participates in estimation as a sampler-only transport: it has
// a density and a sampler but no latent-space inverse.

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "linalg.hpp"
#include "rng.hpp"
#include "transport.hpp"

namespace stratmc {

class GmmFitError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct GmmModel {
    std::vector<double> weights;
    std::vector<std::vector<double>> means;
    std::vector<Matrix> chol;  // lower factors of the covariances

    int components() const { return static_cast<int>(weights.size()); }
    int dim() const { return means.empty() ? 0 : static_cast<int>(means[0].size()); }

    double component_log_pdf(int k, const std::vector<double>& x) const {
        int d = dim();
        std::vector<double> diff(d);
        for (int i = 0; i < d; ++i) diff[i] = x[i] - means[k][i];
        std::vector<double> y = lower_solve(chol[k], diff);
        double q = 0.0, logdet = 0.0;
        for (int i = 0; i < d; ++i) {
            q += y[i] * y[i];
            logdet += std::log(chol[k][i][i]);
        }
        return -0.5 * q - 0.5 * d * kLog2Pi - logdet;
    }

    double log_pdf(const std::vector<double>& x) const {
        int K = components();
        double mx = -std::numeric_limits<double>::infinity();
        std::vector<double> terms(K);
        for (int k = 0; k < K; ++k) {
            terms[k] = std::log(weights[k]) + component_log_pdf(k, x);
            mx = std::max(mx, terms[k]);
        }
        double sum = 0.0;
        for (double t : terms) sum += std::exp(t - mx);
        return mx + std::log(sum);
    }

    std::vector<double> sample(RngStream& rng) const {
        double u = rng.next_open01();
        int k = 0;
        double acc = weights[0];
        while (u > acc && k + 1 < components()) acc += weights[++k];
        std::vector<double> z = standard_normal_vector(dim(), rng);
        std::vector<double> x = lower_mul(chol[k], z);
        for (int i = 0; i < dim(); ++i) x[i] += means[k][i];
        return x;
    }

    nlohmann::json to_json() const {
        nlohmann::json j{{"format", "stratmc-transport"}, {"version", 1}, {"kind", "gmm"},
                         {"dim", dim()}, {"components", components()}};
        j["weights"] = detail::doubles_to_json(weights);
        nlohmann::json ms = nlohmann::json::array(), cs = nlohmann::json::array();
        for (const auto& m : means) ms.push_back(detail::doubles_to_json(m));
        for (const auto& L : chol) {
            nlohmann::json rows = nlohmann::json::array();
            for (const auto& r : L) rows.push_back(detail::doubles_to_json(r));
            cs.push_back(std::move(rows));
        }
        j["means"] = std::move(ms);
        j["chol"] = std::move(cs);
        return j;
    }

    static GmmModel from_json(const nlohmann::json& j) {
        if (!j.contains("version") || j.at("version").get<int>() != 1)
            throw std::runtime_error("gmm model file has a missing or unsupported version");
        GmmModel m;
        m.weights = detail::doubles_from_json(j.at("weights"));
        for (const auto& mj : j.at("means")) m.means.push_back(detail::doubles_from_json(mj));
        for (const auto& cj : j.at("chol")) {
            Matrix L;
            for (const auto& rj : cj) L.push_back(detail::doubles_from_json(rj));
            m.chol.push_back(std::move(L));
        }
        if (m.means.size() != m.weights.size() || m.chol.size() != m.weights.size())
            throw std::runtime_error("gmm model file is inconsistent");
        return m;
    }
};

struct GmmFitResult {
    GmmModel model;
    std::vector<double> loglik_trace;
    int reinit_count = 0;
};

inline GmmFitResult fit_gmm(const std::vector<std::vector<double>>& data, int k,
                            int max_iters, uint64_t seed) {
    size_t n = data.size();
    if (k < 1) throw std::domain_error("fit_gmm: k must be >= 1");
    int d = data.empty() ? 0 : static_cast<int>(data[0].size());
    if (n < static_cast<size_t>(k) * (d + 2))
        throw std::domain_error("fit_gmm: need at least k*(d+2) rows");

    const double reg = 1e-6;
    RngStream rng(seed, derive_stream(0x6D, 0));

    // k-means++ seeding for the means
    std::vector<std::vector<double>> means;
    means.push_back(data[rng.below(n)]);
    std::vector<double> dist2(n, std::numeric_limits<double>::infinity());
    while (static_cast<int>(means.size()) < k) {
        double total = 0.0;
        for (size_t i = 0; i < n; ++i) {
            double d2 = 0.0;
            for (int c = 0; c < d; ++c) {
                double diff = data[i][c] - means.back()[c];
                d2 += diff * diff;
            }
            dist2[i] = std::min(dist2[i], d2);
            total += dist2[i];
        }
        if (total <= 0.0) {
            means.push_back(data[rng.below(n)]);
            continue;
        }
        double u = rng.next_open01() * total;
        size_t pick = 0;
        double acc = 0.0;
        for (size_t i = 0; i < n; ++i) {
            acc += dist2[i];
            if (u <= acc) { pick = i; break; }
        }
        means.push_back(data[pick]);
    }

    GmmModel model;
    model.weights.assign(k, 1.0 / k);
    model.means = means;
    // shared initial covariance: data covariance + regularization
    std::vector<double> gmean(d, 0.0);
    for (const auto& r : data)
        for (int c = 0; c < d; ++c) gmean[c] += r[c];
    for (auto& g : gmean) g /= static_cast<double>(n);
    Matrix cov(d, std::vector<double>(d, 0.0));
    for (const auto& r : data)
        for (int a = 0; a < d; ++a)
            for (int b = 0; b <= a; ++b)
                cov[a][b] += (r[a] - gmean[a]) * (r[b] - gmean[b]);
    for (int a = 0; a < d; ++a)
        for (int b = 0; b <= a; ++b) {
            cov[a][b] /= static_cast<double>(n);
            cov[b][a] = cov[a][b];
        }
    for (int a = 0; a < d; ++a) cov[a][a] += reg;
    model.chol.assign(k, cholesky_lower(cov));

    std::vector<double> loglik_trace;
    std::vector<std::vector<double>> resp(n, std::vector<double>(k));
    int reinits = 0;

    for (int iter = 0; iter < max_iters; ++iter) {
        // E step
        double loglik = 0.0;
        for (size_t i = 0; i < n; ++i) {
            double mx = -std::numeric_limits<double>::infinity();
            for (int c = 0; c < k; ++c) {
                resp[i][c] = std::log(model.weights[c]) + model.component_log_pdf(c, data[i]);
                mx = std::max(mx, resp[i][c]);
            }
            double sum = 0.0;
            for (int c = 0; c < k; ++c) sum += std::exp(resp[i][c] - mx);
            loglik += mx + std::log(sum);
            for (int c = 0; c < k; ++c)
                resp[i][c] = std::exp(resp[i][c] - mx) / sum;
        }
        loglik_trace.push_back(loglik);
        if (loglik_trace.size() >= 2) {
            double prev = loglik_trace[loglik_trace.size() - 2];
            if (std::fabs(loglik - prev) < 1e-9 * (1.0 + std::fabs(prev))) break;
        }

        // M step
        for (int c = 0; c < k; ++c) {
            double nk = 0.0;
            for (size_t i = 0; i < n; ++i) nk += resp[i][c];
            if (nk < 1e-8 * n) {
                if (++reinits > 3 * k)
                    throw GmmFitError("fit_gmm: repeated empty-component collapse");
                model.means[c] = data[rng.below(n)];
                model.weights[c] = 1.0 / n;
                model.chol[c] = cholesky_lower(cov);
                continue;
            }
            model.weights[c] = nk / static_cast<double>(n);
            std::vector<double> mu(d, 0.0);
            for (size_t i = 0; i < n; ++i)
                for (int a = 0; a < d; ++a) mu[a] += resp[i][c] * data[i][a];
            for (auto& m : mu) m /= nk;
            Matrix s(d, std::vector<double>(d, 0.0));
            for (size_t i = 0; i < n; ++i) {
                double w = resp[i][c];
                for (int a = 0; a < d; ++a) {
                    double da = data[i][a] - mu[a];
                    for (int b = 0; b <= a; ++b)
                        s[a][b] += w * da * (data[i][b] - mu[b]);
                }
            }
            for (int a = 0; a < d; ++a)
                for (int b = 0; b <= a; ++b) {
                    s[a][b] /= nk;
                    s[b][a] = s[a][b];
                }
            for (int a = 0; a < d; ++a) s[a][a] += reg;
            model.means[c] = std::move(mu);
            model.chol[c] = cholesky_lower(s);
        }
        // renormalize weights (reinitialized components disturb the sum)
        double wsum = 0.0;
        for (double w : model.weights) wsum += w;
        for (auto& w : model.weights) w /= wsum;
    }

    return {std::move(model), std::move(loglik_trace), reinits};
}

inline std::vector<std::vector<double>> gmm_sample(const GmmModel& model, int count,
                                                   RngStream& rng) {
    std::vector<std::vector<double>> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i) out.push_back(model.sample(rng));
    return out;
}

inline double gmm_log_prob(const GmmModel& model, const std::vector<double>& x) {
    return model.log_pdf(x);
}

// sampler-only transport wrapper
class GmmSamplerMap final : public TransportMap {
public:
    explicit GmmSamplerMap(GmmModel model) : model_(std::move(model)) {}

    int dim() const override { return model_.dim(); }
    std::string kind() const override { return "gmm"; }
    bool invertible() const override { return false; }

    std::vector<double> forward(const std::vector<double>&) const override {
        throw NoInverseError("gmm transport is sampling-only (no latent-space map)");
    }
    std::vector<double> inverse(const std::vector<double>&) const override {
        throw NoInverseError("gmm transport is sampling-only (no latent-space map)");
    }
    double log_prob(const std::vector<double>& x) const override { return model_.log_pdf(x); }
    std::vector<double> sample(RngStream& rng) const override { return model_.sample(rng); }
    nlohmann::json to_json() const override { return model_.to_json(); }

    const GmmModel& model() const { return model_; }

private:
    GmmModel model_;
};

} // namespace stratmc
