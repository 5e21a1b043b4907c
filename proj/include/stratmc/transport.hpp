#pragma once

// Transport maps carry the d-dimensional standard Gaussian base distribution
// to data space. Invertible kinds expose forward/inverse/log_prob; sampler-only
// kinds (GMM, raw testbed samplers) can only draw, and stratified estimators
// reject them.

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "rng.hpp"
#include "sampling.hpp"

namespace stratmc {

class NoInverseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class TransportMap {
public:
    virtual ~TransportMap() = default;

    virtual int dim() const = 0;
    virtual std::string kind() const = 0;
    virtual bool invertible() const { return true; }

    // latent -> data
    virtual std::vector<double> forward(const std::vector<double>& z) const = 0;
    // data -> latent
    virtual std::vector<double> inverse(const std::vector<double>& x) const = 0;
    // log density of x under the pushforward of N(0, I)
    virtual double log_prob(const std::vector<double>& x) const = 0;

    virtual std::vector<double> sample(RngStream& rng) const {
        return forward(standard_normal_vector(dim(), rng));
    }

    virtual nlohmann::json to_json() const {
        throw std::runtime_error("transport kind '" + kind() + "' is not serializable");
    }
};

using TransportPtr = std::shared_ptr<const TransportMap>;

class IdentityMap final : public TransportMap {
public:
    explicit IdentityMap(int d) : d_(d) {
        if (d < 1) throw std::domain_error("IdentityMap: d must be >= 1");
    }

    int dim() const override { return d_; }
    std::string kind() const override { return "identity"; }
    std::vector<double> forward(const std::vector<double>& z) const override { return z; }
    std::vector<double> inverse(const std::vector<double>& x) const override { return x; }

    double log_prob(const std::vector<double>& x) const override {
        double q = 0.0;
        for (double v : x) q += v * v;
        return -0.5 * q - 0.5 * d_ * kLog2Pi;
    }

    nlohmann::json to_json() const override {
        return {{"format", "stratmc-transport"}, {"version", 1}, {"kind", "identity"},
                {"dim", d_}};
    }

private:
    int d_;
};

// x = mean + L z with L lower-triangular, positive diagonal.
class AffineWhitenMap final : public TransportMap {
public:
    AffineWhitenMap(std::vector<double> mean, std::vector<std::vector<double>> lower)
        : mean_(std::move(mean)), lower_(std::move(lower)) {
        int d = static_cast<int>(mean_.size());
        if (d < 1 || static_cast<int>(lower_.size()) != d)
            throw std::domain_error("AffineWhitenMap: inconsistent shapes");
        for (int i = 0; i < d; ++i) {
            if (static_cast<int>(lower_[i].size()) != d)
                throw std::domain_error("AffineWhitenMap: inconsistent shapes");
            if (!(lower_[i][i] > 0.0))
                throw std::domain_error("AffineWhitenMap: diagonal must be positive");
        }
        log_det_ = 0.0;
        for (int i = 0; i < d; ++i) log_det_ += std::log(lower_[i][i]);
    }

    static AffineWhitenMap diagonal(std::vector<double> mean, const std::vector<double>& scale) {
        int d = static_cast<int>(mean.size());
        std::vector<std::vector<double>> L(d, std::vector<double>(d, 0.0));
        for (int i = 0; i < d; ++i) L[i][i] = scale[i];
        return AffineWhitenMap(std::move(mean), std::move(L));
    }

    int dim() const override { return static_cast<int>(mean_.size()); }
    std::string kind() const override { return "affine-whiten"; }

    std::vector<double> forward(const std::vector<double>& z) const override {
        int d = dim();
        std::vector<double> x(d);
        for (int i = 0; i < d; ++i) {
            double acc = mean_[i];
            for (int j = 0; j <= i; ++j) acc += lower_[i][j] * z[j];
            x[i] = acc;
        }
        return x;
    }

    std::vector<double> inverse(const std::vector<double>& x) const override {
        int d = dim();
        std::vector<double> z(d);
        for (int i = 0; i < d; ++i) {
            double acc = x[i] - mean_[i];
            for (int j = 0; j < i; ++j) acc -= lower_[i][j] * z[j];
            z[i] = acc / lower_[i][i];
        }
        return z;
    }

    double log_prob(const std::vector<double>& x) const override {
        std::vector<double> z = inverse(x);
        double q = 0.0;
        for (double v : z) q += v * v;
        return -0.5 * q - 0.5 * dim() * kLog2Pi - log_det_;
    }

    nlohmann::json to_json() const override;

private:
    std::vector<double> mean_;
    std::vector<std::vector<double>> lower_;
    double log_det_;
};

namespace detail {

// Full-precision decimal round trip for doubles.
inline std::string double_to_string(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline nlohmann::json doubles_to_json(const std::vector<double>& v) {
    nlohmann::json arr = nlohmann::json::array();
    for (double x : v) arr.push_back(double_to_string(x));
    return arr;
}

inline std::vector<double> doubles_from_json(const nlohmann::json& arr) {
    std::vector<double> v;
    v.reserve(arr.size());
    for (const auto& e : arr) {
        if (e.is_string()) v.push_back(std::strtod(e.get<std::string>().c_str(), nullptr));
        else v.push_back(e.get<double>());
    }
    return v;
}

} // namespace detail

inline nlohmann::json AffineWhitenMap::to_json() const {
    nlohmann::json j{{"format", "stratmc-transport"}, {"version", 1},
                     {"kind", "affine-whiten"}, {"dim", dim()}};
    j["mean"] = detail::doubles_to_json(mean_);
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : lower_) rows.push_back(detail::doubles_to_json(r));
    j["lower"] = rows;
    return j;
}

} // namespace stratmc
