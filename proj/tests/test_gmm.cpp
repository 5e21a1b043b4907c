#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <stratmc/gmm.hpp>
#include <stratmc/model_io.hpp>
#include <stratmc/stats_tests.hpp>

#include <cmath>
#include <vector>

using namespace stratmc;

namespace {

std::vector<std::vector<double>> two_component_1d(int n, uint64_t seed) {
    RngStream rng(seed, 0);
    std::vector<std::vector<double>> rows;
    rows.reserve(n);
    for (int i = 0; i < n; ++i) {
        double mu = (rng.next_open01() < 0.5) ? -2.0 : 2.0;
        rows.push_back({mu + rng.normal()});
    }
    return rows;
}

} // namespace

TEST_CASE("single component equals sample moments") {
    RngStream rng(5, 0);
    std::vector<std::vector<double>> rows;
    for (int i = 0; i < 500; ++i)
        rows.push_back({1.0 + 2.0 * rng.normal(), -0.5 + 0.5 * rng.normal()});
    auto fit = fit_gmm(rows, 1, 50, 0);

    double m0 = 0.0, m1 = 0.0;
    for (const auto& r : rows) { m0 += r[0]; m1 += r[1]; }
    m0 /= rows.size();
    m1 /= rows.size();
    CHECK(fit.model.means[0][0] == doctest::Approx(m0).epsilon(1e-9));
    CHECK(fit.model.means[0][1] == doctest::Approx(m1).epsilon(1e-9));

    double c00 = 0.0;
    for (const auto& r : rows) c00 += (r[0] - m0) * (r[0] - m0);
    c00 = c00 / rows.size() + 1e-6;
    double l00 = fit.model.chol[0][0][0];
    CHECK(l00 * l00 == doctest::Approx(c00).epsilon(1e-9));
}

TEST_CASE("two separated components are recovered") {
    auto rows = two_component_1d(5000, 42);
    auto fit = fit_gmm(rows, 2, 200, 7);
    double lo = std::min(fit.model.means[0][0], fit.model.means[1][0]);
    double hi = std::max(fit.model.means[0][0], fit.model.means[1][0]);
    CHECK(lo == doctest::Approx(-2.0).epsilon(0.05));
    CHECK(hi == doctest::Approx(2.0).epsilon(0.05));
    CHECK(fit.model.weights[0] == doctest::Approx(0.5).epsilon(0.1));
}

TEST_CASE("EM log-likelihood is non-decreasing") {
    for (uint64_t seed : {1u, 2u, 3u}) {
        auto rows = two_component_1d(800, 100 + seed);
        auto fit = fit_gmm(rows, 3, 100, seed);
        for (size_t i = 1; i < fit.loglik_trace.size(); ++i)
            CHECK(fit.loglik_trace[i] >= fit.loglik_trace[i - 1] -
                                             1e-9 * (1.0 + std::fabs(fit.loglik_trace[i - 1])));
    }
    CHECK_THROWS_AS(fit_gmm(two_component_1d(5, 1), 2, 10, 0), std::domain_error);
}

TEST_CASE("sampling matches the standard normal for a unit component") {
    GmmModel m;
    m.weights = {1.0};
    m.means = {{0.0, 0.0}};
    m.chol = {Matrix{{1.0, 0.0}, {0.0, 1.0}}};

    CHECK(gmm_log_prob(m, {0.0, 0.0}) == doctest::Approx(-kLog2Pi).epsilon(1e-12));

    RngStream rng(9, 9);
    auto rows = gmm_sample(m, 10000, rng);
    std::vector<double> xs, ys;
    for (const auto& r : rows) { xs.push_back(r[0]); ys.push_back(r[1]); }
    auto cdf = [](double v) { return std_normal_cdf(v); };
    CHECK(ks_one_sample(xs, cdf).p_value > 0.001);
    CHECK(ks_one_sample(ys, cdf).p_value > 0.001);
}

TEST_CASE("mixture sample mean matches the weighted component means") {
    GmmModel m;
    m.weights = {0.3, 0.7};
    m.means = {{-1.0}, {2.0}};
    m.chol = {Matrix{{0.5}}, Matrix{{1.5}}};
    double expect = 0.3 * -1.0 + 0.7 * 2.0;

    RngStream rng(11, 0);
    double acc = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) acc += m.sample(rng)[0];
    CHECK(acc / n == doctest::Approx(expect).epsilon(0.02));
}

TEST_CASE("density normalizes on a 1-d grid") {
    auto rows = two_component_1d(2000, 77);
    auto fit = fit_gmm(rows, 2, 100, 3);
    double mass = 0.0;
    const int grid = 4000;
    double lo = -10.0, hi = 10.0, h = (hi - lo) / grid;
    for (int i = 0; i <= grid; ++i) {
        double x = lo + i * h;
        double w = (i == 0 || i == grid) ? 0.5 : 1.0;
        mass += w * std::exp(gmm_log_prob(fit.model, {x}));
    }
    mass *= h;
    CHECK(mass == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("gmm transport is sampling-only and serializable") {
    auto rows = two_component_1d(1000, 50);
    auto fit = fit_gmm(rows, 2, 100, 1);
    GmmSamplerMap map(fit.model);
    CHECK_FALSE(map.invertible());
    CHECK_THROWS_AS(map.forward({0.0}), NoInverseError);
    CHECK_THROWS_AS(map.inverse({0.0}), NoInverseError);

    auto j = map.to_json();
    auto loaded = transport_from_json(j);
    CHECK(loaded->kind() == "gmm");
    RngStream a(4, 2), b(4, 2);
    for (int i = 0; i < 200; ++i)
        CHECK(map.sample(a)[0] == loaded->sample(b)[0]);
    CHECK(map.log_prob({0.33}) == loaded->log_prob({0.33}));

    CHECK_THROWS_AS(transport_from_json(j, 5), ModelFormatError);
}
