#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <stratmc/estimate.hpp>

#include <cmath>
#include <vector>

using namespace stratmc;

TEST_CASE("crude monte carlo") {
    RngStream rng(1, 1);
    auto rep = cmc_estimate([](RngStream&) { return 3.25; }, 100, rng);
    CHECK(rep.estimate == doctest::Approx(3.25));
    CHECK(rep.sd == doctest::Approx(0.0));

    RngStream rng2(1, 2);
    auto bern = cmc_estimate(
        [](RngStream& r) { return r.next_open01() < 0.5 ? 1.0 : 0.0; }, 10000, rng2);
    CHECK(bern.estimate > 0.485);
    CHECK(bern.estimate < 0.515);
    CHECK(bern.sd == doctest::Approx(0.005).epsilon(0.05));

    CHECK_THROWS_AS(cmc_estimate([](RngStream&) { return 0.0; }, 1, rng), BudgetError);
}

TEST_CASE("cmc on the bivariate exponential testbed hits the closed form") {
    auto bed = testbed_by_name("example1");
    auto f = parse_target_function("jplus_1.2");
    RngStream rng(7, 0);
    auto rep = cmc_estimate(
        [&](RngStream& r) { return f.fn(bed.sampler(r)); }, 200000, rng);
    double truth = *bed.oracle("jplus_1.2");
    CHECK(truth == doctest::Approx(0.0324369).epsilon(1e-4));
    CHECK(std::fabs(rep.estimate - truth) < 4.0 * rep.sd);
}

TEST_CASE("proportional allocation") {
    auto a = proportional_allocation(std::vector<double>(4, 0.25), 4096);
    CHECK(a.counts == std::vector<long>{1024, 1024, 1024, 1024});

    auto b = proportional_allocation({0.5, 0.3, 0.2}, 10);
    CHECK(b.counts == std::vector<long>{5, 3, 2});

    auto c = proportional_allocation({0.9, 0.1}, 4, 2);
    CHECK(c.counts == std::vector<long>{2, 2});

    CHECK_THROWS_AS(proportional_allocation({0.5, 0.5}, 3, 2), BudgetError);
    CHECK_THROWS_AS(proportional_allocation({0.5, 0.4}, 100), std::invalid_argument);
}

TEST_CASE("optimal allocation") {
    auto equal = optimal_allocation(std::vector<double>(4, 0.25),
                                    std::vector<double>(4, 1.7), 4096);
    CHECK(equal.counts == proportional_allocation(std::vector<double>(4, 0.25), 4096).counts);

    auto split = optimal_allocation({0.5, 0.5}, {1.0, 3.0}, 400);
    CHECK(split.counts == std::vector<long>{100, 300});

    auto floored = optimal_allocation({0.5, 0.5}, {0.0, 1.0}, 100, 2);
    CHECK(floored.counts == std::vector<long>{2, 98});

    auto fb = optimal_allocation({0.5, 0.5}, {0.0, 0.0}, 100);
    CHECK(fb.proportional_fallback);
    CHECK(fb.counts == std::vector<long>{50, 50});
}

TEST_CASE("allocation conservation property") {
    RngStream rng(55, 0);
    for (int trial = 0; trial < 200; ++trial) {
        int m = 2 + static_cast<int>(rng.below(6));
        std::vector<double> p(m), sd(m);
        double sum = 0.0;
        for (auto& v : p) { v = rng.next_open01(); sum += v; }
        for (auto& v : p) v /= sum;
        for (auto& v : sd) v = rng.next_open01() * 3.0;
        long R = 2 * m + static_cast<long>(rng.below(5000));
        auto a = proportional_allocation(p, R);
        auto b = optimal_allocation(p, sd, R);
        long ta = 0, tb = 0;
        for (size_t j = 0; j < p.size(); ++j) { ta += a.counts[j]; tb += b.counts[j]; }
        CHECK(ta == R);
        CHECK(tb == R);
        for (long c : b.counts) CHECK(c >= 2);
    }
}

TEST_CASE("stratified estimate basics") {
    auto scheme = build_cartesian(1, 2);
    IdentityMap id(1);

    TargetFunction constant{"const", 0, [](const std::vector<double>&) { return 2.5; }};
    auto alloc = proportional_allocation(scheme.stratum_probs, 100);
    auto rep = stratified_estimate(scheme, id, constant, alloc, 3, 0, Method::Prop);
    CHECK(rep.estimate == doctest::Approx(2.5));
    CHECK(rep.sd == doctest::Approx(0.0));

    // indicator aligned with the stratum boundary: exactly 0.5, zero variance
    TargetFunction ind{"pos", 0, [](const std::vector<double>& x) {
                           return x[0] > 0.0 ? 1.0 : 0.0;
                       }};
    auto alloc2 = proportional_allocation(scheme.stratum_probs, 1000);
    auto rep2 = stratified_estimate(scheme, id, ind, alloc2, 4, 0, Method::Prop);
    CHECK(rep2.estimate == doctest::Approx(0.5));
    CHECK(rep2.sd == doctest::Approx(0.0));
}

TEST_CASE("stratified estimation rejects sampler-only transports") {
    auto scheme = build_cartesian(2, 2);
    struct SamplerOnly : TransportMap {
        int dim() const override { return 2; }
        std::string kind() const override { return "sampler-only"; }
        bool invertible() const override { return false; }
        std::vector<double> forward(const std::vector<double>&) const override {
            throw NoInverseError("no forward");
        }
        std::vector<double> inverse(const std::vector<double>&) const override {
            throw NoInverseError("no inverse");
        }
        double log_prob(const std::vector<double>&) const override { return 0.0; }
    } sampler_only;
    TargetFunction f{"f", 0, [](const std::vector<double>&) { return 1.0; }};
    auto alloc = proportional_allocation(scheme.stratum_probs, 100);
    CHECK_THROWS_AS(stratified_estimate(scheme, sampler_only, f, alloc, 0, 0), NoInverseError);
}

TEST_CASE("optimal pipeline on a two-scale target") {
    // piecewise scaling makes the right stratum noisier than the left
    auto scheme = build_cartesian(1, 2);
    IdentityMap id(1);
    TargetFunction f{"twoscale", 0, [](const std::vector<double>& x) {
                         return x[0] > 0.0 ? 3.0 * x[0] : 0.1 * x[0];
                     }};

    const int reps = 200;
    const long R = 512;
    double var_opt = 0.0, var_prop = 0.0, mean_opt = 0.0, mean_prop = 0.0;
    std::vector<double> opts, props;
    for (int r = 0; r < reps; ++r) {
        auto prop_alloc = proportional_allocation(scheme.stratum_probs, R);
        auto prop = stratified_estimate(scheme, id, f, prop_alloc, 100, derive_stream(9, r),
                                        Method::Prop);
        auto opt = run_optimal_pipeline(scheme, id, f, R, 0.125, 100, derive_stream(9, r));
        props.push_back(prop.estimate);
        opts.push_back(opt.estimate);
        CHECK(opt.pilot_budget == 64);
    }
    for (double v : props) mean_prop += v;
    for (double v : opts) mean_opt += v;
    mean_prop /= reps;
    mean_opt /= reps;
    for (double v : props) var_prop += (v - mean_prop) * (v - mean_prop);
    for (double v : opts) var_opt += (v - mean_opt) * (v - mean_opt);
    var_prop /= reps - 1;
    var_opt /= reps - 1;
    CHECK(var_opt <= var_prop * 1.05);

    // equal within-stratum spread: optimal split collapses to proportional
    TargetFunction sym{"sym", 0, [](const std::vector<double>& x) { return x[0]; }};
    auto piloted = run_optimal_pipeline(scheme, id, sym, 1000, 0.125, 5, 11);
    CHECK(std::labs(piloted.per_stratum[0].count - piloted.per_stratum[1].count) <= 60);
    CHECK(piloted.posthoc_var.has_value());
    CHECK(*piloted.posthoc_d2 == doctest::Approx(*piloted.posthoc_var * 1000.0));
}

TEST_CASE("confidence intervals") {
    EstimateReport rep;
    rep.estimate = 0.5;
    rep.sd = 0.01;
    auto [lo, hi] = confidence_interval(rep, 0.05);
    CHECK(lo == doctest::Approx(0.48040).epsilon(1e-4));
    CHECK(hi == doctest::Approx(0.51960).epsilon(1e-4));

    rep.sd = 0.0;
    auto [dlo, dhi] = confidence_interval(rep, 0.05);
    CHECK(dlo == rep.estimate);
    CHECK(dhi == rep.estimate);

    // coverage of the CMC interval on a Bernoulli target
    int covered = 0;
    const int reps = 200;
    for (int r = 0; r < reps; ++r) {
        RngStream rng(2024, derive_stream(1, r));
        auto b = cmc_estimate(
            [](RngStream& g) { return g.next_open01() < 0.3 ? 1.0 : 0.0; }, 10000, rng);
        auto [blo, bhi] = confidence_interval(b, 0.05);
        if (blo <= 0.3 && 0.3 <= bhi) ++covered;
    }
    double frac = covered / static_cast<double>(reps);
    CHECK(frac >= 0.90);
    CHECK(frac <= 0.99);
}

TEST_CASE("accuracy metric") {
    CHECK(accuracy(1.0, 0.9) == doctest::Approx(1.0));
    CHECK(accuracy(0.0324, 0.0314) == doctest::Approx(1.5105).epsilon(1e-3));
    CHECK(std::isinf(accuracy(0.25, 0.25)));
    CHECK_THROWS_AS(accuracy(0.0, 0.1), std::domain_error);
}

TEST_CASE("variance decomposition") {
    // uniform on {0,1,2,3} split into {0,1} and {2,3}
    auto dec = variance_decomposition({0.5, 0.5}, {0.5, 2.5}, {0.25, 0.25});
    CHECK(dec.within == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(dec.between == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(dec.total == doctest::Approx(1.25).epsilon(1e-12));

    auto one = variance_decomposition({1.0}, {0.7}, {0.3});
    CHECK(one.between == doctest::Approx(0.0));
    CHECK(one.total == doctest::Approx(0.3));

    auto flat = variance_decomposition({0.3, 0.7}, {1.1, 1.1}, {0.2, 0.5});
    CHECK(flat.between == doctest::Approx(0.0));

    // brute force on random discrete toys
    RngStream rng(77, 1);
    for (int trial = 0; trial < 10; ++trial) {
        int m = 2 + static_cast<int>(rng.below(4));
        int per = 3;
        std::vector<double> p(m), means(m), vars(m);
        std::vector<std::vector<double>> values(m, std::vector<double>(per));
        double psum = 0.0;
        for (int j = 0; j < m; ++j) {
            p[j] = 0.2 + rng.next_open01();
            psum += p[j];
            for (int i = 0; i < per; ++i) values[j][i] = rng.uniform(-2.0, 2.0);
        }
        for (auto& v : p) v /= psum;
        for (int j = 0; j < m; ++j) {
            double mu = 0.0;
            for (double v : values[j]) mu += v;
            mu /= per;
            double s2 = 0.0;
            for (double v : values[j]) s2 += (v - mu) * (v - mu);
            means[j] = mu;
            vars[j] = s2 / per;  // population variance within the stratum
        }
        // enumerate the full discrete distribution directly
        double grand = 0.0, total = 0.0;
        for (int j = 0; j < m; ++j)
            for (double v : values[j]) grand += p[j] / per * v;
        for (int j = 0; j < m; ++j)
            for (double v : values[j]) total += p[j] / per * (v - grand) * (v - grand);
        auto d2 = variance_decomposition(p, means, vars);
        CHECK(std::fabs(d2.total - total) < 1e-12);
    }
}

TEST_CASE("neyman split minimizes the allocation variance on a grid") {
    RngStream rng(88, 0);
    for (int trial = 0; trial < 10; ++trial) {
        int m = 2 + static_cast<int>(rng.below(3));
        std::vector<double> p(m), sigma(m);
        double psum = 0.0;
        for (auto& v : p) { v = 0.1 + rng.next_open01(); psum += v; }
        for (auto& v : p) v /= psum;
        for (auto& v : sigma) v = 0.1 + 2.0 * rng.next_open01();

        auto sigma_str = [&](const std::vector<double>& x) {
            double acc = 0.0;
            for (int j = 0; j < m; ++j) acc += p[j] * p[j] * sigma[j] * sigma[j] / x[j];
            return acc;
        };
        double dsum = 0.0;
        for (int j = 0; j < m; ++j) dsum += p[j] * sigma[j];
        std::vector<double> star(m);
        for (int j = 0; j < m; ++j) star[j] = p[j] * sigma[j] / dsum;
        double at_star = sigma_str(star);
        CHECK(at_star == doctest::Approx(dsum * dsum).epsilon(1e-12));

        // exhaustive grid over compositions of G into m positive parts
        const int G = 18;
        std::vector<int> comp(m, 1);
        std::function<void(int, int)> walk = [&](int axis, int left) {
            if (axis == m - 1) {
                comp[axis] = left;
                std::vector<double> x(m);
                for (int j = 0; j < m; ++j) x[j] = comp[j] / static_cast<double>(G);
                CHECK(sigma_str(x) >= at_star - 1e-9);
                return;
            }
            for (int c = 1; c <= left - (m - 1 - axis); ++c) {
                comp[axis] = c;
                walk(axis + 1, left - c);
            }
        };
        walk(0, G);
    }
}

TEST_CASE("stratified estimator is statistically unbiased") {
    auto bed = testbed_by_name("example1");
    const auto& map = *bed.exact_transport;
    auto f = parse_target_function("jplus_1.2");
    double truth = *bed.oracle("jplus_1.2");
    auto scheme = build_cartesian(2, 2);
    auto alloc = proportional_allocation(scheme.stratum_probs, 256);

    const int reps = 500;
    std::vector<double> vals;
    vals.reserve(reps);
    for (int r = 0; r < reps; ++r)
        vals.push_back(stratified_estimate(scheme, map, f, alloc, 314,
                                           derive_stream(21, r), Method::Prop)
                           .estimate);
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= reps;
    double sd = 0.0;
    for (double v : vals) sd += (v - mean) * (v - mean);
    sd = std::sqrt(sd / (reps - 1));
    CHECK(std::fabs(mean - truth) < 4.0 * sd / std::sqrt(double(reps)));
}

TEST_CASE("high-variance coordinate selection") {
    IdentityMap id(3);
    TargetFunction constant{"c", 0, [](const std::vector<double>&) { return 1.0; }};
    auto dims = select_high_variance_dims(id, constant, 3, 2, 3, 1024, 5, 0);
    CHECK(dims == std::vector<int>{0, 1});  // all-zero sd, tie-break by index

    TargetFunction first{"x0", 0, [](const std::vector<double>& x) { return x[0]; }};
    for (uint64_t seed : {11u, 12u, 13u}) {
        auto top = select_high_variance_dims(id, first, 3, 1, 3, 1024, seed, 0);
        CHECK(top == std::vector<int>{0});
    }
}
