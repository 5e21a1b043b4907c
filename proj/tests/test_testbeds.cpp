#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <stratmc/stats_tests.hpp>
#include <stratmc/testbeds.hpp>

#include "oracle_helpers.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <vector>

using namespace stratmc;

TEST_CASE("target function catalogue") {
    auto jp = parse_target_function("jplus_1.2");
    CHECK(jp.fn({1.3, 1.3}) == 1.0);
    CHECK(jp.fn({1.3, 1.1}) == 0.0);
    auto jm = parse_target_function("jminus_0.95");
    CHECK(jm.fn({0.9}) == 1.0);
    CHECK(jm.fn({0.96}) == 0.0);

    auto h2 = parse_target_function("h2");
    CHECK(h2.fn({2.0, 2.0}) == doctest::Approx(std::sin(4.0)));
    CHECK(h2.fn({0.5, 9.0}) == 0.0);
    auto h1 = parse_target_function("h1");
    CHECK(h1.fn({2.0, 2.0}) == doctest::Approx(1.0 / std::log(4.0)));
    auto h3 = parse_target_function("h3");
    CHECK(h3.fn({2.0, 3.0, 1.5}) == doctest::Approx(1.0 / 9.0));

    auto g1 = parse_target_function("g1");
    CHECK(g1.fn({0.02, -1.0}) == 1.0);
    CHECK(g1.fn({0.005, -1.0}) == 0.0);
    auto g4 = parse_target_function("g4");
    CHECK(g4.fn({0.0, 5.0}) == doctest::Approx(std::fabs(std::cos(1.0))));

    auto rho1 = parse_target_function("rho1");
    CHECK(evaluate_target(rho1, {0.0}) == doctest::Approx(std::sin(1.0)));
    CHECK_THROWS_AS(evaluate_target(rho1, {0.0, 1.0}), std::invalid_argument);
    CHECK_THROWS_AS(parse_target_function("nope"), std::invalid_argument);
    CHECK_THROWS_AS(parse_target_function("jplus_abc"), std::invalid_argument);
}

TEST_CASE("bivariate exponential testbed marginals and oracle") {
    auto bed = testbed_by_name("example1");
    RngStream rng(2, 0);
    const int n = 100000;
    std::vector<double> x1s, x2s;
    x1s.reserve(n);
    x2s.reserve(n);
    for (int i = 0; i < n; ++i) {
        auto x = bed.sampler(rng);
        x1s.push_back(x[0]);
        x2s.push_back(x[1]);
    }
    CHECK(ks_one_sample(x1s, [](double t) { return 1.0 - std::exp(-t); }).p_value > 0.001);
    CHECK(ks_one_sample(x2s, [](double t) { return 1.0 - 1.0 / (t + 1.0); }).p_value > 0.001);

    CHECK(*bed.oracle("jplus_1.2") == doctest::Approx(0.0324369414809).epsilon(1e-9));
    CHECK(*bed.oracle("jplus_2.0") == doctest::Approx(0.0008262507256).epsilon(1e-9));
    CHECK(*bed.oracle("jplus_0.5") == doctest::Approx(0.3149110351607).epsilon(1e-9));
    CHECK_FALSE(bed.oracle("g1").has_value());

    // transport pushes stratified-free normals onto the same law
    RngStream rng2(2, 1);
    std::vector<double> t1s;
    for (int i = 0; i < 20000; ++i)
        t1s.push_back(bed.exact_transport->forward(standard_normal_vector(2, rng2))[0]);
    CHECK(ks_one_sample(t1s, [](double t) { return 1.0 - std::exp(-t); }).p_value > 0.001);

    // round trip of the transport
    RngStream rng3(2, 2);
    for (int i = 0; i < 300; ++i) {
        auto z = standard_normal_vector(2, rng3);
        auto back = bed.exact_transport->inverse(bed.exact_transport->forward(z));
        CHECK(std::fabs(back[0] - z[0]) < 1e-7);
        CHECK(std::fabs(back[1] - z[1]) < 1e-7);
    }
}

TEST_CASE("mixture testbed oracle values") {
    auto bed = testbed_by_name("exampleA1");
    CHECK(*bed.oracle("jminus_0.95") == doctest::Approx(0.9351).epsilon(1.1e-4));
    CHECK(*bed.oracle("jminus_0.99") == doctest::Approx(0.9875).epsilon(1.1e-4));

    // oracle vs direct sampling at 4 sd
    RngStream rng(3, 0);
    const int n = 200000;
    long below = 0;
    double rho2_acc = 0.0;
    auto rho2 = parse_target_function("rho2");
    for (int i = 0; i < n; ++i) {
        double x = bed.sampler(rng)[0];
        if (x <= 0.95) ++below;
        rho2_acc += rho2.fn({x});
    }
    double phat = below / double(n);
    double se = std::sqrt(phat * (1.0 - phat) / n);
    CHECK(std::fabs(phat - *bed.oracle("jminus_0.95")) < 4.0 * se);
    CHECK(std::fabs(rho2_acc / n - *bed.oracle("rho2")) < 0.005);

    // quantile transport matches the mixture cdf
    RngStream rng2(3, 1);
    std::vector<double> ts;
    for (int i = 0; i < 10000; ++i)
        ts.push_back(bed.exact_transport->forward(standard_normal_vector(1, rng2))[0]);
    auto cdf = [](double t) { return stratmc::detail::mixtureA1_cdf(t); };
    CHECK(ks_one_sample(ts, cdf).p_value > 0.001);
}

TEST_CASE("student-t testbed") {
    auto bed = testbed_by_name("student-t-d3");
    CHECK(bed.dim == 3);
    CHECK(bed.exact_transport == nullptr);

    RngStream rng(4, 0);
    const int n = 1000000;
    std::vector<double> mean(3, 0.0);
    std::vector<std::vector<double>> cov(3, std::vector<double>(3, 0.0));
    std::vector<std::vector<double>> rows;
    rows.reserve(n);
    for (int i = 0; i < n; ++i) {
        auto x = bed.sampler(rng);
        for (int a = 0; a < 3; ++a) mean[a] += x[a];
        rows.push_back(std::move(x));
    }
    for (auto& m : mean) m /= n;
    for (const auto& x : rows)
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) cov[a][b] += (x[a] - mean[a]) * (x[b] - mean[b]);
    // covariance of t_5 with scale Sigma is (5/3) Sigma
    for (int a = 0; a < 3; ++a) {
        CHECK(std::fabs(mean[a]) < 0.01);
        for (int b = 0; b < 3; ++b) {
            cov[a][b] /= n;
            double sigma = (a == b) ? 1.0 : 0.2;
            CHECK(cov[a][b] == doctest::Approx(sigma * 5.0 / 3.0).epsilon(0.05));
        }
    }

    // univariate t_5 cdf via the incomplete beta as an independent oracle
    auto spec1 = student_t_spec(1);
    auto chol1 = cholesky_lower(spec1.sigma);
    RngStream rng2(4, 1);
    std::vector<double> t1;
    for (int i = 0; i < 20000; ++i)
        t1.push_back(student_t_sampler(spec1, chol1, rng2)[0]);
    double nu = 5.0;
    auto t_cdf = [nu](double t) {
        double w = nu / (nu + t * t);
        double half_tail = 0.5 * beta_inc(nu / 2.0, 0.5, w);
        return (t >= 0.0) ? 1.0 - half_tail : half_tail;
    };
    CHECK(ks_one_sample(t1, t_cdf).p_value > 0.001);
}

TEST_CASE("30-dimensional synthetic testbed") {
    auto bed = testbed_by_name("synth30");
    CHECK(bed.dim == 30);

    RngStream rng(5, 0);
    const int n = 100000;
    std::vector<double> mean(30, 0.0);
    double block_cov[5][5] = {};
    std::vector<double> c9s, c20s;  // declared-independent pair
    c9s.reserve(n);
    c20s.reserve(n);
    std::vector<double> block_mean(5, 0.0);
    std::vector<std::vector<double>> first5;
    first5.reserve(n);
    for (int i = 0; i < n; ++i) {
        auto x = bed.sampler(rng);
        for (int a = 0; a < 30; ++a) mean[a] += x[a];
        first5.emplace_back(x.begin(), x.begin() + 5);
        c9s.push_back(x[9]);
        c20s.push_back(x[20]);
    }
    for (auto& m : mean) m /= n;

    // expected per-coordinate means
    std::vector<double> expect(30, 0.0);
    double mu1[5] = {-1, 1, 2, 1, 1};
    double mu2[5] = {1.0, -0.5, 0.0, 1.2, -0.8};
    for (int i = 0; i < 5; ++i) { expect[i] = mu1[i]; expect[15 + i] = mu2[i]; }
    double exps[4] = {0.4, 0.5, 0.6, 0.7};
    double gams[2] = {1.6, 1.8};
    for (int i = 0; i < 4; ++i) { expect[9 + i] = exps[i]; expect[24 + i] = exps[i]; }
    for (int i = 0; i < 2; ++i) { expect[13 + i] = 2.0 * gams[i]; expect[28 + i] = 2.0 * gams[i]; }
    for (int a = 0; a < 30; ++a) {
        double tol = (a < 5) ? 0.12 : 0.03;  // the big block has sd up to sqrt(55)
        CHECK(std::fabs(mean[a] - expect[a]) < tol);
    }

    CHECK(std::fabs(pearson_correlation(c9s, c20s)) < 0.02);

    for (const auto& r : first5)
        for (int a = 0; a < 5; ++a)
            for (int b = 0; b < 5; ++b)
                block_cov[a][b] += (r[a] - mean[a]) * (r[b] - mean[b]);
    double sigma1[5][5] = {{55, 8, 17, 19, 23},
                           {8, 8, 8, 9, 11},
                           {17, 8, 13, 15, 20},
                           {19, 9, 15, 23, 24},
                           {23, 11, 20, 24, 32}};
    for (int a = 0; a < 5; ++a)
        for (int b = 0; b < 5; ++b)
            CHECK(block_cov[a][b] / n == doctest::Approx(sigma1[a][b]).epsilon(0.10));

    // exact transport round trip and law agreement on a marginal
    RngStream rng2(5, 1);
    std::vector<double> gamma_coord;
    for (int i = 0; i < 5000; ++i) {
        auto z = standard_normal_vector(30, rng2);
        auto x = bed.exact_transport->forward(z);
        auto back = bed.exact_transport->inverse(x);
        if (i < 200)
            for (int a = 0; a < 30; ++a) CHECK(std::fabs(back[a] - z[a]) < 1e-6);
        gamma_coord.push_back(x[13]);
    }
    auto gamma_cdf = [](double t) { return chi2_cdf(2.0 * t / 1.6, 4); };
    CHECK(ks_one_sample(gamma_coord, gamma_cdf).p_value > 0.001);
}

TEST_CASE("csv ingestion") {
    const char* path = "test_csv_tmp.csv";
    {
        std::ofstream out(path);
        out << "a,b\n1,10\n3,30\n6,60\n";
    }
    auto plain = load_csv_2d(path, false);
    REQUIRE(plain.size() == 3);
    CHECK(plain[0][0] == 1.0);
    CHECK(plain[2][1] == 60.0);

    auto diff = load_csv_2d(path, true);
    REQUIRE(diff.size() == 2);
    CHECK(diff[0][0] == 2.0);
    CHECK(diff[1][0] == 3.0);
    CHECK(diff[0][1] == 20.0);

    {
        std::ofstream out(path);
        out << "x,y\n1,1\n2,2\n3,3\n4,4\n5,5\nbad,7\n";
    }
    try {
        load_csv_2d(path, false);
        CHECK(false);
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("line 7") != std::string::npos);
    }

    {
        std::ofstream out(path);
        out << "ts,v1,v2\n2020-01-01,1.5,2.5\n2020-01-02,2.5,3.5\n";
    }
    auto skip_text = load_csv_2d(path, false);
    REQUIRE(skip_text.size() == 2);
    CHECK(skip_text[0][0] == 1.5);
    CHECK(skip_text[1][1] == 3.5);

    std::remove(path);
}
