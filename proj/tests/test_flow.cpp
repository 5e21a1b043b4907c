#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <stratmc/estimate.hpp>
#include <stratmc/experiment.hpp>
#include <stratmc/flow.hpp>
#include <stratmc/stats_tests.hpp>

#include <cmath>
#include <vector>

using namespace stratmc;

namespace {

std::vector<std::vector<double>> gaussian_rows(int n, int d, uint64_t seed,
                                               double mu = 0.0, double sigma = 1.0) {
    RngStream rng(seed, 0);
    std::vector<std::vector<double>> rows(n, std::vector<double>(d));
    for (auto& r : rows)
        for (auto& v : r) v = mu + sigma * rng.normal();
    return rows;
}

// determinant of the forward Jacobian by central differences + LU
double numeric_forward_logdet(const TransportMap& map, const std::vector<double>& z) {
    int d = map.dim();
    double h = 1e-6;
    std::vector<std::vector<double>> J(d, std::vector<double>(d));
    for (int j = 0; j < d; ++j) {
        auto zp = z, zm = z;
        zp[j] += h;
        zm[j] -= h;
        auto fp = map.forward(zp), fm = map.forward(zm);
        for (int i = 0; i < d; ++i) J[i][j] = (fp[i] - fm[i]) / (2.0 * h);
    }
    // LU with partial pivoting
    double logdet = 0.0;
    for (int k = 0; k < d; ++k) {
        int piv = k;
        for (int i = k + 1; i < d; ++i)
            if (std::fabs(J[i][k]) > std::fabs(J[piv][k])) piv = i;
        if (piv != k) std::swap(J[piv], J[k]);
        logdet += std::log(std::fabs(J[k][k]));
        for (int i = k + 1; i < d; ++i) {
            double f = J[i][k] / J[k][k];
            for (int j = k; j < d; ++j) J[i][j] -= f * J[k][j];
        }
    }
    return logdet;
}

double map_nll_point(CouplingFlowMap& map, const std::vector<double>& x) {
    return -map.log_prob(x);
}

} // namespace

TEST_CASE("identity map") {
    IdentityMap id(2);
    std::vector<double> z{0.3, -1.1};
    CHECK(id.forward(z) == z);
    CHECK(id.inverse(z) == z);
    CHECK(id.log_prob({0.0, 0.0}) == doctest::Approx(-kLog2Pi).epsilon(1e-12));
}

TEST_CASE("affine whiten map") {
    auto aff = AffineWhitenMap::diagonal({1.0}, {2.0});
    CHECK(aff.forward({0.5})[0] == doctest::Approx(2.0));
    CHECK(aff.inverse({2.0})[0] == doctest::Approx(0.5));

    auto aff0 = AffineWhitenMap::diagonal({0.0}, {2.0});
    double expect = std::log(std_normal_pdf(0.0) / 2.0);
    CHECK(aff0.log_prob({0.0}) == doctest::Approx(expect).epsilon(1e-12));

    // full lower-triangular round trip
    AffineWhitenMap tri({1.0, -2.0}, {{2.0, 0.0}, {0.7, 1.5}});
    RngStream rng(3, 1);
    for (int i = 0; i < 100; ++i) {
        auto z = standard_normal_vector(2, rng);
        auto back = tri.inverse(tri.forward(z));
        CHECK(std::fabs(back[0] - z[0]) < 1e-12);
        CHECK(std::fabs(back[1] - z[1]) < 1e-12);
    }
    CHECK_THROWS_AS(AffineWhitenMap::diagonal({0.0}, {-1.0}), std::domain_error);
}

TEST_CASE("fresh coupling flow is the identity") {
    RngStream rng(17, 0);
    CouplingFlowMap flow(3, 6, 16, rng);
    RngStream zr(18, 0);
    for (int i = 0; i < 100; ++i) {
        auto z = standard_normal_vector(3, zr);
        auto x = flow.forward(z);
        for (int c = 0; c < 3; ++c) CHECK(x[c] == doctest::Approx(z[c]).epsilon(1e-14));
    }

    RngStream rng1(17, 1);
    CouplingFlowMap spline1(1, 4, 8, rng1);
    for (double v : {-3.9, -0.5, 0.0, 0.7, 3.2, 5.0})
        CHECK(spline1.forward({v})[0] == doctest::Approx(v).epsilon(1e-12));
}

TEST_CASE("coupling flow round trip after random perturbation") {
    RngStream rng(29, 0);
    for (int d : {2, 4, 30}) {
        CouplingFlowMap flow(d, 4, 16, rng);
        // perturb all parameters, including the zero-initialized output layers
        RngStream pr(29, d);
        for (auto& layer : flow.layers())
            std::visit([&](auto& l) { for (auto& p : l.theta) p += 0.3 * pr.normal(); }, layer);
        flow.refresh_layers();

        RngStream zr(30, d);
        double worst = 0.0;
        for (int i = 0; i < 1000; ++i) {
            auto z = standard_normal_vector(d, zr);
            auto back = flow.inverse(flow.forward(z));
            for (int c = 0; c < d; ++c)
                worst = std::max(worst, std::fabs(back[c] - z[c]));
        }
        CHECK(worst < 1e-8);
    }
}

TEST_CASE("spline flow round trip") {
    RngStream rng(31, 0);
    CouplingFlowMap flow(1, 6, 12, rng);
    RngStream pr(31, 1);
    for (auto& layer : flow.layers())
        std::visit([&](auto& l) { for (auto& p : l.theta) p += 0.5 * pr.normal(); }, layer);
    flow.refresh_layers();

    RngStream zr(32, 0);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        double z = zr.normal() * 2.0;
        auto back = flow.inverse(flow.forward({z}));
        worst = std::max(worst, std::fabs(back[0] - z));
    }
    CHECK(worst < 1e-8);
}

TEST_CASE("log_prob matches numeric jacobian determinant") {
    RngStream rng(41, 0);
    for (int d : {2, 4}) {
        CouplingFlowMap flow(d, 4, 8, rng);
        RngStream pr(41, d);
        for (auto& layer : flow.layers())
            std::visit([&](auto& l) { for (auto& p : l.theta) p += 0.2 * pr.normal(); }, layer);
        flow.refresh_layers();

        RngStream zr(42, d);
        for (int i = 0; i < 50; ++i) {
            auto z = standard_normal_vector(d, zr);
            auto x = flow.forward(z);
            double q = 0.0;
            for (double v : z) q += v * v;
            double expected = -0.5 * q - 0.5 * d * kLog2Pi - numeric_forward_logdet(flow, z);
            CHECK(flow.log_prob(x) == doctest::Approx(expected).epsilon(1e-4));
        }
    }
}

TEST_CASE("analytic nll gradients match finite differences") {
    for (int d : {1, 2, 3}) {
        RngStream rng(51, d);
        CouplingFlowMap flow(d, 3, 8, rng);
        RngStream pr(52, d);
        for (auto& layer : flow.layers())
            std::visit([&](auto& l) { for (auto& p : l.theta) p += 0.25 * pr.normal(); }, layer);
        flow.refresh_layers();

        RngStream xr(53, d);
        std::vector<std::vector<double>> batch;
        for (int i = 0; i < 8; ++i) batch.push_back(standard_normal_vector(d, xr));

        size_t L = flow.layers().size();
        std::vector<std::vector<double>> gtheta(L);
        for (size_t li = 0; li < L; ++li)
            gtheta[li].assign(
                std::visit([](const auto& l) { return l.theta.size(); }, flow.layers()[li]), 0.0);

        std::vector<double> z, gz;
        std::vector<flow_detail::LayerCache> caches;
        for (const auto& x : batch) {
            flow.norm_with_cache(x, z, caches);
            gz.assign(z.begin(), z.end());
            flow.norm_backward(caches, gz, -1.0, gtheta);
        }

        auto batch_nll = [&]() {
            double acc = 0.0;
            for (const auto& x : batch) acc += map_nll_point(flow, x);
            return acc;
        };

        RngStream pick(54, d);
        int checked = 0;
        while (checked < 20) {
            size_t li = pick.below(L);
            auto& th = std::visit([](auto& l) -> std::vector<double>& { return l.theta; },
                                  flow.layers()[li]);
            size_t pi = pick.below(th.size());
            double h = 1e-5;
            double saved = th[pi];
            th[pi] = saved + h;
            flow.refresh_layers();
            double up = batch_nll();
            th[pi] = saved - h;
            flow.refresh_layers();
            double dn = batch_nll();
            th[pi] = saved;
            flow.refresh_layers();
            double fd = (up - dn) / (2.0 * h);
            double an = gtheta[li][pi];
            double denom = std::max({std::fabs(fd), std::fabs(an), 1e-6});
            CHECK(std::fabs(fd - an) / denom < 1e-4);
            ++checked;
        }
    }
}

TEST_CASE("nll basics and zero-epoch training") {
    IdentityMap id(2);
    std::vector<std::vector<double>> zero{{0.0, 0.0}};
    CHECK(nll(id, zero) == doctest::Approx(kLog2Pi).epsilon(1e-12));

    auto data = gaussian_rows(400, 2, 600, 3.0, 2.0);
    TrainConfig cfg;
    cfg.epochs = 0;
    cfg.seed = 1;
    auto res = train_flow(data, 4, 8, cfg);
    // identity-initialized flow: nll equals the gaussian nll of the
    // standardized data (training centers on the median and scales by the
    // normal-consistent IQR)
    size_t n = data.size();
    std::vector<double> center(2), scale(2);
    for (int c = 0; c < 2; ++c) {
        std::vector<double> col(n);
        for (size_t i = 0; i < n; ++i) col[i] = data[i][c];
        std::sort(col.begin(), col.end());
        auto q = [&](double p) {
            double pos = p * (n - 1);
            size_t lo = static_cast<size_t>(pos);
            double frac = pos - lo;
            return col[lo] * (1.0 - frac) + col[lo + 1] * frac;
        };
        center[c] = q(0.5);
        scale[c] = (q(0.75) - q(0.25)) / 1.349;
    }
    double direct = 0.0;
    for (const auto& r : data) {
        for (int c = 0; c < 2; ++c) {
            double y = (r[c] - center[c]) / scale[c];
            direct += 0.5 * y * y + 0.5 * kLog2Pi + std::log(scale[c]);
        }
    }
    direct /= n;
    CHECK(nll(*res.map, data) == doctest::Approx(direct).epsilon(1e-10));
    CHECK(res.map->standardize_mean()[0] == doctest::Approx(center[0]));
    CHECK(res.map->standardize_scale()[1] == doctest::Approx(scale[1]));

    // a moment-fitted affine map beats the identity on shifted data
    std::vector<double> mean(2, 0.0), sd(2, 0.0);
    for (const auto& r : data) for (int c = 0; c < 2; ++c) mean[c] += r[c];
    for (auto& m : mean) m /= n;
    for (const auto& r : data)
        for (int c = 0; c < 2; ++c) sd[c] += (r[c] - mean[c]) * (r[c] - mean[c]);
    for (auto& s : sd) s = std::sqrt(s / (n - 1));
    auto aff = AffineWhitenMap::diagonal(mean, sd);
    IdentityMap id2(2);
    CHECK(nll(aff, data) < nll(id2, data));
}

TEST_CASE("training on gaussian data reaches the entropy bound") {
    auto data = gaussian_rows(2048, 2, 900);
    TrainConfig cfg;
    cfg.epochs = 60;
    cfg.seed = 7;
    cfg.patience = 30;
    auto res = train_flow(data, 4, 16, cfg);
    double h = 1.0 + kLog2Pi;  // differential entropy of N(0, I_2)
    CHECK(nll(*res.map, data) == doctest::Approx(h).epsilon(0.02));

    // best-so-far validation sequence is monotone
    double best = 1e300;
    for (const auto& row : res.trace) {
        if (row.val_nll < best) best = row.val_nll;
        CHECK(best <= row.val_nll + 1e-12);
    }
}

TEST_CASE("trained 1-d flow preserves the latent law and the target mean") {
    auto bed = testbed_by_name("exampleA1");

    // latent-law preservation: fresh data pushed through the inverse is
    // approximately standard normal
    auto data = generate_rows(bed, 4000, 2500);
    TrainConfig cfg;
    cfg.epochs = 400;
    cfg.patience = 100;
    cfg.seed = 2501;
    auto res = train_flow(data, 8, 32, cfg);
    RngStream rng(2502, 0);
    std::vector<double> latents;
    for (int i = 0; i < 10000; ++i)
        latents.push_back(res.map->inverse(bed.sampler(rng))[0]);
    auto ks = ks_one_sample(latents, [](double t) { return std_normal_cdf(t); });
    CHECK(ks.p_value > 0.001);

    // self-consistency: the flow's CMC estimate of E rho2 stays within three
    // combined standard deviations of the train-sample estimate
    auto data1k = generate_rows(bed, 1000, 2510);
    TrainConfig cfg1;
    cfg1.epochs = 300;
    cfg1.patience = 100;
    cfg1.seed = 2511;
    auto res1 = train_flow(data1k, 8, 32, cfg1);
    auto rho2 = parse_target_function("rho2");
    double obs_mean = 0.0, obs_m2 = 0.0;
    for (const auto& r : data1k) obs_mean += rho2.fn(r);
    obs_mean /= data1k.size();
    for (const auto& r : data1k)
        obs_m2 += (rho2.fn(r) - obs_mean) * (rho2.fn(r) - obs_mean);
    double obs_sd = std::sqrt(obs_m2 / (data1k.size() - 1) / data1k.size());
    RngStream rng2(2512, 0);
    auto rep = cmc_estimate(
        [&](RngStream& g) { return rho2.fn(res1.map->sample(g)); }, 32768, rng2);
    double combined = std::sqrt(rep.sd * rep.sd + obs_sd * obs_sd);
    CHECK(std::fabs(rep.estimate - obs_mean) < 3.0 * combined);

    // stratified flow estimate of the mixture tail stays near the
    // train-sample value
    auto jm = parse_target_function("jminus_0.95");
    double obs_tail = 0.0;
    for (const auto& r : data1k) obs_tail += jm.fn(r);
    obs_tail /= data1k.size();
    auto scheme = build_cartesian(1, 4);
    auto opt = run_optimal_pipeline(scheme, *res1.map, jm, 32768, 0.125, 2513, 0);
    CHECK(std::fabs(opt.estimate - obs_tail) < 0.05);
}

TEST_CASE("training is deterministic") {
    auto data = gaussian_rows(256, 2, 1000, 1.0, 0.5);
    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.seed = 99;
    auto a = train_flow(data, 3, 8, cfg);
    auto b = train_flow(data, 3, 8, cfg);
    CHECK(a.map->to_json().dump() == b.map->to_json().dump());
    REQUIRE(a.trace.size() == b.trace.size());
    for (size_t i = 0; i < a.trace.size(); ++i)
        CHECK(a.trace[i].train_nll == b.trace[i].train_nll);
}

TEST_CASE("model save/load round trip") {
    RngStream rng(71, 0);
    CouplingFlowMap flow(2, 4, 8, rng);
    RngStream pr(71, 1);
    for (auto& layer : flow.layers())
        std::visit([&](auto& l) { for (auto& p : l.theta) p += 0.4 * pr.normal(); }, layer);
    flow.refresh_layers();
    flow.set_standardization({0.3, -0.7}, {1.5, 0.2});

    auto j = flow.to_json();
    auto loaded = CouplingFlowMap::from_json(j);

    RngStream zr(72, 0);
    for (int i = 0; i < 1000; ++i) {
        auto z = standard_normal_vector(2, zr);
        auto a = flow.forward(z);
        auto b = loaded->forward(z);
        CHECK(a[0] == b[0]);  // bit-exact after decimal round trip
        CHECK(a[1] == b[1]);
    }

    auto missing = j;
    missing.erase("version");
    CHECK_THROWS_AS(CouplingFlowMap::from_json(missing), ModelFormatError);
    auto badver = j;
    badver["version"] = 99;
    CHECK_THROWS_AS(CouplingFlowMap::from_json(badver), ModelFormatError);
}

TEST_CASE("training divergence is reported") {
    auto data = gaussian_rows(64, 2, 1100);
    TrainConfig cfg;
    cfg.epochs = 50;
    cfg.seed = 3;
    cfg.learning_rate = 1e200;  // guaranteed blow-up
    cfg.grad_clip = 0.0;
    CHECK_THROWS_AS(train_flow(data, 4, 8, cfg), TrainingDiverged);
}
