#pragma once

// Trainable invertible flow from the standard Gaussian base to data space.
// For d >= 2 the flow is a stack of affine coupling layers (exact algebraic
// inverse, exact per-layer log-determinant, closed-form backward passes).
// For d = 1, where coupling has nothing to condition on, the stack uses
// elementwise monotone rational-quadratic spline layers with the same
// properties. Input standardization is folded into a final diagonal affine
// layer. Training minimizes exact NLL by hand-rolled reverse accumulation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "numerics.hpp"
#include "rng.hpp"
#include "transport.hpp"

namespace stratmc {

class ModelFormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace flow_detail {

// ---------------------------------------------------------------------------
// affine coupling layer

struct CouplingCache {
    std::vector<double> xA, h1, h2, s, t, zB;
};

struct CouplingLayer {
    int d = 0, hidden = 0;
    double s_clamp = 5.0;
    std::vector<uint8_t> mask;  // 1 = pass-through / conditioner input
    std::vector<int> idxA, idxB;
    std::vector<double> theta;
    int oW1 = 0, ob1 = 0, oW2 = 0, ob2 = 0, oW3 = 0, ob3 = 0;

    int dA() const { return static_cast<int>(idxA.size()); }
    int dB() const { return static_cast<int>(idxB.size()); }

    void setup(int dim, std::vector<uint8_t> m, int H) {
        d = dim;
        hidden = H;
        mask = std::move(m);
        idxA.clear();
        idxB.clear();
        for (int i = 0; i < d; ++i)
            (mask[i] ? idxA : idxB).push_back(i);
        if (idxA.empty() || idxB.empty())
            throw std::domain_error("coupling layer needs a nonempty mask on both sides");
        int a = dA(), b = dB();
        oW1 = 0;
        ob1 = oW1 + H * a;
        oW2 = ob1 + H;
        ob2 = oW2 + H * H;
        oW3 = ob2 + H;
        ob3 = oW3 + 2 * b * H;
        theta.assign(ob3 + 2 * b, 0.0);
    }

    // hidden weights get small random values, the output layer stays at zero
    // so a fresh layer is the identity transform
    void init_params(RngStream& rng) {
        int a = dA();
        double sd1 = 1.0 / std::sqrt(static_cast<double>(a));
        double sd2 = 1.0 / std::sqrt(static_cast<double>(hidden));
        for (int i = 0; i < hidden * a; ++i) theta[oW1 + i] = sd1 * rng.normal();
        for (int i = 0; i < hidden * hidden; ++i) theta[oW2 + i] = sd2 * rng.normal();
        // b1, b2, W3, b3 stay zero
    }

    void conditioner(const double* xA, double* s, double* t, CouplingCache* cache) const {
        int a = dA(), b = dB(), H = hidden;
        const double* W1 = theta.data() + oW1;
        const double* b1 = theta.data() + ob1;
        const double* W2 = theta.data() + oW2;
        const double* b2 = theta.data() + ob2;
        const double* W3 = theta.data() + oW3;
        const double* b3 = theta.data() + ob3;

        thread_local std::vector<double> h1v, h2v;
        h1v.resize(H);
        h2v.resize(H);
        for (int i = 0; i < H; ++i) {
            double acc = b1[i];
            const double* row = W1 + i * a;
            for (int j = 0; j < a; ++j) acc += row[j] * xA[j];
            h1v[i] = std::tanh(acc);
        }
        for (int i = 0; i < H; ++i) {
            double acc = b2[i];
            const double* row = W2 + i * H;
            for (int j = 0; j < H; ++j) acc += row[j] * h1v[j];
            h2v[i] = std::tanh(acc);
        }
        for (int i = 0; i < b; ++i) {
            double acc_s = b3[i], acc_t = b3[b + i];
            const double* row_s = W3 + i * H;
            const double* row_t = W3 + (b + i) * H;
            for (int j = 0; j < H; ++j) {
                acc_s += row_s[j] * h2v[j];
                acc_t += row_t[j] * h2v[j];
            }
            s[i] = s_clamp * std::tanh(acc_s / s_clamp);
            t[i] = acc_t;
        }
        if (cache) {
            cache->xA.assign(xA, xA + a);
            cache->h1 = h1v;
            cache->h2 = h2v;
            cache->s.assign(s, s + b);
            cache->t.assign(t, t + b);
        }
    }

    void gen(std::vector<double>& v) const {
        int a = dA(), b = dB();
        thread_local std::vector<double> xa, s, t;
        xa.resize(a); s.resize(b); t.resize(b);
        for (int j = 0; j < a; ++j) xa[j] = v[idxA[j]];
        conditioner(xa.data(), s.data(), t.data(), nullptr);
        for (int i = 0; i < b; ++i)
            v[idxB[i]] = v[idxB[i]] * std::exp(s[i]) + t[i];
    }

    void norm(std::vector<double>& v, double* logdet, CouplingCache* cache) const {
        int a = dA(), b = dB();
        thread_local std::vector<double> xa, s, t;
        xa.resize(a); s.resize(b); t.resize(b);
        for (int j = 0; j < a; ++j) xa[j] = v[idxA[j]];
        conditioner(xa.data(), s.data(), t.data(), cache);
        for (int i = 0; i < b; ++i) {
            v[idxB[i]] = (v[idxB[i]] - t[i]) * std::exp(-s[i]);
            if (logdet) *logdet -= s[i];
        }
        if (cache) {
            cache->zB.resize(b);
            for (int i = 0; i < b; ++i) cache->zB[i] = v[idxB[i]];
        }
    }

    // gv holds the gradient wrt this layer's normalizing output and is
    // rewritten to the gradient wrt its input; gld is the gradient wrt the
    // accumulated log-determinant (shared across layers).
    void backward(const CouplingCache& c, std::vector<double>& gv, double gld,
                  std::vector<double>& gtheta) const {
        int a = dA(), b = dB(), H = hidden;
        const double* W1 = theta.data() + oW1;
        const double* W2 = theta.data() + oW2;
        const double* W3 = theta.data() + oW3;
        double* gW1 = gtheta.data() + oW1;
        double* gb1 = gtheta.data() + ob1;
        double* gW2 = gtheta.data() + oW2;
        double* gb2 = gtheta.data() + ob2;
        double* gW3 = gtheta.data() + oW3;
        double* gb3 = gtheta.data() + ob3;

        thread_local std::vector<double> go, gh2, ga2, gh1, ga1, gxA;
        go.resize(2 * b); gh2.assign(H, 0.0); ga2.resize(H);
        gh1.assign(H, 0.0); ga1.resize(H); gxA.assign(a, 0.0);

        for (int i = 0; i < b; ++i) {
            double gzB = gv[idxB[i]];
            double es = std::exp(-c.s[i]);
            double gs = -gzB * c.zB[i] - gld;
            double gt = -gzB * es;
            gv[idxB[i]] = gzB * es;  // grad wrt xB
            double dclamp = 1.0 - (c.s[i] / s_clamp) * (c.s[i] / s_clamp);
            go[i] = gs * dclamp;
            go[b + i] = gt;
        }
        for (int i = 0; i < 2 * b; ++i) {
            const double* row = W3 + i * H;
            double g = go[i];
            gb3[i] += g;
            for (int j = 0; j < H; ++j) {
                gW3[i * H + j] += g * c.h2[j];
                gh2[j] += row[j] * g;
            }
        }
        for (int i = 0; i < H; ++i)
            ga2[i] = gh2[i] * (1.0 - c.h2[i] * c.h2[i]);
        for (int i = 0; i < H; ++i) {
            const double* row = W2 + i * H;
            double g = ga2[i];
            gb2[i] += g;
            for (int j = 0; j < H; ++j) {
                gW2[i * H + j] += g * c.h1[j];
                gh1[j] += row[j] * g;
            }
        }
        for (int i = 0; i < H; ++i)
            ga1[i] = gh1[i] * (1.0 - c.h1[i] * c.h1[i]);
        for (int i = 0; i < H; ++i) {
            const double* row = W1 + i * a;
            double g = ga1[i];
            gb1[i] += g;
            for (int j = 0; j < a; ++j) {
                gW1[i * a + j] += g * c.xA[j];
                gxA[j] += row[j] * g;
            }
        }
        for (int j = 0; j < a; ++j)
            gv[idxA[j]] += gxA[j];
    }
};

// ---------------------------------------------------------------------------
// elementwise monotone rational-quadratic spline layer

struct SplineCache {
    std::vector<double> x;  // layer input, per coordinate
};

struct SplineLayer {
    int d = 0, bins = 0;
    double bound = 4.0;
    static constexpr double kMinFrac = 1e-4;
    std::vector<double> theta;  // per coord: [w_logits K][h_logits K][d_raw K-1]
    // derived knots, refreshed after every parameter change
    std::vector<double> xk, yk, wb, hb, dv;  // per coord, sizes K+1, K+1, K, K, K+1

    int block() const { return 3 * bins - 1; }

    void setup(int dim, int K) {
        d = dim;
        bins = K;
        theta.assign(static_cast<size_t>(d) * block(), 0.0);  // zeros give the identity
        refresh();
    }

    static double softplus(double v) {
        return (v > 30.0) ? v : std::log1p(std::exp(v));
    }

    void refresh() {
        int K = bins;
        double two_b = 2.0 * bound;
        const double c0 = std::log(std::exp(1.0) - 1.0);  // softplus(c0) == 1
        xk.assign(static_cast<size_t>(d) * (K + 1), 0.0);
        yk.assign(static_cast<size_t>(d) * (K + 1), 0.0);
        wb.assign(static_cast<size_t>(d) * K, 0.0);
        hb.assign(static_cast<size_t>(d) * K, 0.0);
        dv.assign(static_cast<size_t>(d) * (K + 1), 1.0);
        for (int c = 0; c < d; ++c) {
            const double* wl = theta.data() + static_cast<size_t>(c) * block();
            const double* hl = wl + K;
            const double* dr = hl + K;
            double* w = wb.data() + static_cast<size_t>(c) * K;
            double* h = hb.data() + static_cast<size_t>(c) * K;
            double* xx = xk.data() + static_cast<size_t>(c) * (K + 1);
            double* yy = yk.data() + static_cast<size_t>(c) * (K + 1);
            double* dd = dv.data() + static_cast<size_t>(c) * (K + 1);
            softmax_scaled(wl, K, two_b, w);
            softmax_scaled(hl, K, two_b, h);
            xx[0] = -bound;
            yy[0] = -bound;
            for (int k = 0; k < K; ++k) {
                xx[k + 1] = xx[k] + w[k];
                yy[k + 1] = yy[k] + h[k];
            }
            xx[K] = bound;
            yy[K] = bound;
            dd[0] = dd[K] = 1.0;
            for (int k = 1; k < K; ++k) dd[k] = softplus(dr[k - 1] + c0);
        }
    }

    static void softmax_scaled(const double* logits, int K, double total, double* out) {
        double mx = logits[0];
        for (int i = 1; i < K; ++i) mx = std::max(mx, logits[i]);
        double sum = 0.0;
        for (int i = 0; i < K; ++i) sum += std::exp(logits[i] - mx);
        for (int i = 0; i < K; ++i) {
            double p = std::exp(logits[i] - mx) / sum;
            out[i] = total * ((1.0 - K * kMinFrac) * p + kMinFrac);
        }
    }

    int find_bin(const double* knots, double v) const {
        // smallest k with v <= knots[k+1]
        int lo = 0, hi = bins - 1;
        while (lo < hi) {
            int mid = (lo + hi) / 2;
            if (v <= knots[mid + 1]) hi = mid; else lo = mid + 1;
        }
        return lo;
    }

    // normalizing direction: z = T(x), monotone increasing, identity tails
    double norm_scalar(int c, double x, double* logdet) const {
        int K = bins;
        const double* xx = xk.data() + static_cast<size_t>(c) * (K + 1);
        const double* yy = yk.data() + static_cast<size_t>(c) * (K + 1);
        const double* dd = dv.data() + static_cast<size_t>(c) * (K + 1);
        const double* w = wb.data() + static_cast<size_t>(c) * K;
        const double* h = hb.data() + static_cast<size_t>(c) * K;
        if (x <= -bound || x > bound) return x;  // identity tails, slope 1
        int k = find_bin(xx, x);
        double xi = (x - xx[k]) / w[k];
        double delta = h[k] / w[k];
        double u = xi * (1.0 - xi);
        double S = dd[k + 1] + dd[k] - 2.0 * delta;
        double D = delta + S * u;
        double P = delta * xi * xi + dd[k] * u;
        double z = yy[k] + h[k] * P / D;
        if (logdet) {
            double Q = dd[k + 1] * xi * xi + 2.0 * delta * u + dd[k] * (1.0 - xi) * (1.0 - xi);
            *logdet += 2.0 * std::log(delta) + std::log(Q) - 2.0 * std::log(D);
        }
        return z;
    }

    // generative direction: closed-form quadratic inverse of the bin rational
    double gen_scalar(int c, double z) const {
        int K = bins;
        const double* xx = xk.data() + static_cast<size_t>(c) * (K + 1);
        const double* yy = yk.data() + static_cast<size_t>(c) * (K + 1);
        const double* dd = dv.data() + static_cast<size_t>(c) * (K + 1);
        const double* w = wb.data() + static_cast<size_t>(c) * K;
        const double* h = hb.data() + static_cast<size_t>(c) * K;
        if (z <= -bound || z > bound) return z;
        int k = find_bin(yy, z);
        double dy = z - yy[k];
        double delta = h[k] / w[k];
        double S = dd[k + 1] + dd[k] - 2.0 * delta;
        double qa = h[k] * (delta - dd[k]) + dy * S;
        double qb = h[k] * dd[k] - dy * S;
        double qc = -delta * dy;
        double disc = qb * qb - 4.0 * qa * qc;
        if (disc < 0.0) disc = 0.0;
        double xi = 2.0 * qc / (-qb - std::sqrt(disc));
        if (xi < 0.0) xi = 0.0;
        if (xi > 1.0) xi = 1.0;
        return xx[k] + xi * w[k];
    }

    void gen(std::vector<double>& v) const {
        for (int c = 0; c < d; ++c) v[c] = gen_scalar(c, v[c]);
    }

    void norm(std::vector<double>& v, double* logdet, SplineCache* cache) const {
        if (cache) cache->x = v;
        for (int c = 0; c < d; ++c) v[c] = norm_scalar(c, v[c], logdet);
    }

    void backward(const SplineCache& cache, std::vector<double>& gv, double gld,
                  std::vector<double>& gtheta) const {
        int K = bins;
        const double c0 = std::log(std::exp(1.0) - 1.0);
        thread_local std::vector<double> gw, gh, gd;
        for (int c = 0; c < d; ++c) {
            double x = cache.x[c];
            double gz = gv[c];
            if (x <= -bound || x > bound) continue;  // identity tail: gv passes through

            const double* xx = xk.data() + static_cast<size_t>(c) * (K + 1);
            const double* dd = dv.data() + static_cast<size_t>(c) * (K + 1);
            const double* w = wb.data() + static_cast<size_t>(c) * K;
            const double* h = hb.data() + static_cast<size_t>(c) * K;
            int k = find_bin(xx, x);

            // recompute the bin intermediates
            double xi = (x - xx[k]) / w[k];
            double delta = h[k] / w[k];
            double u = xi * (1.0 - xi);
            double S = dd[k + 1] + dd[k] - 2.0 * delta;
            double D = delta + S * u;
            double P = delta * xi * xi + dd[k] * u;
            double Q = dd[k + 1] * xi * xi + 2.0 * delta * u + dd[k] * (1.0 - xi) * (1.0 - xi);

            // adjoints of the primitives
            double gxi = 0, gdelta = 0, gu = 0, gS = 0, gD = 0, gP = 0, gQ = 0;
            double gxk = 0, gwk = 0, gyk = 0, ghk = 0, gdk = 0, gdk1 = 0, gx = 0;

            // z = yy[k] + h[k] P / D
            gyk += gz;
            ghk += gz * P / D;
            gP += gz * h[k] / D;
            gD += -gz * h[k] * P / (D * D);
            // logdet term: 2 log delta + log Q - 2 log D
            gdelta += gld * 2.0 / delta;
            gQ += gld / Q;
            gD += -gld * 2.0 / D;
            // Q
            gdk1 += gQ * xi * xi;
            gu += gQ * 2.0 * delta;
            gdelta += gQ * 2.0 * u;
            gdk += gQ * (1.0 - xi) * (1.0 - xi);
            gxi += gQ * (2.0 * dd[k + 1] * xi - 2.0 * dd[k] * (1.0 - xi));
            // P
            gdelta += gP * xi * xi;
            gxi += gP * 2.0 * delta * xi;
            gdk += gP * u;
            gu += gP * dd[k];
            // D = delta + S u
            gdelta += gD;
            gS += gD * u;
            gu += gD * S;
            // S = dk1 + dk - 2 delta
            gdk1 += gS;
            gdk += gS;
            gdelta += -2.0 * gS;
            // u = xi (1 - xi)
            gxi += gu * (1.0 - 2.0 * xi);
            // delta = h/w
            ghk += gdelta / w[k];
            gwk += -gdelta * delta / w[k];
            // xi = (x - xk)/w
            gx += gxi / w[k];
            gxk += -gxi / w[k];
            gwk += -gxi * xi / w[k];

            gv[c] = gx;

            // spread knot adjoints onto bin sizes
            gw.assign(K, 0.0);
            gh.assign(K, 0.0);
            gd.assign(K + 1, 0.0);
            gw[k] += gwk;
            gh[k] += ghk;
            for (int i = 0; i < k; ++i) { gw[i] += gxk; gh[i] += gyk; }
            gd[k] += gdk;
            gd[k + 1] += gdk1;

            // chain through scaled softmax and softplus
            double* gt = gtheta.data() + static_cast<size_t>(c) * block();
            const double* wl = theta.data() + static_cast<size_t>(c) * block();
            const double* hl = wl + K;
            const double* dr = hl + K;
            double scale = 2.0 * bound * (1.0 - K * kMinFrac);
            softmax_backward(wl, gw.data(), K, scale, gt);
            softmax_backward(hl, gh.data(), K, scale, gt + K);
            for (int i = 1; i < K; ++i) {
                double sig = 1.0 / (1.0 + std::exp(-(dr[i - 1] + c0)));
                gt[2 * K + i - 1] += gd[i] * sig;
            }
        }
    }

    static void softmax_backward(const double* logits, const double* gout, int K,
                                 double scale, double* glogits) {
        double mx = logits[0];
        for (int i = 1; i < K; ++i) mx = std::max(mx, logits[i]);
        double sum = 0.0;
        for (int i = 0; i < K; ++i) sum += std::exp(logits[i] - mx);
        double dot = 0.0;
        thread_local std::vector<double> p;
        p.resize(K);
        for (int i = 0; i < K; ++i) {
            p[i] = std::exp(logits[i] - mx) / sum;
            dot += gout[i] * p[i];
        }
        for (int i = 0; i < K; ++i)
            glogits[i] += scale * p[i] * (gout[i] - dot);
    }
};

using Layer = std::variant<CouplingLayer, SplineLayer>;
using LayerCache = std::variant<CouplingCache, SplineCache>;

} // namespace flow_detail

// ---------------------------------------------------------------------------

class CouplingFlowMap final : public TransportMap {
public:
    // d = 1: a stack of monotone spline layers (hidden = bin count).
    // d >= 2: alternating-mask affine couplings with an elementwise spline
    // after every coupling pair; the spline nearest the data shapes the
    // marginals so the couplings only carry the dependence structure.
    CouplingFlowMap(int d, int layers, int hidden, RngStream& init_rng)
        : d_(d), mean_(d, 0.0), scale_(d, 1.0) {
        if (d < 1) throw std::domain_error("CouplingFlowMap: d must be >= 1");
        if (layers < 1) throw std::domain_error("CouplingFlowMap: need at least one layer");
        for (int l = 0; l < layers; ++l) {
            if (d == 1) {
                flow_detail::SplineLayer sl;
                sl.setup(1, std::max(4, hidden));
                layers_.push_back(std::move(sl));
                continue;
            }
            std::vector<uint8_t> mask(d, 0);
            int half = (d + 1) / 2;
            for (int i = 0; i < d; ++i)
                mask[i] = static_cast<uint8_t>(((i < half) ^ (l & 1)) ? 1 : 0);
            flow_detail::CouplingLayer cl;
            cl.setup(d, std::move(mask), hidden);
            cl.init_params(init_rng);
            layers_.push_back(std::move(cl));
            if (l % 2 == 1 || l == layers - 1) {
                flow_detail::SplineLayer sl;
                sl.setup(d, std::max(8, hidden / 2));
                sl.bound = 5.0;
                layers_.push_back(std::move(sl));
            }
        }
    }

    int dim() const override { return d_; }
    std::string kind() const override { return "coupling-flow"; }

    void set_standardization(std::vector<double> mean, std::vector<double> scale) {
        mean_ = std::move(mean);
        scale_ = std::move(scale);
        for (double s : scale_)
            if (!(s > 0.0)) throw std::domain_error("standardization scale must be positive");
    }
    const std::vector<double>& standardize_mean() const { return mean_; }
    const std::vector<double>& standardize_scale() const { return scale_; }

    std::vector<double> forward(const std::vector<double>& z) const override {
        std::vector<double> v = z;
        for (const auto& layer : layers_)
            std::visit([&](const auto& l) { l.gen(v); }, layer);
        for (int i = 0; i < d_; ++i) v[i] = mean_[i] + scale_[i] * v[i];
        for (double x : v)
            if (!std::isfinite(x))
                throw std::overflow_error("coupling flow forward produced a non-finite value");
        return v;
    }

    std::vector<double> inverse(const std::vector<double>& x) const override {
        std::vector<double> v(d_);
        for (int i = 0; i < d_; ++i) v[i] = (x[i] - mean_[i]) / scale_[i];
        for (auto it = layers_.rbegin(); it != layers_.rend(); ++it)
            std::visit([&](const auto& l) { l.norm(v, nullptr, nullptr); }, *it);
        return v;
    }

    double log_prob(const std::vector<double>& x) const override {
        std::vector<double> v(d_);
        double logdet = 0.0;
        for (int i = 0; i < d_; ++i) {
            v[i] = (x[i] - mean_[i]) / scale_[i];
            logdet -= std::log(scale_[i]);
        }
        for (auto it = layers_.rbegin(); it != layers_.rend(); ++it)
            std::visit([&](const auto& l) { l.norm(v, &logdet, nullptr); }, *it);
        double q = 0.0;
        for (double z : v) q += z * z;
        return -0.5 * q - 0.5 * d_ * kLog2Pi + logdet;
    }

    nlohmann::json to_json() const override {
        nlohmann::json j{{"format", "stratmc-transport"}, {"version", 1},
                         {"kind", "coupling-flow"}, {"dim", d_}};
        j["standardize_mean"] = detail::doubles_to_json(mean_);
        j["standardize_scale"] = detail::doubles_to_json(scale_);
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& layer : layers_) {
            nlohmann::json lj;
            if (std::holds_alternative<flow_detail::CouplingLayer>(layer)) {
                const auto& cl = std::get<flow_detail::CouplingLayer>(layer);
                lj["type"] = "coupling";
                lj["hidden"] = cl.hidden;
                lj["s_clamp"] = cl.s_clamp;
                lj["mask"] = cl.mask;
                lj["params"] = detail::doubles_to_json(cl.theta);
            } else {
                const auto& sl = std::get<flow_detail::SplineLayer>(layer);
                lj["type"] = "spline";
                lj["bins"] = sl.bins;
                lj["bound"] = sl.bound;
                lj["params"] = detail::doubles_to_json(sl.theta);
            }
            arr.push_back(std::move(lj));
        }
        j["layers"] = std::move(arr);
        return j;
    }

    static std::shared_ptr<CouplingFlowMap> from_json(const nlohmann::json& j) {
        if (!j.contains("version"))
            throw ModelFormatError("flow model file is missing the version field");
        if (j.at("version").get<int>() != 1)
            throw ModelFormatError("unsupported flow model version");
        int d = j.at("dim").get<int>();
        auto map = std::shared_ptr<CouplingFlowMap>(new CouplingFlowMap(d));
        map->mean_ = detail::doubles_from_json(j.at("standardize_mean"));
        map->scale_ = detail::doubles_from_json(j.at("standardize_scale"));
        if (static_cast<int>(map->mean_.size()) != d ||
            static_cast<int>(map->scale_.size()) != d)
            throw ModelFormatError("flow model standardization size mismatch");
        for (const auto& lj : j.at("layers")) {
            std::string type = lj.at("type").get<std::string>();
            if (type == "coupling") {
                flow_detail::CouplingLayer cl;
                cl.setup(d, lj.at("mask").get<std::vector<uint8_t>>(),
                         lj.at("hidden").get<int>());
                cl.s_clamp = lj.at("s_clamp").get<double>();
                auto params = detail::doubles_from_json(lj.at("params"));
                if (params.size() != cl.theta.size())
                    throw ModelFormatError("coupling layer parameter count mismatch");
                cl.theta = std::move(params);
                map->layers_.push_back(std::move(cl));
            } else if (type == "spline") {
                flow_detail::SplineLayer sl;
                sl.setup(d, lj.at("bins").get<int>());
                sl.bound = lj.at("bound").get<double>();
                auto params = detail::doubles_from_json(lj.at("params"));
                if (params.size() != sl.theta.size())
                    throw ModelFormatError("spline layer parameter count mismatch");
                sl.theta = std::move(params);
                sl.refresh();
                map->layers_.push_back(std::move(sl));
            } else {
                throw ModelFormatError("unknown flow layer type: " + type);
            }
        }
        if (map->layers_.empty())
            throw ModelFormatError("flow model has no layers");
        return map;
    }

    // trainer access
    std::vector<flow_detail::Layer>& layers() { return layers_; }
    const std::vector<flow_detail::Layer>& layers() const { return layers_; }

    // normalizing pass with caches, for NLL training
    double norm_with_cache(const std::vector<double>& x, std::vector<double>& z,
                           std::vector<flow_detail::LayerCache>& caches) const {
        z.resize(d_);
        double logdet = 0.0;
        for (int i = 0; i < d_; ++i) {
            z[i] = (x[i] - mean_[i]) / scale_[i];
            logdet -= std::log(scale_[i]);
        }
        caches.resize(layers_.size());
        for (size_t li = layers_.size(); li-- > 0;) {
            if (std::holds_alternative<flow_detail::CouplingLayer>(layers_[li])) {
                caches[li].emplace<flow_detail::CouplingCache>();
                std::get<flow_detail::CouplingLayer>(layers_[li])
                    .norm(z, &logdet, &std::get<flow_detail::CouplingCache>(caches[li]));
            } else {
                caches[li].emplace<flow_detail::SplineCache>();
                std::get<flow_detail::SplineLayer>(layers_[li])
                    .norm(z, &logdet, &std::get<flow_detail::SplineCache>(caches[li]));
            }
        }
        return logdet;
    }

    // reverse pass matching norm_with_cache; gz is the gradient wrt z and is
    // consumed; gld the gradient wrt the accumulated log-determinant
    void norm_backward(std::vector<flow_detail::LayerCache>& caches, std::vector<double>& gz,
                       double gld, std::vector<std::vector<double>>& gtheta) const {
        for (size_t li = 0; li < layers_.size(); ++li) {
            if (std::holds_alternative<flow_detail::CouplingLayer>(layers_[li]))
                std::get<flow_detail::CouplingLayer>(layers_[li])
                    .backward(std::get<flow_detail::CouplingCache>(caches[li]), gz, gld,
                              gtheta[li]);
            else
                std::get<flow_detail::SplineLayer>(layers_[li])
                    .backward(std::get<flow_detail::SplineCache>(caches[li]), gz, gld,
                              gtheta[li]);
        }
    }

    void refresh_layers() {
        for (auto& layer : layers_)
            if (std::holds_alternative<flow_detail::SplineLayer>(layer))
                std::get<flow_detail::SplineLayer>(layer).refresh();
    }

private:
    explicit CouplingFlowMap(int d) : d_(d), mean_(d, 0.0), scale_(d, 1.0) {}

    int d_;
    std::vector<flow_detail::Layer> layers_;
    std::vector<double> mean_, scale_;
};

// ---------------------------------------------------------------------------
// training

struct TrainConfig {
    int epochs = 2000;
    int batch_size = 128;
    double learning_rate = 1e-3;
    enum class Optimizer { Adam, SgdMomentum } optimizer = Optimizer::Adam;
    bool cosine_decay = false;  // anneal the learning rate to zero over `epochs`
    uint64_t seed = 0;
    double validation_fraction = 0.1;
    int patience = 200;
    double grad_clip = 100.0;

    void validate() const {
        if (epochs < 0 || batch_size < 1 || learning_rate <= 0.0 || patience < 1)
            throw std::domain_error("TrainConfig: epochs/batch/lr/patience out of range");
        if (validation_fraction < 0.0 || validation_fraction > 0.5)
            throw std::domain_error("TrainConfig: validation_fraction must be in [0, 0.5]");
    }
};

struct TraceRow {
    int epoch;
    double train_nll;
    double val_nll;
};

class TrainingDiverged : public std::runtime_error {
public:
    TrainingDiverged(const std::string& msg, std::vector<TraceRow> tr)
        : std::runtime_error(msg), trace(std::move(tr)) {}
    std::vector<TraceRow> trace;
};

struct TrainResult {
    std::shared_ptr<CouplingFlowMap> map;
    std::vector<TraceRow> trace;
    int best_epoch = 0;
    double best_metric = 0.0;
};

inline void default_flow_arch(int d, int& layers, int& hidden) {
    if (d <= 2) { layers = 8; hidden = 32; }
    else if (d <= 4) { layers = 10; hidden = 64; }
    else { layers = 12; hidden = 128; }
}

inline double nll(const TransportMap& map, const std::vector<std::vector<double>>& data) {
    if (data.empty()) throw std::domain_error("nll: need at least one row");
    double acc = 0.0;
    for (const auto& x : data) acc -= map.log_prob(x);
    return acc / static_cast<double>(data.size());
}

namespace flow_detail {

struct AdamState {
    std::vector<std::vector<double>> m, v;
    long t = 0;
};

inline double full_nll(const CouplingFlowMap& map, const std::vector<std::vector<double>>& rows,
                       const std::vector<size_t>& idx) {
    double acc = 0.0;
    for (size_t i : idx) acc -= map.log_prob(rows[i]);
    return acc / static_cast<double>(idx.size());
}

} // namespace flow_detail

inline TrainResult train_flow(const std::vector<std::vector<double>>& data, int layers,
                              int hidden, const TrainConfig& cfg) {
    cfg.validate();
    size_t n = data.size();
    if (n < 2) throw std::domain_error("train_flow: need at least two rows");
    int d = static_cast<int>(data[0].size());
    for (const auto& r : data)
        if (static_cast<int>(r.size()) != d)
            throw std::domain_error("train_flow: ragged data");

    // per-feature location/scale folded into the outer affine layer; the
    // median/IQR pair stays stable on heavy-tailed features where the sample
    // standard deviation does not
    std::vector<double> mean(d, 0.0), scale(d, 0.0);
    {
        std::vector<double> col(n);
        for (int c = 0; c < d; ++c) {
            for (size_t i = 0; i < n; ++i) col[i] = data[i][c];
            std::sort(col.begin(), col.end());
            auto quantile = [&](double q) {
                double pos = q * static_cast<double>(n - 1);
                size_t lo = static_cast<size_t>(pos);
                double frac = pos - static_cast<double>(lo);
                return (lo + 1 < n) ? col[lo] * (1.0 - frac) + col[lo + 1] * frac : col[lo];
            };
            mean[c] = quantile(0.5);
            scale[c] = (quantile(0.75) - quantile(0.25)) / 1.349;  // normal-consistent
            if (!(scale[c] > 1e-8)) {
                double mu = 0.0, ss = 0.0;
                for (size_t i = 0; i < n; ++i) mu += data[i][c];
                mu /= static_cast<double>(n);
                for (size_t i = 0; i < n; ++i) ss += (data[i][c] - mu) * (data[i][c] - mu);
                scale[c] = std::max(std::sqrt(ss / static_cast<double>(n - 1)), 1e-8);
            }
        }
    }

    RngStream init_rng(cfg.seed, derive_stream(0x11, 0));
    auto map = std::make_shared<CouplingFlowMap>(d, layers, hidden, init_rng);
    map->set_standardization(mean, scale);

    // train/validation split
    RngStream shuffle_rng(cfg.seed, derive_stream(0x11, 1));
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    for (size_t i = n; i > 1; --i)
        std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    size_t n_val = static_cast<size_t>(std::lround(cfg.validation_fraction * n));
    if (n_val > 0 && n - n_val < 2) n_val = 0;
    std::vector<size_t> val_idx(order.begin(), order.begin() + n_val);
    std::vector<size_t> train_idx(order.begin() + n_val, order.end());

    size_t L = map->layers().size();
    std::vector<std::vector<double>> gtheta(L);
    flow_detail::AdamState opt;
    opt.m.resize(L);
    opt.v.resize(L);
    for (size_t li = 0; li < L; ++li) {
        size_t np = std::visit([](const auto& l) { return l.theta.size(); }, map->layers()[li]);
        gtheta[li].assign(np, 0.0);
        opt.m[li].assign(np, 0.0);
        opt.v[li].assign(np, 0.0);
    }

    std::vector<TraceRow> trace;
    auto snapshot = [&]() {
        std::vector<std::vector<double>> params(L);
        for (size_t li = 0; li < L; ++li)
            params[li] = std::visit([](const auto& l) { return l.theta; }, map->layers()[li]);
        return params;
    };
    auto restore = [&](const std::vector<std::vector<double>>& params) {
        for (size_t li = 0; li < L; ++li)
            std::visit([&](auto& l) { l.theta = params[li]; }, map->layers()[li]);
        map->refresh_layers();
    };

    auto best_params = snapshot();
    double best_metric = std::numeric_limits<double>::infinity();
    int best_epoch = 0;
    int stale = 0;

    if (cfg.epochs == 0) {
        std::vector<size_t> all(n);
        for (size_t i = 0; i < n; ++i) all[i] = i;
        return {map, trace, 0, flow_detail::full_nll(*map, data, all)};
    }

    RngStream batch_rng(cfg.seed, derive_stream(0x11, 2));
    std::vector<flow_detail::LayerCache> caches;
    std::vector<double> z, gz;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        double lr = cfg.learning_rate;
        if (cfg.cosine_decay)
            lr *= 0.5 * (1.0 + std::cos(kPi * (epoch - 1) / static_cast<double>(cfg.epochs)));

        // reshuffle training order
        for (size_t i = train_idx.size(); i > 1; --i)
            std::swap(train_idx[i - 1], train_idx[batch_rng.below(i)]);

        double epoch_loss = 0.0;
        size_t seen = 0;
        for (size_t start = 0; start < train_idx.size(); start += cfg.batch_size) {
            size_t stop = std::min(train_idx.size(), start + cfg.batch_size);
            size_t bn = stop - start;
            for (size_t li = 0; li < L; ++li)
                std::fill(gtheta[li].begin(), gtheta[li].end(), 0.0);

            double batch_loss = 0.0;
            for (size_t bi = start; bi < stop; ++bi) {
                const auto& x = data[train_idx[bi]];
                double logdet = map->norm_with_cache(x, z, caches);
                double q = 0.0;
                for (double v : z) q += v * v;
                batch_loss += 0.5 * q + 0.5 * d * kLog2Pi - logdet;
                gz.assign(z.begin(), z.end());
                map->norm_backward(caches, gz, -1.0, gtheta);
            }
            batch_loss /= static_cast<double>(bn);
            if (!std::isfinite(batch_loss))
                throw TrainingDiverged("train_flow: non-finite loss at epoch " +
                                       std::to_string(epoch), trace);
            epoch_loss += batch_loss * static_cast<double>(bn);
            seen += bn;

            double gnorm2 = 0.0;
            for (size_t li = 0; li < L; ++li)
                for (double& g : gtheta[li]) {
                    g /= static_cast<double>(bn);
                    gnorm2 += g * g;
                }
            double clip = 1.0;
            if (cfg.grad_clip > 0.0 && gnorm2 > cfg.grad_clip * cfg.grad_clip)
                clip = cfg.grad_clip / std::sqrt(gnorm2);

            ++opt.t;
            for (size_t li = 0; li < L; ++li) {
                auto& th = std::visit([](auto& l) -> std::vector<double>& { return l.theta; },
                                      map->layers()[li]);
                if (cfg.optimizer == TrainConfig::Optimizer::Adam) {
                    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
                    double bc1 = 1.0 - std::pow(b1, static_cast<double>(opt.t));
                    double bc2 = 1.0 - std::pow(b2, static_cast<double>(opt.t));
                    for (size_t pi = 0; pi < th.size(); ++pi) {
                        double g = gtheta[li][pi] * clip;
                        opt.m[li][pi] = b1 * opt.m[li][pi] + (1.0 - b1) * g;
                        opt.v[li][pi] = b2 * opt.v[li][pi] + (1.0 - b2) * g * g;
                        th[pi] -= lr * (opt.m[li][pi] / bc1) /
                                  (std::sqrt(opt.v[li][pi] / bc2) + eps);
                    }
                } else {
                    const double momentum = 0.9;
                    for (size_t pi = 0; pi < th.size(); ++pi) {
                        double g = gtheta[li][pi] * clip;
                        opt.m[li][pi] = momentum * opt.m[li][pi] + g;
                        th[pi] -= lr * opt.m[li][pi];
                    }
                }
            }
            map->refresh_layers();
        }

        double train_nll = epoch_loss / static_cast<double>(seen);
        double val_nll = val_idx.empty() ? train_nll
                                         : flow_detail::full_nll(*map, data, val_idx);
        trace.push_back({epoch, train_nll, val_nll});

        double metric = val_idx.empty() ? train_nll : val_nll;
        if (metric < best_metric - 1e-12) {
            best_metric = metric;
            best_epoch = epoch;
            best_params = snapshot();
            stale = 0;
        } else if (++stale >= cfg.patience) {
            break;
        }
    }

    restore(best_params);
    return {map, trace, best_epoch, best_metric};
}

} // namespace stratmc
