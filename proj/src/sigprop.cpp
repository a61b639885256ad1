#include "resinit/sigprop.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace resinit {

// ---------------------------------------------------------------------------
// Expected squared norm
// ---------------------------------------------------------------------------

double BlockTheoryParams::norm_factor() const {
    const double res = alpha * alpha * sigma2 * sigma2 * sigma1 * sigma1 *
                       static_cast<double>(n_mid) / 2.0;
    const double skip = beta * beta * sigma_skip * sigma_skip;
    return static_cast<double>(n_out) / 2.0 * (res + skip);
}

double expected_norm(const PropTheoryParams& p, double input_sq_norm) {
    double v = static_cast<double>(p.n1) / 2.0 * p.sigma0 * p.sigma0 * input_sq_norm;
    for (const auto& b : p.blocks) v *= b.norm_factor();
    return v;
}

PropTheoryParams default_theory_params(const NetworkSpec& net) {
    PropTheoryParams p;
    p.n1 = net.first_layer_out;
    p.sigma0 = std::sqrt(2.0 / static_cast<double>(net.first_layer_out * net.first_layer_k *
                                                   net.first_layer_k));
    for (const auto& b : net.blocks) {
        BlockTheoryParams t;
        t.alpha = b.alpha;
        t.beta = b.beta;
        t.sigma1 = default_sigma1(b);
        t.sigma2 = default_sigma2(b);
        t.sigma_skip = default_sigma_skip(b);
        t.n_out = b.n_out;
        t.n_mid = b.n_mid;
        p.blocks.push_back(t);
    }
    return p;
}

// ---------------------------------------------------------------------------
// g(rho) and the exact ReLU covariance
// ---------------------------------------------------------------------------

namespace {

double std_normal_cdf(double t) { return 0.5 * std::erfc(-t / std::numbers::sqrt2); }

// Adaptive Simpson with absolute tolerance.
template <class F>
double adaptive_simpson(const F& f, double a, double b, double fa, double fm, double fb,
                        double whole, double tol, int depth) {
    const double m = 0.5 * (a + b);
    const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
    const double flm = f(lm), frm = f(rm);
    const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    const double delta = left + right - whole;
    if (depth <= 0 || std::abs(delta) <= 15.0 * tol)
        return left + right + delta / 15.0;
    return adaptive_simpson(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) +
           adaptive_simpson(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1);
}

template <class F>
double integrate(const F& f, double a, double b, double tol) {
    const double m = 0.5 * (a + b);
    const double fa = f(a), fm = f(m), fb = f(b);
    const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    return adaptive_simpson(f, a, b, fa, fm, fb, whole, tol, 48);
}

constexpr double kQuadUpper = 12.0; // Gaussian tail beyond this is < 1e-30
constexpr double kQuadTol = 1e-10;

} // namespace

double g_rho(double rho) {
    if (!(rho >= -1.0 && rho <= 1.0))
        throw NumericError("g_rho: |rho| must be <= 1");
    if (rho == 1.0) return 0.5;
    if (rho == -1.0) return 0.0;

    const double slope = rho / std::sqrt(1.0 - rho * rho);
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    auto f = [&](double u) {
        return inv_sqrt_2pi * std_normal_cdf(slope * u) * std::exp(-0.5 * u * u);
    };
    return integrate(f, 0.0, kQuadUpper, kQuadTol);
}

LemmaEval relu_gauss_cov(double v11, double v22, double v12) {
    if (!(v11 > 0.0) || !(v22 > 0.0))
        throw NumericError("relu_gauss_cov: variances must be positive");
    const double denom = std::sqrt(v11 * v22);
    if (std::abs(v12) > denom * (1.0 + 1e-12))
        throw NumericError("relu_gauss_cov: covariance matrix not PSD");

    LemmaEval e;
    e.v11 = v11;
    e.v22 = v22;
    e.v12 = v12;
    e.rho = std::clamp(v12 / denom, -1.0, 1.0);
    e.g_of_rho = g_rho(e.rho);
    const double h = e.g_of_rho * e.rho +
                     std::sqrt(std::max(0.0, 1.0 - e.rho * e.rho)) / (2.0 * std::numbers::pi);
    e.exact_cov = denom * h;
    e.bound_c = h - e.rho / 4.0;
    return e;
}

MeanStderr lemma_mc_check(double v11, double v22, double v12, std::size_t n_samples,
                          RngStream rng, unsigned threads) {
    if (n_samples < 2) throw ConfigError("lemma_mc_check: need at least 2 samples");
    const double denom = std::sqrt(v11 * v22);
    if (!(v11 > 0.0) || !(v22 > 0.0) || std::abs(v12) > denom * (1.0 + 1e-12))
        throw NumericError("lemma_mc_check: covariance matrix not PSD");

    // Cholesky of [[v11, v12], [v12, v22]].
    const double l11 = std::sqrt(v11);
    const double l21 = v12 / l11;
    const double l22 = std::sqrt(std::max(0.0, v22 - l21 * l21));

    std::vector<double> vals(n_samples);
    parallel_for(n_samples, threads, [&](std::size_t i) {
        auto r = rng.substream(i);
        const double g1 = r.next_gaussian();
        const double g2 = r.next_gaussian();
        const double z1 = l11 * g1;
        const double z2 = l21 * g1 + l22 * g2;
        vals[i] = (z1 > 0.0 ? z1 : 0.0) * (z2 > 0.0 ? z2 : 0.0);
    });
    return mean_stderr(vals);
}

std::vector<LemmaScanRow> lemma_constant_scan(std::span<const double> rho_grid) {
    std::vector<LemmaScanRow> rows;
    rows.reserve(rho_grid.size());
    for (double rho : rho_grid) {
        if (!(rho >= -1.0 && rho <= 1.0))
            throw NumericError("lemma_constant_scan: grid point outside [-1, 1]");
        LemmaScanRow r;
        r.rho = rho;
        r.g = g_rho(rho);
        r.h = r.g * rho + std::sqrt(std::max(0.0, 1.0 - rho * rho)) / (2.0 * std::numbers::pi);
        r.c = r.h - rho / 4.0;
        rows.push_back(r);
    }
    return rows;
}

CovBoundParams CovBoundParams::from_scheme(double alpha, double beta, std::size_t depth,
                                           double cov0, double c) {
    CovBoundParams p;
    p.gamma1 = (1.0 + beta * beta) / 4.0;
    p.gamma2 = c * (alpha * alpha + 2.0);
    p.cov0 = cov0;
    p.depth = depth;
    return p;
}

std::vector<double> cov_bound_recursion(const CovBoundParams& p) {
    if (p.gamma1 >= 1.0) throw NumericError("cov_bound_recursion: gamma1 must be < 1");
    std::vector<double> bounds(p.depth);
    double g1l = 1.0;
    for (std::size_t l = 0; l < p.depth; ++l) {
        g1l *= p.gamma1;
        bounds[l] = g1l * p.cov0 + p.gamma2 * (1.0 - g1l) / (1.0 - p.gamma1);
    }
    return bounds;
}

// ---------------------------------------------------------------------------
// Monte-Carlo estimators over network ensembles
// ---------------------------------------------------------------------------

MeanStderr mc_norm_ratio(const NetworkSpec& net, const InitScheme& scheme,
                         const FeatureMap& x, std::size_t n_samples, RngStream rng,
                         unsigned threads) {
    if (n_samples < 2) throw ConfigError("mc_norm_ratio: need at least 2 samples");
    net.validate();
    const double in_sq = norm_sq(x.data);
    if (!(in_sq > 0.0)) throw NumericError("mc_norm_ratio: zero input");

    std::vector<double> ratios(n_samples);
    parallel_for(n_samples, threads, [&](std::size_t i) {
        NetworkWeights w = build_network(net, scheme, rng.substream(i));
        Activations a = forward(net, w, x);
        ratios[i] = norm_sq(a.acts.back().data) / in_sq;
    });
    return mean_stderr(ratios);
}

namespace {

double cosine(std::span<const double> a, std::span<const double> b) {
    const double na = std::sqrt(norm_sq(a)), nb = std::sqrt(norm_sq(b));
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot(a, b) / (na * nb);
}

void normalize(FeatureMap& x) {
    const double n = std::sqrt(norm_sq(x.data));
    if (!(n > 0.0)) throw NumericError("mc_cov_trace: zero input");
    for (double& v : x.data) v /= n;
}

} // namespace

CovTrace mc_cov_trace(const NetworkSpec& net, const InitScheme& scheme, FeatureMap x,
                      FeatureMap x_tilde, std::size_t n_samples, RngStream rng,
                      unsigned threads) {
    if (n_samples < 2) throw ConfigError("mc_cov_trace: need at least 2 samples");
    net.validate();
    normalize(x);
    normalize(x_tilde);

    const std::size_t n_layers = net.blocks.size() + 1;
    const bool effective = scheme.is_looks_linear();

    // Per-sample, per-layer traces, filled independently then reduced.
    std::vector<std::vector<double>> cov(n_layers, std::vector<double>(n_samples));
    std::vector<std::vector<double>> corr(n_layers, std::vector<double>(n_samples));
    std::vector<std::vector<double>> eff(n_layers, std::vector<double>(n_samples, 0.0));

    parallel_for(n_samples, threads, [&](std::size_t i) {
        NetworkWeights w = build_network(net, scheme, rng.substream(i));
        Activations a = forward(net, w, x);
        Activations b = forward(net, w, x_tilde);
        for (std::size_t l = 0; l < n_layers; ++l) {
            cov[l][i] = dot(a.acts[l].data, b.acts[l].data);
            corr[l][i] = cosine(a.acts[l].data, b.acts[l].data);
            if (effective) {
                const SignalSplit sa = signal_split(a.acts[l]);
                const SignalSplit sb = signal_split(b.acts[l]);
                eff[l][i] = cosine(sa.u, sb.u);
            }
        }
    });

    CovTrace trace;
    trace.scheme = scheme_name(scheme.kind);
    trace.n_samples = n_samples;
    trace.input_cov = dot(x.data, x_tilde.data);
    trace.input_corr = cosine(x.data, x_tilde.data);
    trace.has_effective = effective;
    trace.layers.resize(n_layers);
    for (std::size_t l = 0; l < n_layers; ++l) {
        const MeanStderr mc = mean_stderr(cov[l]);
        const MeanStderr mr = mean_stderr(corr[l]);
        auto& layer = trace.layers[l];
        layer.mean_cov = mc.mean;
        layer.stderr_cov = mc.stderr_;
        layer.mean_corr = mr.mean;
        layer.stderr_corr = mr.stderr_;
        if (effective) {
            layer.mean_eff_corr = mean_stderr(eff[l]).mean;
            double dev = 0.0;
            for (std::size_t i = 0; i < n_samples; ++i)
                dev = std::max(dev, std::abs(eff[l][i] - eff[0][i]));
            layer.max_eff_corr_dev = dev;
        }
    }
    return trace;
}

} // namespace resinit
