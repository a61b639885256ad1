#pragma once

#include <string>
#include <vector>

#include "resinit/network.hpp"
#include "resinit/parallel.hpp"

namespace resinit {

// ---------------------------------------------------------------------------
// Closed-form side.
// ---------------------------------------------------------------------------

// Per-block factors of the expected-squared-norm product.
struct BlockTheoryParams {
    double alpha = 1.0;
    double beta = 1.0;
    double sigma1 = 0.0;
    double sigma2 = 0.0;
    double sigma_skip = 0.0;
    std::size_t n_out = 0;
    std::size_t n_mid = 0;

    // (n_out/2) * (alpha^2 sigma2^2 sigma1^2 n_mid/2 + beta^2 sigma_skip^2)
    double norm_factor() const;
};

struct PropTheoryParams {
    std::size_t n1 = 0;
    double sigma0 = 0.0;
    std::vector<BlockTheoryParams> blocks;
};

// (N1/2) sigma0^2 * prod_l norm_factor_l * input_sq_norm.
double expected_norm(const PropTheoryParams& p, double input_sq_norm);

// Default-variance parameters for a fully-connected network spec.
PropTheoryParams default_theory_params(const NetworkSpec& net);

// g(rho) = (1/sqrt(2*pi)) * integral_0^inf Phi(rho*u/sqrt(1-rho^2)) e^{-u^2/2} du,
// adaptive quadrature on [0, 12] to 1e-10 absolute; rho = +-1 special-cased.
double g_rho(double rho);

struct LemmaEval {
    double v11 = 0.0, v22 = 0.0, v12 = 0.0;
    double rho = 0.0;
    double g_of_rho = 0.0;
    double exact_cov = 0.0; // E[relu(z1) relu(z2)]
    double bound_c = 0.0;   // exact_cov / sqrt(v11 v22) - rho/4
};

// Exact E[relu(z1) relu(z2)] for centered bivariate Gaussians:
// sqrt(v11 v22) * (g(rho) rho + sqrt(1-rho^2)/(2*pi)), rho = v12/sqrt(v11 v22).
LemmaEval relu_gauss_cov(double v11, double v22, double v12);

// Monte-Carlo estimate of the same expectation via Cholesky sampling.
MeanStderr lemma_mc_check(double v11, double v22, double v12, std::size_t n_samples,
                          RngStream rng, unsigned threads = 1);

struct LemmaScanRow {
    double rho = 0.0;
    double g = 0.0;
    double h = 0.0; // g(rho)*rho + sqrt(1-rho^2)/(2*pi)
    double c = 0.0; // h(rho) - rho/4
};

// Tabulates g, h and c over a grid; reports, does not assert a range for c.
std::vector<LemmaScanRow> lemma_constant_scan(std::span<const double> rho_grid);

// Layerwise covariance lower bound gamma1^l * cov0 + gamma2 (1-gamma1^l)/(1-gamma1).
struct CovBoundParams {
    double gamma1 = 0.0;
    double gamma2 = 0.0;
    double cov0 = 0.0;
    std::size_t depth = 0;

    // gamma1 = (1+beta^2)/4, gamma2 = c*(alpha^2+2); c defaults to 0.24.
    static CovBoundParams from_scheme(double alpha, double beta, std::size_t depth,
                                      double cov0, double c = 0.24);
};

std::vector<double> cov_bound_recursion(const CovBoundParams& p);

// ---------------------------------------------------------------------------
// Monte-Carlo side: ensembles of freshly initialized networks.
// ---------------------------------------------------------------------------

// Mean and standard error of ||x_L||^2 / ||x||^2 over n_samples initializations.
MeanStderr mc_norm_ratio(const NetworkSpec& net, const InitScheme& scheme,
                         const FeatureMap& x, std::size_t n_samples, RngStream rng,
                         unsigned threads = 1);

struct CovTraceLayer {
    double mean_cov = 0.0;
    double stderr_cov = 0.0;
    double mean_corr = 0.0; // cosine of raw activations
    double stderr_corr = 0.0;
    double mean_eff_corr = 0.0;    // cosine of effective signals (looks-linear only)
    double max_eff_corr_dev = 0.0; // max over samples |eff_corr_l - eff_corr_1|
};

struct CovTrace {
    std::string scheme;
    std::size_t n_samples = 0;
    double input_cov = 0.0;
    double input_corr = 0.0;
    bool has_effective = false;
    std::vector<CovTraceLayer> layers; // index 0 = first post-relu state
};

// Per-layer <x_l, x~_l> and correlations over fresh initializations; inputs
// are normalized to unit norm first. For looks-linear schemes the effective
// correlations are tracked per sample.
CovTrace mc_cov_trace(const NetworkSpec& net, const InitScheme& scheme, FeatureMap x,
                      FeatureMap x_tilde, std::size_t n_samples, RngStream rng,
                      unsigned threads = 1);

} // namespace resinit
