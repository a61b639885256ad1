#pragma once

#include <optional>
#include <vector>

#include "resinit/init.hpp"
#include "resinit/linalg.hpp"

namespace resinit {

// ---------------------------------------------------------------------------
// Network architecture.
// ---------------------------------------------------------------------------

enum class Pooling { None, Average };

struct NetworkSpec {
    std::size_t input_dim = 0; // input channels
    std::size_t spatial_h = 1;
    std::size_t spatial_w = 1;
    std::size_t first_layer_out = 0; // N1, output channels of W0
    std::size_t first_layer_k = 1;   // W0 kernel size (odd)
    std::vector<BlockSpec> blocks;
    Pooling pooling = Pooling::Average;
    std::size_t output_dim = 0;

    std::size_t depth() const { return blocks.size(); }
    bool is_fully_connected() const;
    void validate() const;

    // Uniform-width fully-connected network: input_dim = first_layer_out =
    // all block widths = width. Block kind and alpha/beta follow the scheme.
    static NetworkSpec fc_uniform(std::size_t depth, std::size_t width,
                                  const InitScheme& scheme, std::size_t output_dim = 10);
};

struct NetworkWeights {
    ConvKernel w0;
    std::vector<BlockWeights> blocks;
    Matrix w_out;
    std::optional<Matrix> u0; // first-layer submatrix under looks-linear schemes
};

// Per-layer states of one forward pass. preacts[0] = z0 (first layer),
// preacts[l] = block l's preactivation; acts[l] = relu(preacts[l]).
// acts.back() feeds pooling and the output layer.
struct Activations {
    std::vector<FeatureMap> preacts;
    std::vector<FeatureMap> acts;
    std::vector<double> pooled;
    std::vector<double> output;
};

struct SignalSplit {
    std::vector<double> plus;
    std::vector<double> minus;
    std::vector<double> u; // plus - minus
};

struct JacobianReport {
    std::vector<double> raw_singular_values;
    std::vector<double> effective_singular_values; // empty if not computed
    std::optional<double> effective_residual;      // max |J_eff - expected M|
    double analytic_vs_fd_gap = 0.0;
    bool zero_preactivation = false; // subgradient ambiguity encountered
};

// ---------------------------------------------------------------------------
// Forward propagation.
// ---------------------------------------------------------------------------

// relu(alpha * W2 * relu(W1 * x + b1) + b2-term + beta * h(x)).
FeatureMap block_forward(const BlockWeights& w, const BlockSpec& spec, const FeatureMap& x);

// Preactivation of a block (no outer relu).
FeatureMap block_preactivation(const BlockWeights& w, const BlockSpec& spec,
                               const FeatureMap& x);

Activations forward(const NetworkSpec& net, const NetworkWeights& weights,
                    const FeatureMap& x);

// Splits an even-width vector into index halves and the effective signal
// u = plus - minus.
SignalSplit signal_split(std::span<const double> x);
// Channel-halved version for spatial states.
SignalSplit signal_split(const FeatureMap& x);

// True if the two halves have disjoint supports (x_plus .* x_minus == 0).
bool is_complementary(const FeatureMap& x);

// ---------------------------------------------------------------------------
// Jacobians. States are flattened in FeatureMap order, so the raw Jacobian of
// a block is (n_out*H*W) x (n_in*H*W). ReLU derivative at exactly zero is
// taken as 0 (inactive); hitting that case sets *zero_flag when provided.
// ---------------------------------------------------------------------------

Matrix block_jacobian(const BlockWeights& w, const BlockSpec& spec, const FeatureMap& x,
                      bool* zero_flag = nullptr);

// Central finite differences of block_forward; the independent cross-check.
Matrix fd_block_jacobian(const BlockWeights& w, const BlockSpec& spec, const FeatureMap& x,
                         double step = 1e-6);

// Jacobian of the output effective signal with respect to the input effective
// signal, for complementary looks-linear inputs. Computed from the raw
// Jacobian, the input sign pattern, and the half-difference operator.
Matrix effective_jacobian(const BlockWeights& w, const BlockSpec& spec, const FeatureMap& x);

// The matrix the effective Jacobian of a recorded looks-linear block should
// equal: block-diagonal copies of record.m over spatial positions.
Matrix expected_effective_map(const BlockWeights& w, std::size_t height, std::size_t width);

JacobianReport make_jacobian_report(const BlockWeights& w, const BlockSpec& spec,
                                    const FeatureMap& x, bool with_effective);

// ---------------------------------------------------------------------------
// Network construction.
// ---------------------------------------------------------------------------

// W0 is first-layer looks-linear under risotto schemes, Gaussian with
// sigma0 = sqrt(2/(N1*k0^2)) otherwise; W_out is Gaussian sqrt(2/fan_in).
// Layer l draws from rng.substream(l).
NetworkWeights build_network(const NetworkSpec& net, const InitScheme& scheme,
                             RngStream rng);

} // namespace resinit
