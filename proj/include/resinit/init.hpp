#pragma once

#include <optional>
#include <string>

#include "resinit/linalg.hpp"

namespace resinit {

// ---------------------------------------------------------------------------
// Block architecture description.
// ---------------------------------------------------------------------------

enum class BlockKind { TypeB, TypeC };

// One residual block: z = alpha * W2 * phi(W1 * x + b1) + b2_terms + beta * h(x),
// where h is the identity (TypeB) or a trainable 1x1 projection (TypeC).
struct BlockSpec {
    BlockKind kind = BlockKind::TypeC;
    std::size_t n_in = 0;  // input channels
    std::size_t n_mid = 0; // intermediary channels
    std::size_t n_out = 0; // output channels
    std::size_t k1_1 = 1, k1_2 = 1; // spatial dims of W1's kernel
    std::size_t k2_1 = 1, k2_2 = 1; // spatial dims of W2's kernel
    double alpha = 1.0;             // residual-branch scalar, trainable
    double beta = 1.0;              // skip-branch scalar, fixed

    void validate() const;
    bool is_fully_connected() const {
        return k1_1 == 1 && k1_2 == 1 && k2_1 == 1 && k2_2 == 1;
    }

    static BlockSpec fc(BlockKind kind, std::size_t n_in, std::size_t n_mid,
                        std::size_t n_out, double alpha = 1.0, double beta = 1.0);
};

// ---------------------------------------------------------------------------
// Initialization schemes.
// ---------------------------------------------------------------------------

enum class SchemeKind {
    HeNormal,       // BalancedNormal with alpha = beta = sqrt(0.5)
    HeUniform,      // variance-matched uniform taps
    BalancedNormal, // Gaussian taps, alpha^2 + beta^2 = 1
    SkipInit,       // residual branch suppressed: alpha = 0, beta = 1
    FixupLike,      // zero W2, depth-scaled W1, alpha = 1
    RisottoB,
    RisottoC,
};

struct SigmaOverrides {
    std::optional<double> sigma1;
    std::optional<double> sigma2;
    std::optional<double> sigma_skip;
    bool any() const { return sigma1 || sigma2 || sigma_skip; }
};

struct InitScheme {
    SchemeKind kind = SchemeKind::HeNormal;
    double alpha = 1.0;
    double beta = 1.0;
    std::size_t total_depth = 0; // FixupLike only
    SigmaOverrides sigma;
    bool allow_unbalanced = false; // permit alpha^2 + beta^2 != 1 for Gaussian taps

    static InitScheme he_normal();
    static InitScheme he_uniform();
    static InitScheme balanced(double alpha, double beta);
    static InitScheme skipinit();
    static InitScheme fixup_like(std::size_t total_depth);
    static InitScheme risotto_b(double alpha = 1.0);
    static InitScheme risotto_c(double alpha = 1.0);

    // True for the looks-linear constructions (first layer is [U0; -U0]).
    bool is_looks_linear() const {
        return kind == SchemeKind::RisottoB || kind == SchemeKind::RisottoC;
    }
    // Block kind this scheme initializes.
    BlockKind block_kind() const {
        switch (kind) {
            case SchemeKind::SkipInit:
            case SchemeKind::FixupLike:
            case SchemeKind::RisottoB: return BlockKind::TypeB;
            default: return BlockKind::TypeC;
        }
    }
};

std::string scheme_name(SchemeKind kind);
SchemeKind scheme_from_name(const std::string& name); // throws ConfigError

// ---------------------------------------------------------------------------
// Initialized block weights.
// ---------------------------------------------------------------------------

// Submatrices of a looks-linear construction, retained for verification.
struct SubmatrixRecord {
    Matrix u1;     // W1's submatrix (empty for delta-identity W1)
    Matrix u2;     // W2's submatrix
    Matrix m;      // target orthogonal map of the whole block
    Matrix u_skip; // skip submatrix (TypeC only)
};

struct BlockWeights {
    ConvKernel w1;
    ConvKernel w2;
    std::optional<ConvKernel> w_skip; // nullopt: identity skip (TypeB)
    std::vector<double> b1, b2, b_skip;
    double alpha = 1.0;
    double beta = 1.0;
    std::optional<SubmatrixRecord> record;

    bool skip_is_identity() const { return !w_skip.has_value(); }
};

// ---------------------------------------------------------------------------
// Structure builders.
// ---------------------------------------------------------------------------

// Places h at the spatial center tap of a (k1 x k2) kernel, zero elsewhere.
ConvKernel delta_embed(const Matrix& h, std::size_t k1, std::size_t k2);

// Delta kernel embedding the n x n identity.
ConvKernel delta_identity(std::size_t n, std::size_t k1, std::size_t k2);

// [U, -U; -U, U] of shape (2r) x (2c).
Matrix looks_linear(const Matrix& u);

// Vertical stack [U0; -U0] used by the first layer.
Matrix first_layer_looks_linear(const Matrix& u0);

// Default standard deviations: sigma1 = sqrt(2/(n_mid*k1_1*k1_2)),
// sigma2 = sqrt(2/(n_out*k2_1*k2_2)), sigma_skip = sqrt(2/n_out).
double default_sigma1(const BlockSpec& spec);
double default_sigma2(const BlockSpec& spec);
double default_sigma_skip(const BlockSpec& spec);

// ---------------------------------------------------------------------------
// Per-scheme block initializers. All biases start at zero. Each initializer
// derives fixed substreams of rng, so a repeated call with the same stream
// reproduces identical weights.
// ---------------------------------------------------------------------------

BlockWeights init_risotto_c(const BlockSpec& spec, RngStream rng);
BlockWeights init_risotto_b(const BlockSpec& spec, RngStream rng);
BlockWeights init_normal(const BlockSpec& spec, const InitScheme& scheme, RngStream rng);
BlockWeights init_he_uniform(const BlockSpec& spec, RngStream rng,
                             const SigmaOverrides& sigma = {});
BlockWeights init_skipinit(const BlockSpec& spec, RngStream rng);
BlockWeights init_fixup_like(const BlockSpec& spec, std::size_t total_depth, RngStream rng);

// Dispatch on scheme.kind. He variants, SkipInit and FixupLike force their
// definitional alpha/beta; BalancedNormal uses the scheme's pair; the risotto
// schemes keep the block's alpha (beta is fixed to 1).
BlockWeights init_block(const BlockSpec& spec, const InitScheme& scheme, RngStream rng);

} // namespace resinit
