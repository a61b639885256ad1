#include "resinit/init.hpp"

#include <cmath>

namespace resinit {

// ---------------------------------------------------------------------------
// BlockSpec
// ---------------------------------------------------------------------------

void BlockSpec::validate() const {
    if (n_in == 0 || n_mid == 0 || n_out == 0)
        throw SpecError("BlockSpec: zero width");
    if (k1_1 % 2 == 0 || k1_2 % 2 == 0 || k2_1 % 2 == 0 || k2_2 % 2 == 0)
        throw SpecError("BlockSpec: kernel dims must be odd");
    if (kind == BlockKind::TypeB && !(n_in == n_mid && n_mid == n_out))
        throw SpecError("BlockSpec: TypeB requires n_in = n_mid = n_out");
}

BlockSpec BlockSpec::fc(BlockKind kind, std::size_t n_in, std::size_t n_mid,
                        std::size_t n_out, double alpha, double beta) {
    BlockSpec s;
    s.kind = kind;
    s.n_in = n_in;
    s.n_mid = n_mid;
    s.n_out = n_out;
    s.alpha = alpha;
    s.beta = beta;
    return s;
}

// ---------------------------------------------------------------------------
// InitScheme
// ---------------------------------------------------------------------------

InitScheme InitScheme::he_normal() {
    InitScheme s;
    s.kind = SchemeKind::HeNormal;
    s.alpha = s.beta = std::sqrt(0.5);
    return s;
}

InitScheme InitScheme::he_uniform() {
    InitScheme s;
    s.kind = SchemeKind::HeUniform;
    s.alpha = s.beta = std::sqrt(0.5);
    return s;
}

InitScheme InitScheme::balanced(double alpha, double beta) {
    InitScheme s;
    s.kind = SchemeKind::BalancedNormal;
    s.alpha = alpha;
    s.beta = beta;
    return s;
}

InitScheme InitScheme::skipinit() {
    InitScheme s;
    s.kind = SchemeKind::SkipInit;
    s.alpha = 0.0;
    s.beta = 1.0;
    return s;
}

InitScheme InitScheme::fixup_like(std::size_t total_depth) {
    InitScheme s;
    s.kind = SchemeKind::FixupLike;
    s.alpha = 1.0;
    s.beta = 1.0;
    s.total_depth = total_depth;
    return s;
}

InitScheme InitScheme::risotto_b(double alpha) {
    InitScheme s;
    s.kind = SchemeKind::RisottoB;
    s.alpha = alpha;
    s.beta = 1.0;
    return s;
}

InitScheme InitScheme::risotto_c(double alpha) {
    InitScheme s;
    s.kind = SchemeKind::RisottoC;
    s.alpha = alpha;
    s.beta = 1.0;
    return s;
}

std::string scheme_name(SchemeKind kind) {
    switch (kind) {
        case SchemeKind::HeNormal: return "he-normal";
        case SchemeKind::HeUniform: return "he-uniform";
        case SchemeKind::BalancedNormal: return "balanced";
        case SchemeKind::SkipInit: return "skipinit";
        case SchemeKind::FixupLike: return "fixup-like";
        case SchemeKind::RisottoB: return "risotto-b";
        case SchemeKind::RisottoC: return "risotto-c";
    }
    return "unknown";
}

SchemeKind scheme_from_name(const std::string& name) {
    if (name == "he-normal") return SchemeKind::HeNormal;
    if (name == "he-uniform") return SchemeKind::HeUniform;
    if (name == "balanced") return SchemeKind::BalancedNormal;
    if (name == "skipinit") return SchemeKind::SkipInit;
    if (name == "fixup-like") return SchemeKind::FixupLike;
    if (name == "risotto-b") return SchemeKind::RisottoB;
    if (name == "risotto-c") return SchemeKind::RisottoC;
    throw ConfigError("unknown scheme: " + name);
}

// ---------------------------------------------------------------------------
// Structure builders
// ---------------------------------------------------------------------------

ConvKernel delta_embed(const Matrix& h, std::size_t k1, std::size_t k2) {
    if (k1 % 2 == 0 || k2 % 2 == 0 || k1 == 0 || k2 == 0)
        throw SpecError("delta_embed: kernel dims must be odd");
    ConvKernel k(h.rows, h.cols, k1, k2);
    const std::size_t cy = k1 / 2, cx = k2 / 2;
    for (std::size_t co = 0; co < h.rows; ++co)
        for (std::size_t ci = 0; ci < h.cols; ++ci) k.at(co, ci, cy, cx) = h(co, ci);
    return k;
}

ConvKernel delta_identity(std::size_t n, std::size_t k1, std::size_t k2) {
    return delta_embed(Matrix::identity(n), k1, k2);
}

Matrix looks_linear(const Matrix& u) {
    Matrix h(2 * u.rows, 2 * u.cols, 0.0);
    for (std::size_t i = 0; i < u.rows; ++i)
        for (std::size_t j = 0; j < u.cols; ++j) {
            const double v = u(i, j);
            h(i, j) = v;
            h(i, j + u.cols) = -v;
            h(i + u.rows, j) = -v;
            h(i + u.rows, j + u.cols) = v;
        }
    return h;
}

Matrix first_layer_looks_linear(const Matrix& u0) {
    Matrix h(2 * u0.rows, u0.cols, 0.0);
    for (std::size_t i = 0; i < u0.rows; ++i)
        for (std::size_t j = 0; j < u0.cols; ++j) {
            h(i, j) = u0(i, j);
            h(i + u0.rows, j) = -u0(i, j);
        }
    return h;
}

double default_sigma1(const BlockSpec& spec) {
    return std::sqrt(2.0 / static_cast<double>(spec.n_mid * spec.k1_1 * spec.k1_2));
}

double default_sigma2(const BlockSpec& spec) {
    return std::sqrt(2.0 / static_cast<double>(spec.n_out * spec.k2_1 * spec.k2_2));
}

double default_sigma_skip(const BlockSpec& spec) {
    return std::sqrt(2.0 / static_cast<double>(spec.n_out));
}

// ---------------------------------------------------------------------------
// Initializers
// ---------------------------------------------------------------------------

namespace {

void require_even_widths(const BlockSpec& spec) {
    if (spec.n_in % 2 != 0 || spec.n_mid % 2 != 0 || spec.n_out % 2 != 0)
        throw SpecError("looks-linear construction requires even widths");
}

BlockWeights make_base(const BlockSpec& spec) {
    BlockWeights w;
    w.alpha = spec.alpha;
    w.beta = spec.beta;
    w.b1.assign(spec.n_mid, 0.0);
    w.b2.assign(spec.n_out, 0.0);
    if (spec.kind == BlockKind::TypeC) w.b_skip.assign(spec.n_out, 0.0);
    return w;
}

ConvKernel gaussian_kernel(std::size_t out_ch, std::size_t in_ch, std::size_t k1,
                           std::size_t k2, double sigma, RngStream rng) {
    ConvKernel k(out_ch, in_ch, k1, k2);
    rng.fill_gaussian(k.data, sigma);
    return k;
}

ConvKernel uniform_kernel(std::size_t out_ch, std::size_t in_ch, std::size_t k1,
                          std::size_t k2, double sigma, RngStream rng) {
    // Support +-sigma*sqrt(3) matches the Gaussian variance sigma^2.
    const double bound = sigma * std::sqrt(3.0);
    ConvKernel k(out_ch, in_ch, k1, k2);
    rng.fill_uniform(k.data, -bound, bound);
    return k;
}

} // namespace

BlockWeights init_risotto_c(const BlockSpec& spec, RngStream rng) {
    spec.validate();
    if (spec.kind != BlockKind::TypeC)
        throw SpecError("init_risotto_c: spec must be TypeC");
    require_even_widths(spec);

    const std::size_t hi = spec.n_in / 2, hm = spec.n_mid / 2, ho = spec.n_out / 2;

    auto r1 = rng.substream(1);
    auto r2 = rng.substream(2);
    auto r3 = rng.substream(3);
    SubmatrixRecord rec;
    rec.u1 = haar_orthogonal(hm, hi, r1);
    rec.u2 = haar_orthogonal(ho, hm, r2);
    rec.m = haar_orthogonal(ho, hi, r3);
    rec.u_skip = sub(rec.m, scale(matmul(rec.u2, rec.u1), spec.alpha));

    BlockWeights w = make_base(spec);
    w.beta = 1.0; // the type C construction has no separate skip scaling
    w.w1 = delta_embed(looks_linear(rec.u1), spec.k1_1, spec.k1_2);
    w.w2 = delta_embed(looks_linear(rec.u2), spec.k2_1, spec.k2_2);
    w.w_skip = delta_embed(looks_linear(rec.u_skip), 1, 1);
    w.record = std::move(rec);
    return w;
}

BlockWeights init_risotto_b(const BlockSpec& spec, RngStream rng) {
    spec.validate();
    if (spec.kind != BlockKind::TypeB)
        throw SpecError("init_risotto_b: spec must be TypeB");
    require_even_widths(spec);
    if (spec.alpha == 0.0)
        throw NumericError("init_risotto_b: alpha must be nonzero");

    const std::size_t half = spec.n_out / 2;
    auto rm = rng.substream(1);

    SubmatrixRecord rec;
    rec.m = haar_orthogonal(half, half, rm);
    rec.u2 = rec.m;
    for (std::size_t i = 0; i < half; ++i) rec.u2(i, i) -= 1.0 / spec.alpha;

    // The identity compensation only touches the diagonal blocks: the center
    // matrix is looks_linear(M) - (1/alpha) * I, so the off-diagonal blocks
    // stay -M and the block maps u to alpha * M * u.
    Matrix h2 = looks_linear(rec.m);
    for (std::size_t i = 0; i < spec.n_out; ++i) h2(i, i) -= 1.0 / spec.alpha;

    BlockWeights w = make_base(spec);
    w.beta = 1.0; // identity skip enters unscaled
    w.w1 = delta_identity(spec.n_in, spec.k1_1, spec.k1_2);
    w.w2 = delta_embed(h2, spec.k2_1, spec.k2_2);
    w.record = std::move(rec);
    return w;
}

BlockWeights init_normal(const BlockSpec& spec, const InitScheme& scheme, RngStream rng) {
    spec.validate();
    if (scheme.kind != SchemeKind::HeNormal && scheme.kind != SchemeKind::BalancedNormal)
        throw SpecError("init_normal: scheme must be he-normal or balanced");

    const double balance = spec.alpha * spec.alpha + spec.beta * spec.beta;
    if (std::abs(balance - 1.0) > 1e-12 && !scheme.allow_unbalanced && !scheme.sigma.any())
        throw SpecError("init_normal: alpha^2 + beta^2 must equal 1 (or override sigmas)");

    const double s1 = scheme.sigma.sigma1.value_or(default_sigma1(spec));
    const double s2 = scheme.sigma.sigma2.value_or(default_sigma2(spec));
    const double ss = scheme.sigma.sigma_skip.value_or(default_sigma_skip(spec));

    BlockWeights w = make_base(spec);
    w.w1 = gaussian_kernel(spec.n_mid, spec.n_in, spec.k1_1, spec.k1_2, s1, rng.substream(1));
    w.w2 = gaussian_kernel(spec.n_out, spec.n_mid, spec.k2_1, spec.k2_2, s2, rng.substream(2));
    if (spec.kind == BlockKind::TypeC)
        w.w_skip = gaussian_kernel(spec.n_out, spec.n_in, 1, 1, ss, rng.substream(3));
    return w;
}

BlockWeights init_he_uniform(const BlockSpec& spec, RngStream rng, const SigmaOverrides& sigma) {
    spec.validate();
    const double s1 = sigma.sigma1.value_or(default_sigma1(spec));
    const double s2 = sigma.sigma2.value_or(default_sigma2(spec));
    const double ss = sigma.sigma_skip.value_or(default_sigma_skip(spec));

    BlockWeights w = make_base(spec);
    w.w1 = uniform_kernel(spec.n_mid, spec.n_in, spec.k1_1, spec.k1_2, s1, rng.substream(1));
    w.w2 = uniform_kernel(spec.n_out, spec.n_mid, spec.k2_1, spec.k2_2, s2, rng.substream(2));
    if (spec.kind == BlockKind::TypeC)
        w.w_skip = uniform_kernel(spec.n_out, spec.n_in, 1, 1, ss, rng.substream(3));
    return w;
}

BlockWeights init_skipinit(const BlockSpec& spec, RngStream rng) {
    spec.validate();
    if (spec.kind != BlockKind::TypeB)
        throw SpecError("init_skipinit: spec must be TypeB (identity skip)");

    BlockWeights w = make_base(spec);
    w.alpha = 0.0;
    w.beta = 1.0;
    w.w1 = gaussian_kernel(spec.n_mid, spec.n_in, spec.k1_1, spec.k1_2,
                           default_sigma1(spec), rng.substream(1));
    w.w2 = gaussian_kernel(spec.n_out, spec.n_mid, spec.k2_1, spec.k2_2,
                           default_sigma2(spec), rng.substream(2));
    return w;
}

BlockWeights init_fixup_like(const BlockSpec& spec, std::size_t total_depth, RngStream rng) {
    spec.validate();
    if (spec.kind != BlockKind::TypeB)
        throw SpecError("init_fixup_like: spec must be TypeB (identity skip)");
    if (total_depth == 0)
        throw SpecError("init_fixup_like: total_depth must be positive");

    BlockWeights w = make_base(spec);
    w.alpha = 1.0;
    w.beta = 1.0;
    const double depth_scale = 1.0 / std::sqrt(static_cast<double>(total_depth));
    w.w1 = gaussian_kernel(spec.n_mid, spec.n_in, spec.k1_1, spec.k1_2,
                           default_sigma1(spec) * depth_scale, rng.substream(1));
    w.w2 = ConvKernel(spec.n_out, spec.n_mid, spec.k2_1, spec.k2_2); // all zero
    return w;
}

BlockWeights init_block(const BlockSpec& spec, const InitScheme& scheme, RngStream rng) {
    // He/SkipInit/Fixup fix alpha and beta by definition; balanced carries its
    // own pair; the risotto schemes keep the block's (trainable) alpha.
    BlockSpec s = spec;
    switch (scheme.kind) {
        case SchemeKind::HeNormal:
        case SchemeKind::HeUniform:
            s.alpha = s.beta = std::sqrt(0.5);
            break;
        case SchemeKind::BalancedNormal:
            s.alpha = scheme.alpha;
            s.beta = scheme.beta;
            break;
        case SchemeKind::SkipInit:
            s.alpha = 0.0;
            s.beta = 1.0;
            break;
        case SchemeKind::FixupLike:
            s.alpha = 1.0;
            s.beta = 1.0;
            break;
        case SchemeKind::RisottoB:
        case SchemeKind::RisottoC:
            s.beta = 1.0;
            break;
    }
    switch (scheme.kind) {
        case SchemeKind::HeNormal:
        case SchemeKind::BalancedNormal: return init_normal(s, scheme, rng);
        case SchemeKind::HeUniform: return init_he_uniform(s, rng, scheme.sigma);
        case SchemeKind::SkipInit: return init_skipinit(s, rng);
        case SchemeKind::FixupLike: return init_fixup_like(s, scheme.total_depth, rng);
        case SchemeKind::RisottoB: return init_risotto_b(s, rng);
        case SchemeKind::RisottoC: return init_risotto_c(s, rng);
    }
    throw SpecError("init_block: unhandled scheme");
}

} // namespace resinit
