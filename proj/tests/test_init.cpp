#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "resinit/init.hpp"

using namespace resinit;

namespace {

BlockSpec fc_c(std::size_t n_in, std::size_t n_mid, std::size_t n_out, double alpha = 1.0) {
    return BlockSpec::fc(BlockKind::TypeC, n_in, n_mid, n_out, alpha, 1.0);
}

BlockSpec fc_b(std::size_t n, double alpha = 1.0) {
    return BlockSpec::fc(BlockKind::TypeB, n, n, n, alpha, 1.0);
}

double sum_abs(std::span<const double> xs) {
    double s = 0.0;
    for (double x : xs) s += std::abs(x);
    return s;
}

double sample_variance(std::span<const double> xs) {
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    return var / static_cast<double>(xs.size() - 1);
}

double frobenius(const ConvKernel& k) {
    double s = 0.0;
    for (double v : k.data) s += v * v;
    return std::sqrt(s);
}

// Off-center taps of a delta kernel must be exactly zero.
bool off_center_zero(const ConvKernel& k) {
    const std::size_t cy = k.k1 / 2, cx = k.k2 / 2;
    for (std::size_t co = 0; co < k.out_channels; ++co)
        for (std::size_t ci = 0; ci < k.in_channels; ++ci)
            for (std::size_t ky = 0; ky < k.k1; ++ky)
                for (std::size_t kx = 0; kx < k.k2; ++kx) {
                    if (ky == cy && kx == cx) continue;
                    if (k.at(co, ci, ky, kx) != 0.0) return false;
                }
    return true;
}

double gram_residual(const Matrix& u) {
    const bool rows_ortho = u.rows <= u.cols;
    Matrix g = rows_ortho ? matmul_nt(u, u) : matmul_tn(u, u);
    return max_abs_diff(g, Matrix::identity(rows_ortho ? u.rows : u.cols));
}

} // namespace

TEST_CASE("delta_embed places h at the center tap only") {
    Matrix h(2, 3);
    for (std::size_t i = 0; i < h.data.size(); ++i) h.data[i] = static_cast<double>(i) - 2.5;

    SUBCASE("1x1 kernel is h itself") {
        ConvKernel k = delta_embed(h, 1, 1);
        CHECK(k.center_matrix().data == h.data);
    }
    SUBCASE("3x3 kernel has h at (1,1) and zeros elsewhere") {
        ConvKernel k = delta_embed(h, 3, 3);
        CHECK(max_abs_diff(k.center_matrix(), h) == 0.0);
        CHECK(off_center_zero(k));
        CHECK(sum_abs(k.data) == sum_abs(h.data));
    }
    SUBCASE("even kernel dims are rejected") {
        CHECK_THROWS_AS(delta_embed(h, 2, 3), SpecError);
        CHECK_THROWS_AS(delta_embed(h, 3, 4), SpecError);
    }
}

TEST_CASE("looks_linear block structure") {
    Matrix u(1, 1);
    u(0, 0) = 1.0;
    Matrix h = looks_linear(u);
    CHECK(h.rows == 2);
    CHECK(h.cols == 2);
    CHECK(h.data == std::vector<double>{1.0, -1.0, -1.0, 1.0});

    RngStream rng(5);
    Matrix u2 = haar_orthogonal(3, 3, rng);
    Matrix h2 = looks_linear(u2);

    std::vector<double> v(3);
    rng.fill_gaussian(v, 1.0);

    // H [v; v] = 0
    std::vector<double> vv(6);
    for (std::size_t i = 0; i < 3; ++i) vv[i] = vv[i + 3] = v[i];
    for (double out : matvec(h2, vv)) CHECK(std::abs(out) <= 1e-14);

    // H [v; -v] = [2Uv; -2Uv]
    for (std::size_t i = 0; i < 3; ++i) vv[i + 3] = -v[i];
    const auto out = matvec(h2, vv);
    const auto uv = matvec(u2, v);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(out[i] == doctest::Approx(2.0 * uv[i]).epsilon(1e-13));
        CHECK(out[i + 3] == doctest::Approx(-2.0 * uv[i]).epsilon(1e-13));
    }
}

TEST_CASE("first_layer_looks_linear stacks U over -U") {
    Matrix h = first_layer_looks_linear(Matrix::identity(2));
    CHECK(h.rows == 4);
    CHECK(h.cols == 2);
    CHECK(h.data == std::vector<double>{1, 0, 0, 1, -1, 0, 0, -1});

    RngStream rng(6);
    Matrix u0 = haar_orthogonal(3, 5, rng);
    Matrix hh = first_layer_looks_linear(u0);
    std::vector<double> x(5);
    rng.fill_gaussian(x, 1.0);
    const auto hx = matvec(hh, x);
    const auto u0x = matvec(u0, x);

    // top half minus bottom half is 2*U0x; after relu it is exactly U0x
    for (std::size_t i = 0; i < 3; ++i)
        CHECK(hx[i] - hx[i + 3] == doctest::Approx(2.0 * u0x[i]).epsilon(1e-13));
    const auto act = relu(hx);
    for (std::size_t i = 0; i < 3; ++i) CHECK(act[i] - act[i + 3] == u0x[i]);
}

TEST_CASE("risotto type C construction") {
    SUBCASE("alpha = 0 degenerates to a pure orthogonal skip") {
        BlockWeights w = init_risotto_c(fc_c(4, 4, 4, 0.0), RngStream(1));
        REQUIRE(w.record.has_value());
        CHECK(max_abs_diff(w.record->u_skip, w.record->m) == 0.0);
    }

    SUBCASE("skip center reconstructs M - alpha U2 U1") {
        BlockSpec spec = fc_c(4, 4, 4, 1.0);
        BlockWeights w = init_risotto_c(spec, RngStream(2));
        REQUIRE(w.record.has_value());
        const auto& r = *w.record;

        // same arithmetic route as the initializer: must agree bit-exactly
        Matrix recon = sub(r.m, scale(matmul(r.u2, r.u1), spec.alpha));
        Matrix h_skip = w.w_skip->center_matrix();
        for (std::size_t i = 0; i < 2; ++i)
            for (std::size_t j = 0; j < 2; ++j) CHECK(h_skip(i, j) == recon(i, j));

        // independent loop order, tolerance check
        Matrix p(2, 2, 0.0);
        for (std::size_t i = 0; i < 2; ++i)
            for (std::size_t j = 0; j < 2; ++j) {
                double acc = 0.0;
                for (std::size_t k = 0; k < 2; ++k) acc += r.u2(i, k) * r.u1(k, j);
                p(i, j) = acc;
            }
        for (std::size_t i = 0; i < 2; ++i)
            for (std::size_t j = 0; j < 2; ++j)
                CHECK(h_skip(i, j) + spec.alpha * p(i, j) ==
                      doctest::Approx(r.m(i, j)).epsilon(1e-15));
    }

    SUBCASE("looks-linear quadrants and delta structure") {
        BlockSpec spec = fc_c(6, 8, 4, 0.5);
        spec.k1_1 = spec.k1_2 = 3;
        spec.k2_1 = spec.k2_2 = 3;
        BlockWeights w = init_risotto_c(spec, RngStream(3));
        CHECK(off_center_zero(w.w1));
        CHECK(off_center_zero(w.w2));
        CHECK(off_center_zero(*w.w_skip));
        REQUIRE(w.record.has_value());
        CHECK(max_abs_diff(w.w1.center_matrix(), looks_linear(w.record->u1)) == 0.0);
        CHECK(max_abs_diff(w.w2.center_matrix(), looks_linear(w.record->u2)) == 0.0);
        CHECK(max_abs_diff(w.w_skip->center_matrix(), looks_linear(w.record->u_skip)) == 0.0);
    }

    SUBCASE("recorded submatrices are orthonormal") {
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            BlockWeights w = init_risotto_c(fc_c(8, 12, 16, 2.0), RngStream(seed));
            CHECK(gram_residual(w.record->u1) <= 1e-12);
            CHECK(gram_residual(w.record->u2) <= 1e-12);
            CHECK(gram_residual(w.record->m) <= 1e-12);
        }
    }

    SUBCASE("rejections") {
        CHECK_THROWS_AS(init_risotto_c(fc_c(3, 4, 4), RngStream(1)), SpecError);
        CHECK_THROWS_AS(init_risotto_c(fc_c(4, 5, 4), RngStream(1)), SpecError);
        CHECK_THROWS_AS(init_risotto_c(fc_b(4), RngStream(1)), SpecError);
    }

    SUBCASE("biases are zero") {
        BlockWeights w = init_risotto_c(fc_c(4, 4, 4), RngStream(4));
        for (double b : w.b1) CHECK(b == 0.0);
        for (double b : w.b2) CHECK(b == 0.0);
        for (double b : w.b_skip) CHECK(b == 0.0);
    }
}

TEST_CASE("risotto type B construction") {
    SUBCASE("center of W2 at alpha = 1") {
        BlockWeights w = init_risotto_b(fc_b(4, 1.0), RngStream(7));
        REQUIRE(w.record.has_value());
        const Matrix& m = w.record->m;
        Matrix h2 = w.w2.center_matrix();
        // diagonal blocks are M - I, off-diagonal blocks stay -M
        for (std::size_t i = 0; i < 2; ++i)
            for (std::size_t j = 0; j < 2; ++j) {
                const double mi = m(i, j) - (i == j ? 1.0 : 0.0);
                CHECK(h2(i, j) == doctest::Approx(mi).epsilon(1e-15));
                CHECK(h2(i + 2, j + 2) == doctest::Approx(mi).epsilon(1e-15));
                CHECK(h2(i, j + 2) == doctest::Approx(-m(i, j)).epsilon(1e-15));
                CHECK(h2(i + 2, j) == doctest::Approx(-m(i, j)).epsilon(1e-15));
            }
    }

    SUBCASE("W1 is the delta identity: conv leaves input unchanged") {
        BlockSpec spec = fc_b(6);
        spec.k1_1 = spec.k1_2 = 3;
        spec.k2_1 = spec.k2_2 = 3;
        BlockWeights w = init_risotto_b(spec, RngStream(8));
        FeatureMap x(6, 3, 3);
        RngStream rng(9);
        rng.fill_gaussian(x.data, 1.0);
        FeatureMap y = conv2d_same(w.w1, x);
        CHECK(y.data == x.data);
        CHECK(off_center_zero(w.w1));
        CHECK(off_center_zero(w.w2));
        CHECK(w.skip_is_identity());
    }

    SUBCASE("rejections") {
        CHECK_THROWS_AS(init_risotto_b(fc_b(4, 0.0), RngStream(1)), NumericError);
        CHECK_THROWS_AS(init_risotto_b(fc_b(5, 1.0), RngStream(1)), SpecError);
        CHECK_THROWS_AS(init_risotto_b(fc_c(4, 4, 4), RngStream(1)), SpecError);
        BlockSpec uneven = BlockSpec::fc(BlockKind::TypeB, 4, 6, 4);
        CHECK_THROWS_AS(init_risotto_b(uneven, RngStream(1)), SpecError);
    }
}

TEST_CASE("init_normal samples the default variances") {
    // 64 x 15625 taps at 1x1: one million samples of sigma2 = sqrt(2/64)
    BlockSpec spec = fc_c(16, 15625, 64, std::sqrt(0.5));
    spec.beta = std::sqrt(0.5);
    InitScheme scheme = InitScheme::he_normal();
    BlockWeights w = init_normal(spec, scheme, RngStream(11));

    CHECK(w.w2.data.size() == 1000000);
    const double var = sample_variance(w.w2.data);
    CHECK(var == doctest::Approx(2.0 / 64.0).epsilon(0.02));

    for (double b : w.b1) CHECK(b == 0.0);
    for (double b : w.b2) CHECK(b == 0.0);
    for (double b : w.b_skip) CHECK(b == 0.0);
}

TEST_CASE("init_normal sigma override") {
    BlockSpec spec = fc_c(16, 15625, 64, 1.0);
    spec.beta = 0.0;
    InitScheme scheme = InitScheme::balanced(1.0, 0.0);
    scheme.sigma.sigma2 = 1.0;
    BlockWeights w = init_normal(spec, scheme, RngStream(12));
    CHECK(sample_variance(w.w2.data) == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("init_normal enforces the balance condition") {
    BlockSpec spec = fc_c(8, 8, 8, 1.0);
    spec.beta = 1.0; // alpha^2 + beta^2 = 2
    InitScheme scheme = InitScheme::balanced(1.0, 1.0);
    CHECK_THROWS_AS(init_normal(spec, scheme, RngStream(1)), SpecError);

    scheme.allow_unbalanced = true;
    CHECK_NOTHROW(init_normal(spec, scheme, RngStream(1)));
}

TEST_CASE("init_normal is deterministic and replayable") {
    BlockSpec spec = fc_c(8, 8, 8, std::sqrt(0.5));
    spec.beta = std::sqrt(0.5);
    InitScheme scheme = InitScheme::he_normal();
    BlockWeights a = init_normal(spec, scheme, RngStream(99, 3));
    BlockWeights b = init_normal(spec, scheme, RngStream(99, 3));
    CHECK(a.w1.data == b.w1.data);
    CHECK(a.w2.data == b.w2.data);
    CHECK(a.w_skip->data == b.w_skip->data);

    BlockWeights c = init_normal(spec, scheme, RngStream(99, 4));
    CHECK(a.w1.data != c.w1.data);
}

TEST_CASE("init_he_uniform support and moments") {
    BlockSpec spec = fc_c(16, 15625, 64, std::sqrt(0.5));
    spec.beta = std::sqrt(0.5);
    BlockWeights w = init_he_uniform(spec, RngStream(13));

    const double sigma = default_sigma2(spec);
    const double bound = sigma * std::sqrt(3.0);
    double mx = 0.0, mean = 0.0;
    for (double v : w.w2.data) {
        mx = std::max(mx, std::abs(v));
        mean += v;
    }
    mean /= static_cast<double>(w.w2.data.size());
    CHECK(mx <= bound);
    CHECK(sample_variance(w.w2.data) == doctest::Approx(sigma * sigma).epsilon(0.02));
    // zero mean within 3 standard errors
    const double se = sigma / std::sqrt(static_cast<double>(w.w2.data.size()));
    CHECK(std::abs(mean) <= 3.0 * se);
}

TEST_CASE("init_skipinit") {
    BlockWeights w = init_skipinit(fc_b(8), RngStream(14));
    CHECK(w.alpha == 0.0);
    CHECK(w.beta == 1.0);
    CHECK(w.skip_is_identity());
    double w2_norm = frobenius(w.w2);
    CHECK(w2_norm > 0.0); // feature diversity lives in the suppressed branch

    CHECK_THROWS_AS(init_skipinit(fc_c(8, 8, 8), RngStream(1)), SpecError);
}

TEST_CASE("init_fixup_like") {
    BlockWeights w = init_fixup_like(fc_b(8), 16, RngStream(15));
    CHECK(w.alpha == 1.0);
    for (double v : w.w2.data) CHECK(v == 0.0);
    CHECK(w.skip_is_identity());

    // ||W1||_F scales as total_depth^(-1/2); same stream isolates the scale
    const double f4 = frobenius(init_fixup_like(fc_b(8), 4, RngStream(15)).w1);
    const double f16 = frobenius(init_fixup_like(fc_b(8), 16, RngStream(15)).w1);
    const double f64 = frobenius(init_fixup_like(fc_b(8), 64, RngStream(15)).w1);
    CHECK(f4 / f16 == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(f16 / f64 == doctest::Approx(2.0).epsilon(1e-12));

    CHECK_THROWS_AS(init_fixup_like(fc_b(8), 0, RngStream(1)), SpecError);
}

TEST_CASE("default sigmas satisfy the norm-preservation product for FC blocks") {
    // (n_out/2) * (alpha^2 s2^2 s1^2 n_mid/2 + beta^2 s_skip^2) == 1
    // whenever alpha^2 + beta^2 == 1 and kernels are 1x1.
    RngStream rng(16);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n_in = 1 + static_cast<std::size_t>(rng.next_u64() % 96);
        const std::size_t n_mid = 1 + static_cast<std::size_t>(rng.next_u64() % 96);
        const std::size_t n_out = 1 + static_cast<std::size_t>(rng.next_u64() % 96);
        const double alpha = rng.next_unit();
        const double beta = std::sqrt(1.0 - alpha * alpha);
        BlockSpec spec = fc_c(n_in, n_mid, n_out, alpha);
        spec.beta = beta;
        const double s1 = default_sigma1(spec);
        const double s2 = default_sigma2(spec);
        const double ss = default_sigma_skip(spec);
        const double factor =
            static_cast<double>(n_out) / 2.0 *
            (alpha * alpha * s2 * s2 * s1 * s1 * static_cast<double>(n_mid) / 2.0 +
             beta * beta * ss * ss);
        CHECK(factor == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("scheme names round-trip and unknown names are rejected") {
    for (SchemeKind k : {SchemeKind::HeNormal, SchemeKind::HeUniform, SchemeKind::BalancedNormal,
                         SchemeKind::SkipInit, SchemeKind::FixupLike, SchemeKind::RisottoB,
                         SchemeKind::RisottoC})
        CHECK(scheme_from_name(scheme_name(k)) == k);
    CHECK_THROWS_AS(scheme_from_name("risotto-x"), ConfigError);
}
