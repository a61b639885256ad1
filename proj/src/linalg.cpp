#include "resinit/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace resinit {

namespace {

void require(bool ok, const char* msg) {
    if (!ok) throw DimensionError(msg);
}

} // namespace

// ---------------------------------------------------------------------------
// Matrix
// ---------------------------------------------------------------------------

bool Matrix::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n, 0.0);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix transpose(const Matrix& m) {
    Matrix t(m.cols, m.rows);
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < m.cols; ++j) t(j, i) = m(i, j);
    return t;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    require(a.cols == b.rows, "matmul: inner dimensions mismatch");
    Matrix c(a.rows, b.cols, 0.0);
    for (std::size_t i = 0; i < a.rows; ++i) {
        double* ci = c.data.data() + i * c.cols;
        const double* ai = a.data.data() + i * a.cols;
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = ai[k];
            if (aik == 0.0) continue;
            const double* bk = b.data.data() + k * b.cols;
            for (std::size_t j = 0; j < b.cols; ++j) ci[j] += aik * bk[j];
        }
    }
    return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    require(a.cols == b.cols, "matmul_nt: inner dimensions mismatch");
    Matrix c(a.rows, b.rows);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < b.rows; ++j) c(i, j) = dot(a.row(i), b.row(j));
    return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    require(a.rows == b.rows, "matmul_tn: inner dimensions mismatch");
    Matrix c(a.cols, b.cols, 0.0);
    for (std::size_t k = 0; k < a.rows; ++k) {
        const double* ak = a.data.data() + k * a.cols;
        const double* bk = b.data.data() + k * b.cols;
        for (std::size_t i = 0; i < a.cols; ++i) {
            const double aki = ak[i];
            if (aki == 0.0) continue;
            double* ci = c.data.data() + i * c.cols;
            for (std::size_t j = 0; j < b.cols; ++j) ci[j] += aki * bk[j];
        }
    }
    return c;
}

Matrix add(const Matrix& a, const Matrix& b) {
    require(a.rows == b.rows && a.cols == b.cols, "add: shape mismatch");
    Matrix c = a;
    for (std::size_t i = 0; i < c.data.size(); ++i) c.data[i] += b.data[i];
    return c;
}

Matrix sub(const Matrix& a, const Matrix& b) {
    require(a.rows == b.rows && a.cols == b.cols, "sub: shape mismatch");
    Matrix c = a;
    for (std::size_t i = 0; i < c.data.size(); ++i) c.data[i] -= b.data[i];
    return c;
}

Matrix scale(const Matrix& a, double s) {
    Matrix c = a;
    for (double& v : c.data) v *= s;
    return c;
}

std::vector<double> matvec(const Matrix& m, std::span<const double> x) {
    require(m.cols == x.size(), "matvec: dimension mismatch");
    std::vector<double> y(m.rows, 0.0);
    for (std::size_t i = 0; i < m.rows; ++i) y[i] = dot(m.row(i), x);
    return y;
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm_sq(std::span<const double> x) { return dot(x, x); }

double max_abs_diff(const Matrix& a, const Matrix& b) {
    require(a.rows == b.rows && a.cols == b.cols, "max_abs_diff: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

// ---------------------------------------------------------------------------
// ConvKernel / FeatureMap
// ---------------------------------------------------------------------------

ConvKernel::ConvKernel(std::size_t out_ch, std::size_t in_ch, std::size_t kh, std::size_t kw)
    : out_channels(out_ch), in_channels(in_ch), k1(kh), k2(kw),
      data(out_ch * in_ch * kh * kw, 0.0) {
    if (out_ch == 0 || in_ch == 0) throw DimensionError("ConvKernel: zero channel count");
    if (kh == 0 || kw == 0 || kh % 2 == 0 || kw % 2 == 0)
        throw SpecError("ConvKernel: spatial dims must be odd and positive");
}

Matrix ConvKernel::center_matrix() const {
    Matrix h(out_channels, in_channels);
    const std::size_t cy = k1 / 2, cx = k2 / 2;
    for (std::size_t co = 0; co < out_channels; ++co)
        for (std::size_t ci = 0; ci < in_channels; ++ci) h(co, ci) = at(co, ci, cy, cx);
    return h;
}

FeatureMap conv2d_same(const ConvKernel& kernel, const FeatureMap& input) {
    if (kernel.in_channels != input.channels)
        throw DimensionError("conv2d_same: kernel in_channels != input channels");
    const std::size_t H = input.height, W = input.width;
    FeatureMap out(kernel.out_channels, H, W, 0.0);
    const long cy = static_cast<long>(kernel.k1 / 2);
    const long cx = static_cast<long>(kernel.k2 / 2);
    for (std::size_t co = 0; co < kernel.out_channels; ++co) {
        for (std::size_t ci = 0; ci < kernel.in_channels; ++ci) {
            for (std::size_t ky = 0; ky < kernel.k1; ++ky) {
                for (std::size_t kx = 0; kx < kernel.k2; ++kx) {
                    const double w = kernel.at(co, ci, ky, kx);
                    if (w == 0.0) continue; // delta kernels hit only the center
                    const long dy = static_cast<long>(ky) - cy;
                    const long dx = static_cast<long>(kx) - cx;
                    for (std::size_t y = 0; y < H; ++y) {
                        const long sy = static_cast<long>(y) + dy;
                        if (sy < 0 || sy >= static_cast<long>(H)) continue;
                        for (std::size_t x = 0; x < W; ++x) {
                            const long sx = static_cast<long>(x) + dx;
                            if (sx < 0 || sx >= static_cast<long>(W)) continue;
                            out.at(co, y, x) +=
                                w * input.at(ci, static_cast<std::size_t>(sy),
                                             static_cast<std::size_t>(sx));
                        }
                    }
                }
            }
        }
    }
    return out;
}

Matrix conv_operator(const ConvKernel& kernel, std::size_t height, std::size_t width) {
    const std::size_t in_dim = kernel.in_channels * height * width;
    const std::size_t out_dim = kernel.out_channels * height * width;
    Matrix op(out_dim, in_dim, 0.0);
    const long cy = static_cast<long>(kernel.k1 / 2);
    const long cx = static_cast<long>(kernel.k2 / 2);
    for (std::size_t co = 0; co < kernel.out_channels; ++co)
        for (std::size_t y = 0; y < height; ++y)
            for (std::size_t x = 0; x < width; ++x) {
                const std::size_t row = (co * height + y) * width + x;
                for (std::size_t ci = 0; ci < kernel.in_channels; ++ci)
                    for (std::size_t ky = 0; ky < kernel.k1; ++ky)
                        for (std::size_t kx = 0; kx < kernel.k2; ++kx) {
                            const long sy = static_cast<long>(y) + static_cast<long>(ky) - cy;
                            const long sx = static_cast<long>(x) + static_cast<long>(kx) - cx;
                            if (sy < 0 || sy >= static_cast<long>(height)) continue;
                            if (sx < 0 || sx >= static_cast<long>(width)) continue;
                            const std::size_t col =
                                (ci * height + static_cast<std::size_t>(sy)) * width +
                                static_cast<std::size_t>(sx);
                            op(row, col) += kernel.at(co, ci, ky, kx);
                        }
            }
    return op;
}

// ---------------------------------------------------------------------------
// RngStream — SplitMix64 over a key derived from (master_seed, stream_id).
// ---------------------------------------------------------------------------

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

std::uint64_t derive_key(std::uint64_t master_seed, std::uint64_t stream_id) {
    std::uint64_t k = mix64(master_seed + kGolden);
    k = mix64(k ^ (stream_id + 0xD1B54A32D192ED03ull));
    return k;
}

} // namespace

RngStream::RngStream(std::uint64_t master_seed, std::uint64_t stream_id)
    : master_seed_(master_seed), stream_id_(stream_id),
      key_(derive_key(master_seed, stream_id)) {}

RngStream RngStream::substream(std::uint64_t id) const {
    // Children get a hashed id so nested derivations do not collide with the
    // small integer ids callers hand out at the top level.
    const std::uint64_t child = mix64(stream_id_ + kGolden * (id + 1) + 0x2545F4914F6CDD1Dull);
    return RngStream(master_seed_, child);
}

std::uint64_t RngStream::next_u64() {
    ++counter_;
    return mix64(key_ + counter_ * kGolden);
}

double RngStream::next_unit() {
    // 53-bit mantissa, offset by half an ulp so the result is in (0,1).
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double RngStream::next_uniform(double lo, double hi) {
    return lo + (hi - lo) * next_unit();
}

double RngStream::next_gaussian() {
    const double u1 = next_unit();
    const double u2 = next_unit();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

void RngStream::fill_gaussian(std::span<double> out, double sigma) {
    for (double& v : out) v = sigma * next_gaussian();
}

void RngStream::fill_uniform(std::span<double> out, double lo, double hi) {
    for (double& v : out) v = next_uniform(lo, hi);
}

// ---------------------------------------------------------------------------
// Haar-orthogonal sampling: Householder QR of a Gaussian matrix plus the
// R-diagonal sign correction.
// ---------------------------------------------------------------------------

namespace {

// Thin QR of a (m x k) matrix with m >= k. On return q has orthonormal
// columns and r_diag holds the diagonal of R.
void householder_thin_qr(Matrix& a, Matrix& q, std::vector<double>& r_diag) {
    const std::size_t m = a.rows, k = a.cols;
    std::vector<std::vector<double>> vs(k);
    std::vector<double> taus(k, 0.0);

    for (std::size_t j = 0; j < k; ++j) {
        double norm_x = 0.0;
        for (std::size_t i = j; i < m; ++i) norm_x += a(i, j) * a(i, j);
        norm_x = std::sqrt(norm_x);

        std::vector<double> v(m - j, 0.0);
        double tau = 0.0;
        if (norm_x > 0.0) {
            const double alpha = a(j, j);
            const double sign = (alpha >= 0.0) ? 1.0 : -1.0;
            const double v0 = alpha + sign * norm_x;
            v[0] = 1.0;
            for (std::size_t i = j + 1; i < m; ++i) v[i - j] = a(i, j) / v0;
            double vtv = 0.0;
            for (double vi : v) vtv += vi * vi;
            tau = 2.0 / vtv;

            // Apply the reflector to the remaining columns of a.
            for (std::size_t c = j; c < k; ++c) {
                double s = 0.0;
                for (std::size_t i = j; i < m; ++i) s += v[i - j] * a(i, c);
                s *= tau;
                for (std::size_t i = j; i < m; ++i) a(i, c) -= s * v[i - j];
            }
        }
        vs[j] = std::move(v);
        taus[j] = tau;
    }

    r_diag.resize(k);
    for (std::size_t j = 0; j < k; ++j) r_diag[j] = a(j, j);

    // Accumulate Q = H_0 ... H_{k-1} applied to the first k columns of I.
    q = Matrix(m, k, 0.0);
    for (std::size_t j = 0; j < k; ++j) q(j, j) = 1.0;
    for (std::size_t j = k; j-- > 0;) {
        if (taus[j] == 0.0) continue;
        const auto& v = vs[j];
        for (std::size_t c = 0; c < k; ++c) {
            double s = 0.0;
            for (std::size_t i = j; i < m; ++i) s += v[i - j] * q(i, c);
            s *= taus[j];
            for (std::size_t i = j; i < m; ++i) q(i, c) -= s * v[i - j];
        }
    }
}

} // namespace

Matrix haar_orthogonal(std::size_t n_rows, std::size_t n_cols, RngStream& rng) {
    if (n_rows == 0 || n_cols == 0)
        throw DimensionError("haar_orthogonal: zero dimension");

    const bool wide = n_rows < n_cols;
    const std::size_t m = std::max(n_rows, n_cols);
    const std::size_t k = std::min(n_rows, n_cols);

    Matrix g(m, k);
    rng.fill_gaussian(g.data, 1.0);

    Matrix q;
    std::vector<double> r_diag;
    householder_thin_qr(g, q, r_diag);

    // Sign correction makes the distribution Haar; zero diagonal maps to +1.
    for (std::size_t j = 0; j < k; ++j) {
        if (r_diag[j] < 0.0)
            for (std::size_t i = 0; i < m; ++i) q(i, j) = -q(i, j);
    }

    return wide ? transpose(q) : q;
}

// ---------------------------------------------------------------------------
// Singular values by one-sided Jacobi on the columns.
// ---------------------------------------------------------------------------

std::vector<double> svd_values(const Matrix& m) {
    if (!m.all_finite()) throw NumericError("svd_values: non-finite input");
    if (m.empty()) return {};

    Matrix a = (m.rows >= m.cols) ? m : transpose(m);
    const std::size_t n = a.cols, rows = a.rows;

    auto col_dot = [&](std::size_t i, std::size_t j) {
        double s = 0.0;
        for (std::size_t r = 0; r < rows; ++r) s += a(r, i) * a(r, j);
        return s;
    };

    constexpr double tol = 1e-15;
    constexpr int max_sweeps = 60;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        bool rotated = false;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double app = col_dot(p, p);
                const double aqq = col_dot(q, q);
                const double apq = col_dot(p, q);
                if (std::abs(apq) <= tol * std::sqrt(app * aqq)) continue;
                rotated = true;
                const double zeta = (aqq - app) / (2.0 * apq);
                const double t = ((zeta >= 0.0) ? 1.0 : -1.0) /
                                 (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double cs = 1.0 / std::sqrt(1.0 + t * t);
                const double sn = cs * t;
                for (std::size_t r = 0; r < rows; ++r) {
                    const double vp = a(r, p), vq = a(r, q);
                    a(r, p) = cs * vp - sn * vq;
                    a(r, q) = sn * vp + cs * vq;
                }
            }
        }
        if (!rotated) break;
    }

    std::vector<double> sv(n);
    for (std::size_t j = 0; j < n; ++j) sv[j] = std::sqrt(col_dot(j, j));
    std::sort(sv.begin(), sv.end(), std::greater<>());
    return sv;
}

// ---------------------------------------------------------------------------
// ReLU
// ---------------------------------------------------------------------------

std::vector<double> relu(std::span<const double> x) {
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
    return y;
}

void relu_inplace(std::span<double> x) {
    for (double& v : x)
        if (v < 0.0) v = 0.0;
}

FeatureMap relu(const FeatureMap& x) {
    FeatureMap y = x;
    relu_inplace(y.data);
    return y;
}

} // namespace resinit
