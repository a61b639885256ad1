#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "resinit/errors.hpp"

namespace resinit {

// ---------------------------------------------------------------------------
// Dense row-major matrix of doubles.
// ---------------------------------------------------------------------------

struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data; // row-major, rows * cols entries

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
    std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }

    bool empty() const { return rows == 0 || cols == 0; }
    bool all_finite() const;

    static Matrix identity(std::size_t n);
};

Matrix transpose(const Matrix& m);
Matrix matmul(const Matrix& a, const Matrix& b);    // a * b
Matrix matmul_nt(const Matrix& a, const Matrix& b); // a * b^T
Matrix matmul_tn(const Matrix& a, const Matrix& b); // a^T * b
Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double s);
std::vector<double> matvec(const Matrix& m, std::span<const double> x);

double dot(std::span<const double> a, std::span<const double> b);
double norm_sq(std::span<const double> x);
double max_abs_diff(const Matrix& a, const Matrix& b);

// ---------------------------------------------------------------------------
// 4-D convolution kernel, [out_ch][in_ch][k1][k2] row-major. The spatial
// dimensions must be odd so a unique center tap exists.
// ---------------------------------------------------------------------------

struct ConvKernel {
    std::size_t out_channels = 0;
    std::size_t in_channels = 0;
    std::size_t k1 = 0;
    std::size_t k2 = 0;
    std::vector<double> data;

    ConvKernel() = default;
    ConvKernel(std::size_t out_ch, std::size_t in_ch, std::size_t kh, std::size_t kw);

    double& at(std::size_t co, std::size_t ci, std::size_t ky, std::size_t kx) {
        return data[((co * in_channels + ci) * k1 + ky) * k2 + kx];
    }
    double at(std::size_t co, std::size_t ci, std::size_t ky, std::size_t kx) const {
        return data[((co * in_channels + ci) * k1 + ky) * k2 + kx];
    }

    // Channel matrix sitting at the spatial center tap (floor(k/2), floor(k/2)).
    Matrix center_matrix() const;
};

// Channels-first feature map, [c][y][x] row-major. Fully-connected states use
// height = width = 1.
struct FeatureMap {
    std::size_t channels = 0;
    std::size_t height = 1;
    std::size_t width = 1;
    std::vector<double> data;

    FeatureMap() = default;
    explicit FeatureMap(std::vector<double> vec)
        : channels(vec.size()), height(1), width(1), data(std::move(vec)) {}
    FeatureMap(std::size_t c, std::size_t h, std::size_t w, double fill = 0.0)
        : channels(c), height(h), width(w), data(c * h * w, fill) {}

    double& at(std::size_t c, std::size_t y, std::size_t x) {
        return data[(c * height + y) * width + x];
    }
    double at(std::size_t c, std::size_t y, std::size_t x) const {
        return data[(c * height + y) * width + x];
    }
    std::size_t size() const { return data.size(); }
};

// Cross-correlation with zero "same" padding; output has the kernel's
// out_channels and the input's spatial size.
FeatureMap conv2d_same(const ConvKernel& kernel, const FeatureMap& input);

// Linear operator of conv2d_same as a dense (out_ch*H*W) x (in_ch*H*W) matrix,
// flattened in FeatureMap order. Intended for small verification problems.
Matrix conv_operator(const ConvKernel& kernel, std::size_t height, std::size_t width);

// ---------------------------------------------------------------------------
// Splittable counter-based random stream. The output sequence is a pure
// function of (master_seed, stream_id, counter), so any draw can be replayed
// and substreams can be handed to workers without coordination.
// ---------------------------------------------------------------------------

class RngStream {
public:
    RngStream() : RngStream(0, 0) {}
    explicit RngStream(std::uint64_t master_seed, std::uint64_t stream_id = 0);

    // Child stream with an id derived from this stream's id. Children of
    // distinct parents or distinct ids are statistically independent.
    RngStream substream(std::uint64_t id) const;

    std::uint64_t master_seed() const { return master_seed_; }
    std::uint64_t stream_id() const { return stream_id_; }
    std::uint64_t counter() const { return counter_; }

    std::uint64_t next_u64();
    double next_unit();              // uniform on (0,1), never exactly 0 or 1
    double next_uniform(double lo, double hi);
    double next_gaussian();          // N(0,1), consumes exactly two uniforms

    void fill_gaussian(std::span<double> out, double sigma);
    void fill_uniform(std::span<double> out, double lo, double hi);

private:
    std::uint64_t master_seed_ = 0;
    std::uint64_t stream_id_ = 0;
    std::uint64_t counter_ = 0;
    std::uint64_t key_ = 0;
};

// ---------------------------------------------------------------------------
// Numeric kernels.
// ---------------------------------------------------------------------------

// Haar-distributed matrix with orthonormal rows (n_rows <= n_cols) or
// orthonormal columns (n_rows > n_cols): QR of an i.i.d. standard Gaussian
// matrix with the R-diagonal sign correction (zero diagonal maps to +1).
Matrix haar_orthogonal(std::size_t n_rows, std::size_t n_cols, RngStream& rng);

// Singular values in descending order, length min(rows, cols). One-sided
// Jacobi; accurate to ~1e-14 relative for the sizes used here.
std::vector<double> svd_values(const Matrix& m);

std::vector<double> relu(std::span<const double> x);
void relu_inplace(std::span<double> x);
FeatureMap relu(const FeatureMap& x);

} // namespace resinit
