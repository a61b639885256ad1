#include "resinit/network.hpp"

#include <cmath>

namespace resinit {

// ---------------------------------------------------------------------------
// NetworkSpec
// ---------------------------------------------------------------------------

bool NetworkSpec::is_fully_connected() const {
    if (spatial_h != 1 || spatial_w != 1 || first_layer_k != 1) return false;
    for (const auto& b : blocks)
        if (!b.is_fully_connected()) return false;
    return true;
}

void NetworkSpec::validate() const {
    if (input_dim == 0 || first_layer_out == 0 || output_dim == 0)
        throw SpecError("NetworkSpec: zero dimension");
    if (spatial_h == 0 || spatial_w == 0)
        throw SpecError("NetworkSpec: zero spatial size");
    if (first_layer_k % 2 == 0)
        throw SpecError("NetworkSpec: first layer kernel must be odd");
    std::size_t prev = first_layer_out;
    for (std::size_t l = 0; l < blocks.size(); ++l) {
        blocks[l].validate();
        if (blocks[l].n_in != prev)
            throw SpecError("NetworkSpec: block widths do not chain");
        prev = blocks[l].n_out;
    }
}

NetworkSpec NetworkSpec::fc_uniform(std::size_t depth, std::size_t width,
                                    const InitScheme& scheme, std::size_t output_dim) {
    NetworkSpec net;
    // The looks-linear first layer [U0; -U0] doubles the input: a square
    // (hence isometric) U0 needs input_dim = width/2.
    if (scheme.is_looks_linear()) {
        if (width % 2 != 0) throw SpecError("fc_uniform: looks-linear width must be even");
        net.input_dim = width / 2;
    } else {
        net.input_dim = width;
    }
    net.first_layer_out = width;
    net.output_dim = output_dim;
    net.pooling = Pooling::Average;
    const BlockKind kind = scheme.block_kind();
    for (std::size_t l = 0; l < depth; ++l) {
        BlockSpec b = BlockSpec::fc(kind, width, width, width, scheme.alpha, scheme.beta);
        net.blocks.push_back(b);
    }
    return net;
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

namespace {

void add_bias(FeatureMap& z, std::span<const double> b) {
    if (b.empty()) return;
    if (b.size() != z.channels) throw DimensionError("bias length != channels");
    for (std::size_t c = 0; c < z.channels; ++c)
        for (std::size_t y = 0; y < z.height; ++y)
            for (std::size_t x = 0; x < z.width; ++x) z.at(c, y, x) += b[c];
}

} // namespace

FeatureMap block_preactivation(const BlockWeights& w, const BlockSpec& spec,
                               const FeatureMap& x) {
    if (x.channels != spec.n_in)
        throw DimensionError("block_forward: input channels != n_in");

    FeatureMap a1 = conv2d_same(w.w1, x);
    add_bias(a1, w.b1);
    relu_inplace(a1.data);

    FeatureMap f = conv2d_same(w.w2, a1);
    add_bias(f, w.b2);

    FeatureMap h;
    if (w.skip_is_identity()) {
        h = x;
    } else {
        h = conv2d_same(*w.w_skip, x);
        add_bias(h, w.b_skip);
    }
    if (h.channels != f.channels)
        throw DimensionError("block_forward: skip/residual channel mismatch");

    FeatureMap z(f.channels, f.height, f.width);
    for (std::size_t i = 0; i < z.data.size(); ++i)
        z.data[i] = w.alpha * f.data[i] + w.beta * h.data[i];
    return z;
}

FeatureMap block_forward(const BlockWeights& w, const BlockSpec& spec, const FeatureMap& x) {
    FeatureMap z = block_preactivation(w, spec, x);
    relu_inplace(z.data);
    return z;
}

Activations forward(const NetworkSpec& net, const NetworkWeights& weights,
                    const FeatureMap& x) {
    if (x.channels != net.input_dim || x.height != net.spatial_h || x.width != net.spatial_w)
        throw DimensionError("forward: input shape mismatch");

    Activations out;
    out.preacts.reserve(net.blocks.size() + 1);
    out.acts.reserve(net.blocks.size() + 1);

    FeatureMap z0 = conv2d_same(weights.w0, x);
    out.preacts.push_back(z0);
    out.acts.push_back(relu(z0));

    for (std::size_t l = 0; l < net.blocks.size(); ++l) {
        FeatureMap z = block_preactivation(weights.blocks[l], net.blocks[l], out.acts.back());
        out.acts.push_back(relu(z));
        out.preacts.push_back(std::move(z));
    }

    const FeatureMap& last = out.acts.back();
    if (net.pooling == Pooling::Average) {
        out.pooled.assign(last.channels, 0.0);
        const double inv = 1.0 / static_cast<double>(last.height * last.width);
        for (std::size_t c = 0; c < last.channels; ++c) {
            double s = 0.0;
            for (std::size_t y = 0; y < last.height; ++y)
                for (std::size_t xx = 0; xx < last.width; ++xx) s += last.at(c, y, xx);
            out.pooled[c] = s * inv;
        }
    } else {
        if (last.height != 1 || last.width != 1)
            throw SpecError("forward: pooling None requires 1x1 spatial output");
        out.pooled = last.data;
    }
    out.output = matvec(weights.w_out, out.pooled);
    return out;
}

// ---------------------------------------------------------------------------
// Signal split
// ---------------------------------------------------------------------------

SignalSplit signal_split(std::span<const double> x) {
    if (x.size() % 2 != 0) throw DimensionError("signal_split: odd width");
    const std::size_t h = x.size() / 2;
    SignalSplit s;
    s.plus.assign(x.begin(), x.begin() + h);
    s.minus.assign(x.begin() + h, x.end());
    s.u.resize(h);
    for (std::size_t i = 0; i < h; ++i) s.u[i] = s.plus[i] - s.minus[i];
    return s;
}

SignalSplit signal_split(const FeatureMap& x) {
    if (x.channels % 2 != 0) throw DimensionError("signal_split: odd channel count");
    // Channel-major layout: the first half of the buffer is the plus half.
    return signal_split(std::span<const double>(x.data));
}

bool is_complementary(const FeatureMap& x) {
    if (x.channels % 2 != 0) return false;
    const std::size_t half = x.data.size() / 2;
    for (std::size_t i = 0; i < half; ++i)
        if (x.data[i] != 0.0 && x.data[i + half] != 0.0) return false;
    return true;
}

// ---------------------------------------------------------------------------
// Jacobians
// ---------------------------------------------------------------------------

namespace {

// diag(z > 0) as a 0/1 mask vector; flags exact zeros (treated inactive).
std::vector<double> relu_mask(const FeatureMap& z, bool* zero_flag) {
    std::vector<double> d(z.data.size());
    for (std::size_t i = 0; i < z.data.size(); ++i) {
        d[i] = z.data[i] > 0.0 ? 1.0 : 0.0;
        if (z.data[i] == 0.0 && zero_flag) *zero_flag = true;
    }
    return d;
}

void scale_rows(Matrix& m, std::span<const double> d) {
    for (std::size_t i = 0; i < m.rows; ++i) {
        const double di = d[i];
        for (std::size_t j = 0; j < m.cols; ++j) m(i, j) *= di;
    }
}

} // namespace

Matrix block_jacobian(const BlockWeights& w, const BlockSpec& spec, const FeatureMap& x,
                      bool* zero_flag) {
    if (x.channels != spec.n_in)
        throw DimensionError("block_jacobian: input channels != n_in");
    const std::size_t H = x.height, W = x.width;

    FeatureMap a1 = conv2d_same(w.w1, x);
    add_bias(a1, w.b1);
    FeatureMap z = block_preactivation(w, spec, x);

    Matrix c1 = conv_operator(w.w1, H, W);
    Matrix c2 = conv_operator(w.w2, H, W);

    const std::vector<double> dp = relu_mask(a1, zero_flag);
    const std::vector<double> dy = relu_mask(z, zero_flag);

    scale_rows(c1, dp);             // D_p * C1
    Matrix j = matmul(c2, c1);      // C2 * D_p * C1
    for (double& v : j.data) v *= w.alpha;

    if (w.skip_is_identity()) {
        for (std::size_t i = 0; i < j.rows; ++i) j(i, i) += w.beta;
    } else {
        Matrix cs = conv_operator(*w.w_skip, H, W);
        for (std::size_t i = 0; i < j.data.size(); ++i) j.data[i] += w.beta * cs.data[i];
    }
    scale_rows(j, dy); // outer relu mask
    return j;
}

Matrix fd_block_jacobian(const BlockWeights& w, const BlockSpec& spec, const FeatureMap& x,
                         double step) {
    const std::size_t in_dim = x.data.size();
    FeatureMap probe = x;
    Matrix j;
    for (std::size_t i = 0; i < in_dim; ++i) {
        const double orig = probe.data[i];
        probe.data[i] = orig + step;
        FeatureMap up = block_forward(w, spec, probe);
        probe.data[i] = orig - step;
        FeatureMap dn = block_forward(w, spec, probe);
        probe.data[i] = orig;
        if (j.rows == 0) j = Matrix(up.data.size(), in_dim, 0.0);
        const double inv = 1.0 / (2.0 * step);
        for (std::size_t r = 0; r < up.data.size(); ++r)
            j(r, i) = (up.data[r] - dn.data[r]) * inv;
    }
    return j;
}

Matrix effective_jacobian(const BlockWeights& w, const BlockSpec& spec, const FeatureMap& x) {
    if (x.channels % 2 != 0 || spec.n_out % 2 != 0)
        throw DimensionError("effective_jacobian: widths must be even");
    if (!is_complementary(x))
        throw SpecError("effective_jacobian: input halves are not complementary");

    const std::size_t pos = x.height * x.width;
    const std::size_t in_half = (x.channels / 2) * pos;
    const std::size_t out_half = (spec.n_out / 2) * pos;

    Matrix raw = block_jacobian(w, spec, x);

    // u follows the sign of whichever half carries each coordinate.
    const std::size_t half_buf = x.data.size() / 2;
    Matrix j(out_half, in_half, 0.0);
    for (std::size_t cin = 0; cin < in_half; ++cin) {
        const double up = x.data[cin];            // plus-half value
        const double um = x.data[cin + half_buf]; // minus-half value
        double sign = 0.0;
        std::size_t col = cin;
        if (up > 0.0) {
            sign = 1.0;
        } else if (um > 0.0) {
            sign = -1.0;
            col = cin + in_half;
        } else {
            continue; // u = 0: no derivative information through this coordinate
        }
        for (std::size_t r = 0; r < out_half; ++r)
            j(r, cin) = sign * (raw(r, col) - raw(r + out_half, col));
    }
    return j;
}

Matrix expected_effective_map(const BlockWeights& w, std::size_t height, std::size_t width) {
    if (!w.record) throw SpecError("expected_effective_map: no recorded submatrices");
    const Matrix& m = w.record->m;
    const std::size_t pos = height * width;
    Matrix e(m.rows * pos, m.cols * pos, 0.0);
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < m.cols; ++j)
            for (std::size_t p = 0; p < pos; ++p) e(i * pos + p, j * pos + p) = m(i, j);
    return e;
}

JacobianReport make_jacobian_report(const BlockWeights& w, const BlockSpec& spec,
                                    const FeatureMap& x, bool with_effective) {
    JacobianReport rep;
    Matrix j = block_jacobian(w, spec, x, &rep.zero_preactivation);
    rep.raw_singular_values = svd_values(j);
    rep.analytic_vs_fd_gap = max_abs_diff(j, fd_block_jacobian(w, spec, x));
    if (with_effective && x.channels % 2 == 0 && spec.n_out % 2 == 0 && is_complementary(x)) {
        Matrix je = effective_jacobian(w, spec, x);
        rep.effective_singular_values = svd_values(je);
        if (w.record && !w.record->m.empty())
            rep.effective_residual = max_abs_diff(je, expected_effective_map(w, x.height, x.width));
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Network construction
// ---------------------------------------------------------------------------

NetworkWeights build_network(const NetworkSpec& net, const InitScheme& scheme, RngStream rng) {
    net.validate();
    NetworkWeights w;

    auto r0 = rng.substream(0);
    if (scheme.is_looks_linear()) {
        if (net.first_layer_out % 2 != 0)
            throw SpecError("build_network: looks-linear first layer needs even N1");
        Matrix u0 = haar_orthogonal(net.first_layer_out / 2, net.input_dim, r0);
        w.w0 = delta_embed(first_layer_looks_linear(u0), net.first_layer_k, net.first_layer_k);
        w.u0 = std::move(u0);
    } else {
        const double sigma0 = std::sqrt(
            2.0 / static_cast<double>(net.first_layer_out * net.first_layer_k * net.first_layer_k));
        w.w0 = ConvKernel(net.first_layer_out, net.input_dim, net.first_layer_k,
                          net.first_layer_k);
        r0.fill_gaussian(w.w0.data, sigma0);
    }

    w.blocks.reserve(net.blocks.size());
    for (std::size_t l = 0; l < net.blocks.size(); ++l)
        w.blocks.push_back(init_block(net.blocks[l], scheme, rng.substream(l + 1)));

    const std::size_t fan_in = net.blocks.empty() ? net.first_layer_out
                                                  : net.blocks.back().n_out;
    auto r_out = rng.substream(net.blocks.size() + 1);
    w.w_out = Matrix(net.output_dim, fan_in);
    r_out.fill_gaussian(w.w_out.data, std::sqrt(2.0 / static_cast<double>(fan_in)));
    return w;
}

} // namespace resinit
