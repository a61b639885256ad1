#include "resinit/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>

namespace resinit {

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

void Dataset::validate() const {
    if (features.rows != labels.size())
        throw FormatError("Dataset: feature/label count mismatch");
    if (n_classes < 2) throw FormatError("Dataset: need at least 2 classes");
    for (int y : labels)
        if (y < 0 || y >= n_classes) throw FormatError("Dataset: label out of range");
    if (!features.all_finite()) throw FormatError("Dataset: non-finite feature");
}

Dataset synth_blobs(int n_classes, std::size_t dim, std::size_t n_per_class, double spread,
                    RngStream rng) {
    if (n_classes < 2) throw SpecError("synth_blobs: need at least 2 classes");
    if (dim < static_cast<std::size_t>(n_classes))
        throw SpecError("synth_blobs: dim must be >= n_classes");
    if (spread < 0.0) throw SpecError("synth_blobs: spread must be nonnegative");

    // Means at scale*e_k: pairwise distance scale*sqrt(2) >= 4*spread.
    const double mean_scale = 1.0 + 2.0 * std::numbers::sqrt2 * spread;

    Dataset d;
    d.n_classes = n_classes;
    const std::size_t n = static_cast<std::size_t>(n_classes) * n_per_class;
    d.features = Matrix(n, dim);
    d.labels.resize(n);
    std::size_t row = 0;
    for (int k = 0; k < n_classes; ++k) {
        for (std::size_t s = 0; s < n_per_class; ++s, ++row) {
            auto x = d.features.row(row);
            for (double& v : x) v = spread * rng.next_gaussian();
            x[static_cast<std::size_t>(k)] += mean_scale;
            const double nrm = std::sqrt(norm_sq(x));
            if (nrm > 0.0)
                for (double& v : x) v /= nrm;
            d.labels[row] = k;
        }
    }
    return d;
}

Dataset cifar10_load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cifar10_load: cannot open " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    constexpr std::size_t record = 1 + 3072;
    if (bytes.empty() || bytes.size() % record != 0)
        throw FormatError("cifar10_load: file size is not a multiple of 3073");

    const std::size_t n = bytes.size() / record;
    Dataset d;
    d.n_classes = 10;
    d.features = Matrix(n, 3072);
    d.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const unsigned char* rec = bytes.data() + i * record;
        if (rec[0] > 9) throw FormatError("cifar10_load: label byte out of range");
        d.labels[i] = rec[0];
        auto row = d.features.row(i);
        for (std::size_t j = 0; j < 3072; ++j)
            row[j] = static_cast<double>(rec[1 + j]) / 255.0;
    }
    return d;
}

Dataset dataset_head(const Dataset& d, std::size_t n_per_class) {
    Dataset out;
    out.n_classes = d.n_classes;
    std::vector<std::size_t> kept;
    std::vector<std::size_t> count(static_cast<std::size_t>(d.n_classes), 0);
    for (std::size_t i = 0; i < d.size(); ++i) {
        auto& c = count[static_cast<std::size_t>(d.labels[i])];
        if (c < n_per_class) {
            ++c;
            kept.push_back(i);
        }
    }
    out.features = Matrix(kept.size(), d.features.cols);
    out.labels.resize(kept.size());
    for (std::size_t r = 0; r < kept.size(); ++r) {
        auto src = d.features.row(kept[r]);
        std::copy(src.begin(), src.end(), out.features.row(r).begin());
        out.labels[r] = d.labels[kept[r]];
    }
    return out;
}

// ---------------------------------------------------------------------------
// TrainConfig
// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
    // zero is allowed so a frozen run can serve as a baseline
    if (learning_rate < 0.0) throw SpecError("TrainConfig: learning_rate must be >= 0");
    if (momentum < 0.0 || momentum >= 1.0)
        throw SpecError("TrainConfig: momentum must be in [0, 1)");
    if (weight_decay < 0.0) throw SpecError("TrainConfig: weight_decay must be >= 0");
    if (batch_size == 0) throw SpecError("TrainConfig: batch_size must be > 0");
    if (epochs == 0 && max_steps == 0)
        throw SpecError("TrainConfig: nothing to run (epochs = max_steps = 0)");
}

double cosine_multiplier(std::size_t t, std::size_t total) {
    if (total == 0) return 1.0;
    const double frac = static_cast<double>(t) / static_cast<double>(total);
    return 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

// ---------------------------------------------------------------------------
// FcNet
// ---------------------------------------------------------------------------

namespace {

Matrix fc_matrix_from_kernel(const ConvKernel& k) {
    if (k.k1 != 1 || k.k2 != 1)
        throw SpecError("trainer requires 1x1 kernels (fully-connected blocks)");
    return k.center_matrix();
}

std::vector<double> colsum(const Matrix& m) {
    std::vector<double> s(m.cols, 0.0);
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < m.cols; ++j) s[j] += m(i, j);
    return s;
}

void add_row_bias(Matrix& m, std::span<const double> b) {
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < m.cols; ++j) m(i, j) += b[j];
}

} // namespace

FcNet::FcNet(const NetworkSpec& spec, const NetworkWeights& weights) {
    if (!spec.is_fully_connected())
        throw SpecError("FcNet: spec must be fully connected (k = 1, spatial 1x1)");
    w0_ = fc_matrix_from_kernel(weights.w0);
    for (std::size_t l = 0; l < weights.blocks.size(); ++l) {
        const BlockWeights& bw = weights.blocks[l];
        FcBlock b;
        b.kind = spec.blocks[l].kind;
        b.w1 = fc_matrix_from_kernel(bw.w1);
        b.w2 = fc_matrix_from_kernel(bw.w2);
        if (!bw.skip_is_identity()) b.w_skip = fc_matrix_from_kernel(*bw.w_skip);
        b.b1 = bw.b1;
        b.b2 = bw.b2;
        b.b_skip = bw.b_skip.empty() ? std::vector<double>(b.w2.rows, 0.0) : bw.b_skip;
        if (bw.skip_is_identity()) b.b_skip.clear();
        b.alpha = bw.alpha;
        b.beta = bw.beta;
        blocks_.push_back(std::move(b));
    }
    w_out_ = weights.w_out;
    index_params();
}

FcNet::FcNet(const FcNet& other)
    : w0_(other.w0_), blocks_(other.blocks_), w_out_(other.w_out_) {
    index_params();
}

FcNet& FcNet::operator=(const FcNet& other) {
    if (this != &other) {
        w0_ = other.w0_;
        blocks_ = other.blocks_;
        w_out_ = other.w_out_;
        index_params();
    }
    return *this;
}

FcNet::FcNet(FcNet&& other) noexcept
    : w0_(std::move(other.w0_)), blocks_(std::move(other.blocks_)),
      w_out_(std::move(other.w_out_)) {
    index_params();
    other.params_.clear();
}

FcNet& FcNet::operator=(FcNet&& other) noexcept {
    if (this != &other) {
        w0_ = std::move(other.w0_);
        blocks_ = std::move(other.blocks_);
        w_out_ = std::move(other.w_out_);
        index_params();
        other.params_.clear();
    }
    return *this;
}

void FcNet::index_params() {
    params_.clear();
    auto add_matrix = [&](Matrix& m) {
        for (double& v : m.data) params_.push_back({&v, true, false});
    };
    auto add_bias = [&](std::vector<double>& b) {
        for (double& v : b) params_.push_back({&v, false, false});
    };
    add_matrix(w0_);
    for (auto& b : blocks_) {
        add_matrix(b.w1);
        add_bias(b.b1);
        add_matrix(b.w2);
        add_bias(b.b2);
        if (!b.w_skip.empty()) {
            add_matrix(b.w_skip);
            add_bias(b.b_skip);
        }
        params_.push_back({&b.alpha, false, true});
    }
    add_matrix(w_out_);
}

std::size_t FcNet::param_count() const { return params_.size(); }
double FcNet::get_param(std::size_t i) const { return *params_[i].value; }
void FcNet::set_param(std::size_t i, double v) { *params_[i].value = v; }
bool FcNet::param_is_weight(std::size_t i) const { return params_[i].is_weight; }
bool FcNet::param_is_alpha(std::size_t i) const { return params_[i].is_alpha; }

std::vector<double> FcNet::alphas() const {
    std::vector<double> a;
    a.reserve(blocks_.size());
    for (const auto& b : blocks_) a.push_back(b.alpha);
    return a;
}

namespace {

struct ForwardCache {
    std::vector<Matrix> xs;     // activations entering each block; xs[0] = relu(z0)
    Matrix z0;                  // first-layer preactivation
    std::vector<Matrix> a1;     // per block: W1 x + b1
    std::vector<Matrix> p;      // relu(a1)
    std::vector<Matrix> f;      // residual branch before alpha
    std::vector<Matrix> z;      // block preactivation
    Matrix logits;

    // digest of every relu mask in the pass
    std::uint64_t mask_hash() const {
        std::uint64_t h = 0xcbf29ce484222325ull;
        auto feed = [&h](const Matrix& m) {
            for (double v : m.data) {
                h ^= (v > 0.0) ? 0x100000001b3ull : 0x9e3779b97f4a7c15ull;
                h *= 0x100000001b3ull;
            }
        };
        feed(z0);
        for (const auto& m : a1) feed(m);
        for (const auto& m : z) feed(m);
        return h;
    }
};

Matrix relu_mat(const Matrix& m) {
    Matrix r = m;
    relu_inplace(r.data);
    return r;
}

// mean cross-entropy and (softmax - onehot)/B in one pass
double softmax_ce(const Matrix& logits, std::span<const int> labels, Matrix* dlogits) {
    const std::size_t bsz = logits.rows, k = logits.cols;
    if (dlogits) *dlogits = Matrix(bsz, k);
    double total = 0.0;
    for (std::size_t i = 0; i < bsz; ++i) {
        const auto row = logits.row(i);
        double mx = row[0];
        for (double v : row) mx = std::max(mx, v);
        double sum = 0.0;
        for (double v : row) sum += std::exp(v - mx);
        const double lse = mx + std::log(sum);
        total += lse - row[static_cast<std::size_t>(labels[i])];
        if (dlogits) {
            for (std::size_t j = 0; j < k; ++j)
                (*dlogits)(i, j) = std::exp(row[j] - lse) / static_cast<double>(bsz);
            (*dlogits)(i, static_cast<std::size_t>(labels[i])) -= 1.0 / static_cast<double>(bsz);
        }
    }
    return total / static_cast<double>(bsz);
}

} // namespace

static ForwardCache fc_forward(const Matrix& w0, const std::vector<FcBlock>& blocks,
                               const Matrix& w_out, const Matrix& x) {
    ForwardCache c;
    c.z0 = matmul_nt(x, w0);
    c.xs.push_back(relu_mat(c.z0));
    for (const auto& b : blocks) {
        const Matrix& xin = c.xs.back();
        Matrix a1 = matmul_nt(xin, b.w1);
        add_row_bias(a1, b.b1);
        Matrix p = relu_mat(a1);
        Matrix f = matmul_nt(p, b.w2);
        add_row_bias(f, b.b2);
        Matrix z(f.rows, f.cols);
        if (b.w_skip.empty()) {
            for (std::size_t i = 0; i < z.data.size(); ++i)
                z.data[i] = b.alpha * f.data[i] + b.beta * xin.data[i];
        } else {
            Matrix h = matmul_nt(xin, b.w_skip);
            add_row_bias(h, b.b_skip);
            for (std::size_t i = 0; i < z.data.size(); ++i)
                z.data[i] = b.alpha * f.data[i] + b.beta * h.data[i];
        }
        c.a1.push_back(std::move(a1));
        c.p.push_back(std::move(p));
        c.f.push_back(std::move(f));
        c.xs.push_back(relu_mat(z));
        c.z.push_back(std::move(z));
    }
    c.logits = matmul_nt(c.xs.back(), w_out);
    return c;
}

double FcNet::loss(const Matrix& x, std::span<const int> labels,
                   std::uint64_t* mask_hash) const {
    ForwardCache c = fc_forward(w0_, blocks_, w_out_, x);
    if (mask_hash) *mask_hash = c.mask_hash();
    return softmax_ce(c.logits, labels, nullptr);
}

double FcNet::accuracy(const Matrix& x, std::span<const int> labels) const {
    ForwardCache c = fc_forward(w0_, blocks_, w_out_, x);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < c.logits.rows; ++i) {
        const auto row = c.logits.row(i);
        std::size_t best = 0;
        for (std::size_t j = 1; j < row.size(); ++j)
            if (row[j] > row[best]) best = j;
        if (best == static_cast<std::size_t>(labels[i])) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(c.logits.rows);
}

double FcNet::loss_and_gradient(const Matrix& x, std::span<const int> labels,
                                std::vector<double>& grad) const {
    ForwardCache c = fc_forward(w0_, blocks_, w_out_, x);
    Matrix dlogits;
    const double loss_val = softmax_ce(c.logits, labels, &dlogits);

    grad.assign(param_count(), 0.0);
    std::size_t cursor = 0;
    auto emit_matrix = [&](const Matrix& g) {
        std::copy(g.data.begin(), g.data.end(), grad.begin() + static_cast<long>(cursor));
        cursor += g.data.size();
    };
    auto emit_vector = [&](const std::vector<double>& g) {
        std::copy(g.begin(), g.end(), grad.begin() + static_cast<long>(cursor));
        cursor += g.size();
    };

    // Backward pass, collecting per-tensor gradients in parameter order.
    Matrix d_wout = matmul_tn(dlogits, c.xs.back());
    Matrix dx = matmul(dlogits, w_out_);

    struct BlockGrads {
        Matrix w1, w2, w_skip;
        std::vector<double> b1, b2, b_skip;
        double alpha = 0.0;
    };
    std::vector<BlockGrads> bg(blocks_.size());

    for (std::size_t l = blocks_.size(); l-- > 0;) {
        const FcBlock& b = blocks_[l];
        const Matrix& xin = c.xs[l];

        Matrix dz = dx; // dLoss/dz through the outer relu mask
        for (std::size_t i = 0; i < dz.data.size(); ++i)
            if (!(c.z[l].data[i] > 0.0)) dz.data[i] = 0.0;

        BlockGrads& g = bg[l];
        g.alpha = 0.0;
        for (std::size_t i = 0; i < dz.data.size(); ++i) g.alpha += dz.data[i] * c.f[l].data[i];

        Matrix df = dz;
        for (double& v : df.data) v *= b.alpha;
        g.b2 = colsum(df);
        g.w2 = matmul_tn(df, c.p[l]);
        Matrix dp = matmul(df, b.w2);
        for (std::size_t i = 0; i < dp.data.size(); ++i)
            if (!(c.a1[l].data[i] > 0.0)) dp.data[i] = 0.0;
        g.b1 = colsum(dp);
        g.w1 = matmul_tn(dp, xin);
        Matrix dxin = matmul(dp, b.w1);

        if (b.w_skip.empty()) {
            for (std::size_t i = 0; i < dxin.data.size(); ++i)
                dxin.data[i] += b.beta * dz.data[i];
        } else {
            Matrix dh = dz;
            for (double& v : dh.data) v *= b.beta;
            g.b_skip = colsum(dh);
            g.w_skip = matmul_tn(dh, xin);
            Matrix dskip = matmul(dh, b.w_skip);
            for (std::size_t i = 0; i < dxin.data.size(); ++i) dxin.data[i] += dskip.data[i];
        }
        dx = std::move(dxin);
    }

    // First layer.
    for (std::size_t i = 0; i < dx.data.size(); ++i)
        if (!(c.z0.data[i] > 0.0)) dx.data[i] = 0.0;
    Matrix d_w0 = matmul_tn(dx, x);

    emit_matrix(d_w0);
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
        emit_matrix(bg[l].w1);
        emit_vector(bg[l].b1);
        emit_matrix(bg[l].w2);
        emit_vector(bg[l].b2);
        if (!blocks_[l].w_skip.empty()) {
            emit_matrix(bg[l].w_skip);
            emit_vector(bg[l].b_skip);
        }
        grad[cursor++] = bg[l].alpha;
    }
    emit_matrix(d_wout);
    if (cursor != param_count())
        throw Error("loss_and_gradient: gradient layout mismatch");
    return loss_val;
}

// ---------------------------------------------------------------------------
// SGD
// ---------------------------------------------------------------------------

namespace {

struct Batcher {
    const Dataset& data;
    std::vector<std::size_t> order;

    explicit Batcher(const Dataset& d) : data(d), order(d.size()) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    }

    void shuffle(RngStream rng) {
        for (std::size_t i = order.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(rng.next_u64() % i);
            std::swap(order[i - 1], order[j]);
        }
    }

    void fill(std::size_t start, std::size_t count, Matrix& x, std::vector<int>& y) const {
        x = Matrix(count, data.features.cols);
        y.resize(count);
        for (std::size_t r = 0; r < count; ++r) {
            const std::size_t idx = order[start + r];
            auto src = data.features.row(idx);
            std::copy(src.begin(), src.end(), x.row(r).begin());
            y[r] = data.labels[idx];
        }
    }
};

constexpr double kDivergenceThreshold = 1e6;

} // namespace

TrainLog sgd_train(const NetworkSpec& spec, const InitScheme& scheme, const Dataset& train,
                   const TrainConfig& cfg, const Dataset* test) {
    cfg.validate();
    train.validate();
    spec.validate();
    if (!spec.is_fully_connected())
        throw SpecError("sgd_train: conv blocks are not trainable; use FC specs");
    if (spec.output_dim != static_cast<std::size_t>(train.n_classes))
        throw SpecError("sgd_train: output_dim must equal n_classes");
    if (spec.input_dim != train.features.cols)
        throw SpecError("sgd_train: input_dim must match feature dim");

    RngStream root(cfg.seed);
    NetworkWeights weights = build_network(spec, scheme, root.substream(0));
    FcNet net(spec, weights);
    return sgd_train_inplace(net, train, cfg, test);
}

TrainLog sgd_train_inplace(FcNet& net, const Dataset& train, const TrainConfig& cfg,
                           const Dataset* test) {
    cfg.validate();
    train.validate();
    RngStream root(cfg.seed);

    const std::size_t n = train.size();
    const std::size_t batches = (n + cfg.batch_size - 1) / cfg.batch_size;
    std::size_t total_steps = cfg.epochs * batches;
    if (cfg.max_steps > 0) total_steps = std::min(total_steps == 0 ? cfg.max_steps : total_steps,
                                                  cfg.max_steps);

    TrainLog log;
    std::vector<double> velocity(net.param_count(), 0.0);
    std::vector<double> grad;
    Batcher batcher(train);
    Matrix xb;
    std::vector<int> yb;

    std::size_t t = 0;
    bool stop = false;
    const std::size_t epoch_cap = cfg.epochs > 0 ? cfg.epochs : (cfg.max_steps / batches + 2);
    for (std::size_t epoch = 0; epoch < epoch_cap && !stop; ++epoch) {
        const auto epoch_start = std::chrono::steady_clock::now();
        batcher.shuffle(root.substream(1).substream(epoch));
        for (std::size_t bi = 0; bi < batches && !stop; ++bi) {
            const std::size_t start = bi * cfg.batch_size;
            const std::size_t count = std::min(cfg.batch_size, n - start);
            batcher.fill(start, count, xb, yb);

            const double loss_val = net.loss_and_gradient(xb, yb, grad);
            const double mult = cfg.schedule == LrSchedule::Cosine
                                    ? cosine_multiplier(t, total_steps)
                                    : 1.0;
            const double lr = cfg.learning_rate * mult;

            log.step_loss.push_back(loss_val);
            log.step_lr.push_back(lr);
            if (!std::isfinite(loss_val) || loss_val > kDivergenceThreshold) {
                log.diverged = true;
                stop = true;
                break;
            }

            for (std::size_t i = 0; i < grad.size(); ++i) {
                double g = grad[i];
                if (net.param_is_weight(i)) g += cfg.weight_decay * net.get_param(i);
                velocity[i] = cfg.momentum * velocity[i] + g;
                net.set_param(i, net.get_param(i) - lr * velocity[i]);
            }
            ++t;

            if (t >= total_steps) stop = true;
            if (!stop && cfg.target_loss > 0.0 && cfg.eval_every > 0 &&
                t % cfg.eval_every == 0) {
                if (net.loss(train.features, train.labels) <= cfg.target_loss) stop = true;
            }
        }

        const auto epoch_end = std::chrono::steady_clock::now();
        log.epoch_seconds.push_back(
            std::chrono::duration<double>(epoch_end - epoch_start).count());
        log.epoch_train_acc.push_back(net.accuracy(train.features, train.labels));
        if (test) log.epoch_test_acc.push_back(net.accuracy(test->features, test->labels));
        log.alpha_per_epoch.push_back(net.alphas());
    }

    log.steps_run = t;
    log.final_alphas = net.alphas();
    log.final_train_loss = net.loss(train.features, train.labels);
    log.final_train_acc = net.accuracy(train.features, train.labels);
    return log;
}

std::vector<AlphaSweepRow> alpha_sweep(const NetworkSpec& spec, const InitScheme& scheme,
                                       std::span<const double> alphas, const Dataset& data,
                                       const TrainConfig& cfg) {
    if (!scheme.is_looks_linear())
        throw SpecError("alpha_sweep: expects a risotto scheme");
    std::vector<AlphaSweepRow> rows;
    for (double a : alphas) {
        InitScheme s = scheme;
        s.alpha = a;
        NetworkSpec sp = spec;
        for (auto& b : sp.blocks) b.alpha = a;
        // SkipInit is the alpha = 0 end of the sweep for identity-skip blocks.
        if (a == 0.0 && scheme.kind == SchemeKind::RisottoB) s = InitScheme::skipinit();
        TrainLog log = sgd_train(sp, s, data, cfg);
        AlphaSweepRow row;
        row.alpha = a;
        row.final_loss = log.final_train_loss;
        row.final_acc = log.final_train_acc;
        row.diverged = log.diverged;
        rows.push_back(row);
    }
    return rows;
}

double gradient_check(const FcNet& net, const Matrix& x, std::span<const int> labels,
                      std::size_t n_probe, double step, RngStream rng,
                      std::size_t* n_ambiguous) {
    FcNet probe = net; // perturbed copy
    std::vector<double> grad;
    probe.loss_and_gradient(x, labels, grad);

    const std::size_t count = probe.param_count();
    double worst = 0.0;
    std::size_t valid = 0, ambiguous = 0, attempts = 0;
    const std::size_t max_attempts = 8 * n_probe;
    while (valid < n_probe && attempts < max_attempts) {
        ++attempts;
        const std::size_t i = static_cast<std::size_t>(rng.next_u64() % count);
        const double orig = probe.get_param(i);
        std::uint64_t mask_up = 0, mask_dn = 0;
        probe.set_param(i, orig + step);
        const double up = probe.loss(x, labels, &mask_up);
        probe.set_param(i, orig - step);
        const double dn = probe.loss(x, labels, &mask_dn);
        probe.set_param(i, orig);
        if (mask_up != mask_dn) {
            // the +-step interval crosses a relu kink; central differences do
            // not estimate the one-sided subgradient used by backprop
            ++ambiguous;
            continue;
        }
        ++valid;
        const double fd = (up - dn) / (2.0 * step);
        const double denom = std::max(std::abs(fd) + std::abs(grad[i]), 1e-8);
        worst = std::max(worst, std::abs(fd - grad[i]) / denom);
    }
    if (n_ambiguous) *n_ambiguous = ambiguous;
    return worst;
}

} // namespace resinit
