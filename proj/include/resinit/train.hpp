#pragma once

#include <string>
#include <vector>

#include "resinit/network.hpp"

namespace resinit {

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

struct Dataset {
    Matrix features; // n x d
    std::vector<int> labels;
    int n_classes = 0;

    std::size_t size() const { return features.rows; }
    void validate() const;
};

// Gaussian clusters around scaled basis-vector means (pairwise mean distance
// >= 4*spread), each sample normalized to unit norm. Requires dim >= n_classes.
Dataset synth_blobs(int n_classes, std::size_t dim, std::size_t n_per_class, double spread,
                    RngStream rng);

// CIFAR-10 binary batch: records of 1 label byte + 3072 pixel bytes
// (1024 R, 1024 G, 1024 B, row-major 32x32); pixels scaled to [0,1].
Dataset cifar10_load(const std::string& path);

// Keeps at most n_per_class samples of each class (in file order).
Dataset dataset_head(const Dataset& d, std::size_t n_per_class);

// ---------------------------------------------------------------------------
// Training configuration and log
// ---------------------------------------------------------------------------

enum class LrSchedule { Constant, Cosine };

struct TrainConfig {
    double learning_rate = 0.1;
    double momentum = 0.9;
    double weight_decay = 0.0005;
    LrSchedule schedule = LrSchedule::Cosine;
    std::size_t epochs = 10;
    std::size_t batch_size = 256;
    std::size_t max_steps = 0;   // 0: run all epochs
    double target_loss = 0.0;    // > 0: stop once full-train loss reaches it
    std::size_t eval_every = 50; // steps between full-train loss checks
    std::uint64_t seed = 1;

    void validate() const;
};

// (1 + cos(pi * t / total)) / 2: 1 at t = 0, 0 at t = total.
double cosine_multiplier(std::size_t t, std::size_t total);

struct TrainLog {
    std::vector<double> step_loss;
    std::vector<double> step_lr;
    std::vector<double> epoch_train_acc;
    std::vector<double> epoch_test_acc; // empty if no test set given
    std::vector<double> epoch_seconds;
    std::vector<std::vector<double>> alpha_per_epoch;
    std::vector<double> final_alphas;
    double final_train_loss = 0.0;
    double final_train_acc = 0.0;
    bool diverged = false;
    std::size_t steps_run = 0;
};

// ---------------------------------------------------------------------------
// Fully-connected residual net with explicit parameters, used by the trainer
// and by gradient verification. Built from initialized network weights
// (k = 1, spatial 1x1 only).
// ---------------------------------------------------------------------------

struct FcBlock {
    BlockKind kind = BlockKind::TypeC;
    Matrix w1, w2;
    Matrix w_skip; // empty for identity skip
    std::vector<double> b1, b2, b_skip;
    double alpha = 1.0;
    double beta = 1.0; // fixed, not trained
};

class FcNet {
public:
    FcNet(const NetworkSpec& spec, const NetworkWeights& weights);

    // The parameter index holds pointers into this object, so copies and
    // moves rebuild it.
    FcNet(const FcNet& other);
    FcNet& operator=(const FcNet& other);
    FcNet(FcNet&& other) noexcept;
    FcNet& operator=(FcNet&& other) noexcept;

    std::size_t depth() const { return blocks_.size(); }
    std::size_t n_classes() const { return w_out_.rows; }
    const std::vector<FcBlock>& blocks() const { return blocks_; }

    // Mean softmax cross-entropy over a batch. mask_hash, when given, receives
    // a digest of every relu activation pattern of the pass; two evaluations
    // with different digests straddle a kink and are not comparable by
    // central differences.
    double loss(const Matrix& x, std::span<const int> labels,
                std::uint64_t* mask_hash = nullptr) const;
    double accuracy(const Matrix& x, std::span<const int> labels) const;

    // Loss plus reverse-mode gradients; grad layout matches param_count().
    double loss_and_gradient(const Matrix& x, std::span<const int> labels,
                             std::vector<double>& grad) const;

    // Flat parameter access for optimizers and finite differences.
    std::size_t param_count() const;
    double get_param(std::size_t i) const;
    void set_param(std::size_t i, double v);
    // True if parameter i is a weight-matrix entry (weight decay applies).
    bool param_is_weight(std::size_t i) const;
    // True if parameter i is a block's alpha scalar.
    bool param_is_alpha(std::size_t i) const;

    std::vector<double> alphas() const;

private:
    struct ParamRef {
        double* value;
        bool is_weight;
        bool is_alpha;
    };
    void index_params();

    Matrix w0_;
    std::vector<FcBlock> blocks_;
    Matrix w_out_;
    std::vector<ParamRef> params_;
};

// ---------------------------------------------------------------------------
// Training entry points
// ---------------------------------------------------------------------------

// Mini-batch SGD with momentum, weight decay (weights only; not biases or
// alpha) and the configured schedule. FC specs only.
TrainLog sgd_train(const NetworkSpec& spec, const InitScheme& scheme, const Dataset& train,
                   const TrainConfig& cfg, const Dataset* test = nullptr);

// Same optimizer loop on an already-built network, updated in place.
TrainLog sgd_train_inplace(FcNet& net, const Dataset& train, const TrainConfig& cfg,
                           const Dataset* test = nullptr);

struct AlphaSweepRow {
    double alpha = 0.0;
    double final_loss = 0.0;
    double final_acc = 0.0;
    bool diverged = false;
};

// One training run per alpha with a shared seed (risotto schemes).
std::vector<AlphaSweepRow> alpha_sweep(const NetworkSpec& spec, const InitScheme& scheme,
                                       std::span<const double> alphas, const Dataset& data,
                                       const TrainConfig& cfg);

// Max relative error between reverse-mode and central finite-difference
// gradients over n_probe randomly chosen parameters. Probes whose +-step
// evaluations land on different activation patterns sit on a relu kink
// (possible at exactly-zero preactivations of the structured inits, where the
// masks use the zero-counts-as-inactive convention); they are skipped and
// counted in n_ambiguous when provided.
double gradient_check(const FcNet& net, const Matrix& x, std::span<const int> labels,
                      std::size_t n_probe, double step, RngStream rng,
                      std::size_t* n_ambiguous = nullptr);

} // namespace resinit
