#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "oracles.hpp"
#include "resinit/train.hpp"

using namespace resinit;

namespace {

Dataset blobs_for(const NetworkSpec& net, int classes, std::size_t per_class,
                  double spread, std::uint64_t seed) {
    return synth_blobs(classes, net.input_dim, per_class, spread, RngStream(seed, 777));
}

TrainConfig quick_config(std::uint64_t seed, std::size_t epochs, double lr = 0.1) {
    TrainConfig cfg;
    cfg.learning_rate = lr;
    cfg.epochs = epochs;
    cfg.batch_size = 32;
    cfg.seed = seed;
    return cfg;
}

struct TempFile {
    std::string path;
    explicit TempFile(const std::string& name, const std::vector<unsigned char>& bytes)
        : path("/tmp/resinit_test_" + name) {
        std::ofstream out(path, std::ios::binary);
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
    }
    ~TempFile() { std::remove(path.c_str()); }
};

std::vector<unsigned char> cifar_record(unsigned char label, unsigned char fill) {
    std::vector<unsigned char> rec(3073, fill);
    rec[0] = label;
    return rec;
}

} // namespace

TEST_CASE("synth_blobs shapes and balance") {
    Dataset d = synth_blobs(2, 16, 100, 0.5, RngStream(1));
    CHECK(d.size() == 200);
    CHECK(d.features.cols == 16);
    int count0 = 0;
    for (int y : d.labels) count0 += (y == 0);
    CHECK(count0 == 100);
    d.validate();

    // unit-norm features
    for (std::size_t i = 0; i < d.size(); ++i)
        CHECK(norm_sq(d.features.row(i)) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("synth_blobs at tiny spread is separable by nearest mean") {
    Dataset d = synth_blobs(4, 8, 50, 1e-4, RngStream(2));
    CHECK(oracles::nearest_mean_accuracy(d.features, d.labels, 4) == 1.0);
}

TEST_CASE("synth_blobs is deterministic and validates inputs") {
    Dataset a = synth_blobs(3, 8, 10, 0.3, RngStream(3));
    Dataset b = synth_blobs(3, 8, 10, 0.3, RngStream(3));
    CHECK(a.features.data == b.features.data);
    CHECK(a.labels == b.labels);
    CHECK_THROWS_AS(synth_blobs(1, 8, 10, 0.3, RngStream(4)), SpecError);
    CHECK_THROWS_AS(synth_blobs(9, 8, 10, 0.3, RngStream(4)), SpecError);
}

TEST_CASE("cifar10_load parses the binary record layout") {
    auto bytes = cifar_record(3, 0);
    auto rec2 = cifar_record(7, 255);
    bytes.insert(bytes.end(), rec2.begin(), rec2.end());
    TempFile f("cifar_ok.bin", bytes);

    Dataset d = cifar10_load(f.path);
    CHECK(d.size() == 2);
    CHECK(d.n_classes == 10);
    CHECK(d.labels == std::vector<int>{3, 7});
    CHECK(d.features(0, 0) == 0.0);
    CHECK(d.features(1, 0) == 1.0);      // byte 255 maps to 1.0
    CHECK(d.features(1, 3071) == 1.0);
}

TEST_CASE("cifar10_load rejects malformed files") {
    SUBCASE("truncated") {
        std::vector<unsigned char> bytes(3072, 0); // one byte short
        TempFile f("cifar_trunc.bin", bytes);
        CHECK_THROWS_AS(cifar10_load(f.path), FormatError);
    }
    SUBCASE("label out of range") {
        TempFile f("cifar_label.bin", cifar_record(10, 0));
        CHECK_THROWS_AS(cifar10_load(f.path), FormatError);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(cifar10_load("/tmp/resinit_no_such_file.bin"), FormatError);
    }
}

TEST_CASE("dataset_head caps samples per class") {
    Dataset d = synth_blobs(2, 8, 30, 0.3, RngStream(5));
    Dataset h = dataset_head(d, 5);
    CHECK(h.size() == 10);
}

TEST_CASE("dataset validation rejects bad labels and non-finite features") {
    Dataset d = synth_blobs(2, 8, 4, 0.3, RngStream(6));
    Dataset bad_label = d;
    bad_label.labels[0] = 7;
    CHECK_THROWS_AS(bad_label.validate(), FormatError);

    Dataset bad_feature = d;
    bad_feature.features(0, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(bad_feature.validate(), FormatError);
}

TEST_CASE("cosine schedule endpoints are exact") {
    CHECK(cosine_multiplier(0, 100) == 1.0);
    CHECK(cosine_multiplier(100, 100) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(cosine_multiplier(50, 100) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("reverse-mode gradients match finite differences for every scheme") {
    const InitScheme schemes[] = {
        InitScheme::he_normal(),    InitScheme::he_uniform(), InitScheme::balanced(0.6, 0.8),
        InitScheme::skipinit(),     InitScheme::fixup_like(4), InitScheme::risotto_b(1.0),
        InitScheme::risotto_c(1.0)};
    for (const auto& scheme : schemes) {
        NetworkSpec net = NetworkSpec::fc_uniform(4, 8, scheme, 3);
        NetworkWeights w = build_network(net, scheme, RngStream(6));
        FcNet fc(net, w);
        Dataset d = blobs_for(net, 3, 8, 0.4, 7);
        const double err = gradient_check(fc, d.features, d.labels, 50, 1e-5, RngStream(8));
        CAPTURE(scheme_name(scheme.kind));
        CHECK(err <= 1e-4);
    }
}

TEST_CASE("gradients stay correct after a few training steps") {
    InitScheme scheme = InitScheme::risotto_c(1.0);
    NetworkSpec net = NetworkSpec::fc_uniform(4, 8, scheme, 2);
    NetworkWeights w = build_network(net, scheme, RngStream(9));
    FcNet fc(net, w);
    Dataset d = blobs_for(net, 2, 16, 0.4, 10);

    TrainConfig cfg = quick_config(11, 2, 0.05);
    sgd_train_inplace(fc, d, cfg);
    const double err = gradient_check(fc, d.features, d.labels, 50, 1e-5, RngStream(12));
    CHECK(err <= 1e-4);
}

TEST_CASE("one tiny step changes the loss by about -lr * ||grad||^2") {
    InitScheme scheme = InitScheme::he_normal();
    NetworkSpec net = NetworkSpec::fc_uniform(2, 8, scheme, 2);
    NetworkWeights w = build_network(net, scheme, RngStream(13));
    FcNet fc(net, w);
    Dataset d = blobs_for(net, 2, 16, 0.4, 14);

    std::vector<double> grad;
    const double loss0 = fc.loss_and_gradient(d.features, d.labels, grad);
    double grad_sq = 0.0;
    for (double g : grad) grad_sq += g * g;

    const double lr = 1e-5;
    FcNet stepped = fc;
    for (std::size_t i = 0; i < grad.size(); ++i)
        stepped.set_param(i, stepped.get_param(i) - lr * grad[i]);
    const double loss1 = stepped.loss(d.features, d.labels);
    const double predicted = -lr * grad_sq;
    CHECK(loss1 - loss0 == doctest::Approx(predicted).epsilon(0.1));
}

TEST_CASE("lr zero freezes the full-batch loss trace") {
    InitScheme scheme = InitScheme::he_normal();
    NetworkSpec net = NetworkSpec::fc_uniform(2, 8, scheme, 2);
    Dataset d = blobs_for(net, 2, 10, 0.4, 15);
    TrainConfig cfg;
    cfg.learning_rate = 0.0;
    cfg.epochs = 3;
    cfg.batch_size = d.size(); // full batch makes every step identical
    cfg.seed = 16;
    TrainLog log = sgd_train(net, scheme, d, cfg);
    REQUIRE(log.step_loss.size() == 3);
    CHECK(log.step_loss[1] == log.step_loss[0]);
    CHECK(log.step_loss[2] == log.step_loss[0]);
}

TEST_CASE("training is deterministic for a fixed seed") {
    InitScheme scheme = InitScheme::risotto_c(1.0);
    NetworkSpec net = NetworkSpec::fc_uniform(3, 8, scheme, 2);
    Dataset d = blobs_for(net, 2, 24, 0.4, 17);
    TrainConfig cfg = quick_config(18, 3);
    TrainLog a = sgd_train(net, scheme, d, cfg);
    TrainLog b = sgd_train(net, scheme, d, cfg);
    CHECK(a.step_loss == b.step_loss);
    CHECK(a.final_alphas == b.final_alphas);
    CHECK(a.final_train_loss == b.final_train_loss);
}

TEST_CASE("alpha is trained as an ordinary parameter") {
    InitScheme scheme = InitScheme::risotto_c(1.0);
    NetworkSpec net = NetworkSpec::fc_uniform(3, 8, scheme, 2);
    Dataset d = blobs_for(net, 2, 24, 0.4, 19);
    TrainConfig cfg = quick_config(20, 4);
    TrainLog log = sgd_train(net, scheme, d, cfg);
    REQUIRE(log.final_alphas.size() == 3);
    bool moved = false;
    for (double a : log.final_alphas)
        if (a != 1.0) moved = true;
    CHECK(moved);
    CHECK(log.alpha_per_epoch.size() == log.epoch_train_acc.size());
}

TEST_CASE("divergence is flagged and halts the run") {
    InitScheme scheme = InitScheme::he_normal();
    NetworkSpec net = NetworkSpec::fc_uniform(4, 16, scheme, 2);
    Dataset d = blobs_for(net, 2, 32, 0.4, 21);
    TrainConfig cfg = quick_config(22, 50, 1e5); // absurd learning rate
    TrainLog log = sgd_train(net, scheme, d, cfg);
    CHECK(log.diverged);
    CHECK(log.step_loss.size() < 50 * (d.size() / cfg.batch_size + 1));
}

TEST_CASE("small risotto net trains to low loss quickly") {
    InitScheme scheme = InitScheme::risotto_c(1.0);
    NetworkSpec net = NetworkSpec::fc_uniform(4, 16, scheme, 2);
    Dataset d = blobs_for(net, 2, 50, 0.5, 23);
    TrainConfig cfg = quick_config(24, 30);
    cfg.target_loss = 0.1;
    cfg.eval_every = 10;
    TrainLog log = sgd_train(net, scheme, d, cfg);
    CHECK_FALSE(log.diverged);
    CHECK(log.final_train_loss <= 0.1);
}

TEST_CASE("alpha_sweep") {
    InitScheme scheme = InitScheme::risotto_c(1.0);
    NetworkSpec net = NetworkSpec::fc_uniform(2, 8, scheme, 2);
    Dataset d = blobs_for(net, 2, 16, 0.4, 25);
    TrainConfig cfg = quick_config(26, 2);

    SUBCASE("a single alpha matches a direct run") {
        const double alphas[] = {1.0};
        auto rows = alpha_sweep(net, scheme, alphas, d, cfg);
        REQUIRE(rows.size() == 1);
        TrainLog direct = sgd_train(net, scheme, d, cfg);
        CHECK(rows[0].final_loss == direct.final_train_loss);
        CHECK(rows[0].final_acc == direct.final_train_acc);
    }
    SUBCASE("identical alphas give identical rows") {
        const double alphas[] = {0.5, 0.5};
        auto rows = alpha_sweep(net, scheme, alphas, d, cfg);
        REQUIRE(rows.size() == 2);
        CHECK(rows[0].final_loss == rows[1].final_loss);
        CHECK(rows[0].final_acc == rows[1].final_acc);
    }
    SUBCASE("non-risotto schemes are rejected") {
        const double alphas[] = {1.0};
        CHECK_THROWS_AS(alpha_sweep(net, InitScheme::he_normal(), alphas, d, cfg), SpecError);
    }
}

TEST_CASE("sgd_train validates shape agreement") {
    InitScheme scheme = InitScheme::he_normal();
    NetworkSpec net = NetworkSpec::fc_uniform(2, 8, scheme, 5);
    Dataset d = blobs_for(net, 2, 10, 0.4, 27); // 2 classes vs output_dim 5
    TrainConfig cfg = quick_config(28, 1);
    CHECK_THROWS_AS(sgd_train(net, scheme, d, cfg), SpecError);
}
