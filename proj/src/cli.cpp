#include "resinit/cli.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "resinit/io.hpp"
#include "resinit/network.hpp"
#include "resinit/sigprop.hpp"
#include "resinit/train.hpp"

namespace resinit {

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitVerification = 2;

struct CommonOpts {
    std::string config_path;
    std::string scheme = "he-normal";
    double alpha = 1.0;
    bool alpha_set = false;
    double beta = 0.0;
    bool beta_set = false;
    std::size_t depth = 5;
    std::size_t width = 32;
    std::size_t samples = 1000;
    std::uint64_t seed = 1;
    unsigned threads = 1;
    std::string out_path;
    std::string format = "json";
};

void add_common(CLI::App* cmd, CommonOpts& o, bool with_samples = true) {
    cmd->add_option("--config", o.config_path, "network config JSON file");
    cmd->add_option("--scheme", o.scheme,
                    "initialization scheme: he-normal, he-uniform, balanced, skipinit, "
                    "fixup-like, risotto-b, risotto-c");
    cmd->add_option("--alpha", o.alpha, "residual branch scalar")
        ->each([&o](const std::string&) { o.alpha_set = true; });
    cmd->add_option("--beta", o.beta, "skip branch scalar (balanced scheme)")
        ->each([&o](const std::string&) { o.beta_set = true; });
    cmd->add_option("--depth", o.depth, "number of residual blocks");
    cmd->add_option("--width", o.width, "channel width");
    if (with_samples) cmd->add_option("--samples", o.samples, "Monte-Carlo sample count");
    cmd->add_option("--seed", o.seed, "random seed");
    cmd->add_option("--threads", o.threads, "worker threads for Monte-Carlo estimators");
    cmd->add_option("--out", o.out_path, "output path (stdout if omitted)");
    cmd->add_option("--format", o.format, "output format: csv or json")
        ->check(CLI::IsMember({"csv", "json"}));
}

InitScheme make_scheme(const CommonOpts& o) {
    const SchemeKind kind = scheme_from_name(o.scheme);
    switch (kind) {
        case SchemeKind::HeNormal: return InitScheme::he_normal();
        case SchemeKind::HeUniform: return InitScheme::he_uniform();
        case SchemeKind::BalancedNormal: {
            const double a = o.alpha_set ? o.alpha : std::sqrt(0.5);
            const double b = o.beta_set ? o.beta : std::sqrt(std::max(0.0, 1.0 - a * a));
            return InitScheme::balanced(a, b);
        }
        case SchemeKind::SkipInit: return InitScheme::skipinit();
        case SchemeKind::FixupLike: return InitScheme::fixup_like(std::max<std::size_t>(o.depth, 1));
        case SchemeKind::RisottoB: return InitScheme::risotto_b(o.alpha_set ? o.alpha : 1.0);
        case SchemeKind::RisottoC: return InitScheme::risotto_c(o.alpha_set ? o.alpha : 1.0);
    }
    throw ConfigError("unknown scheme: " + o.scheme);
}

NetworkSpec make_network_spec(const CommonOpts& o, const InitScheme& scheme) {
    NetworkSpec net;
    if (!o.config_path.empty()) {
        net = network_spec_from_file(o.config_path);
        if (o.alpha_set)
            for (auto& b : net.blocks) b.alpha = o.alpha;
    } else {
        net = NetworkSpec::fc_uniform(o.depth, o.width, scheme);
    }
    net.validate();
    return net;
}

std::ostream& open_out(std::ofstream& file, const std::string& path) {
    if (path.empty()) return std::cout;
    file.open(path);
    if (!file) throw ConfigError("cannot open output file: " + path);
    return file;
}

FeatureMap random_unit_input(const NetworkSpec& net, RngStream rng) {
    FeatureMap x(net.input_dim, net.spatial_h, net.spatial_w);
    rng.fill_gaussian(x.data, 1.0);
    const double n = std::sqrt(norm_sq(x.data));
    for (double& v : x.data) v /= n;
    return x;
}

// --------------------------- di-verify ------------------------------------

int cmd_di_verify(const CommonOpts& o) {
    const InitScheme scheme = make_scheme(o);
    const NetworkSpec net = make_network_spec(o, scheme);

    RngStream rng(o.seed);
    NetworkWeights weights = build_network(net, scheme, rng.substream(0));
    FeatureMap x = random_unit_input(net, rng.substream(1));
    Activations acts = forward(net, weights, x);

    constexpr double kDiTol = 1e-9;
    bool di_ok = true;
    json blocks = json::array();
    for (std::size_t l = 0; l < net.blocks.size(); ++l) {
        const FeatureMap& input = acts.acts[l];
        JacobianReport rep = make_jacobian_report(weights.blocks[l], net.blocks[l], input,
                                                  scheme.is_looks_linear());
        if (scheme.is_looks_linear()) {
            for (double sv : rep.effective_singular_values)
                if (std::abs(sv - 1.0) > kDiTol) di_ok = false;
            if (rep.effective_singular_values.empty()) di_ok = false;
        }
        blocks.push_back(jacobian_report_to_json(rep, l));
    }

    std::ofstream file;
    std::ostream& os = open_out(file, o.out_path);
    if (o.format == "json") {
        json j;
        j["scheme"] = scheme_name(scheme.kind);
        j["seed"] = o.seed;
        j["di_checked"] = scheme.is_looks_linear();
        j["di_ok"] = scheme.is_looks_linear() ? json(di_ok) : json(nullptr);
        j["blocks"] = blocks;
        os << j.dump(2) << '\n';
    } else {
        os << "block,max_raw_sv,min_raw_sv,max_eff_dev_from_1,effective_residual,fd_gap\n";
        for (std::size_t l = 0; l < blocks.size(); ++l) {
            const auto& b = blocks[l];
            const auto raw = b["raw_singular_values"].get<std::vector<double>>();
            const auto eff = b["effective_singular_values"].get<std::vector<double>>();
            double eff_dev = 0.0;
            for (double sv : eff) eff_dev = std::max(eff_dev, std::abs(sv - 1.0));
            os << l << ',' << (raw.empty() ? 0.0 : raw.front()) << ','
               << (raw.empty() ? 0.0 : raw.back()) << ',' << eff_dev << ','
               << (b.contains("effective_residual") ? b["effective_residual"].get<double>()
                                                    : 0.0)
               << ',' << b["analytic_vs_fd_gap"].get<double>() << '\n';
        }
    }

    if (scheme.is_looks_linear() && !di_ok) return kExitVerification;
    return kExitOk;
}

// --------------------------- sigprop ---------------------------------------

int cmd_sigprop(const CommonOpts& o, const std::string& data_path) {
    if (o.samples < 2) throw ConfigError("sigprop: --samples must be at least 2");
    const InitScheme scheme = make_scheme(o);
    NetworkSpec net = make_network_spec(o, scheme);

    RngStream rng(o.seed);
    FeatureMap x, x2;
    if (!data_path.empty()) {
        // correlation trace between two dataset samples (e.g. CIFAR records)
        const Dataset d = cifar10_load(data_path);
        if (d.size() < 2) throw ConfigError("sigprop: dataset needs at least two records");
        const std::size_t i = rng.substream(100).next_u64() % d.size();
        std::size_t j = rng.substream(101).next_u64() % d.size();
        if (j == i) j = (j + 1) % d.size();
        x = FeatureMap(std::vector<double>(d.features.row(i).begin(), d.features.row(i).end()));
        x2 = FeatureMap(std::vector<double>(d.features.row(j).begin(), d.features.row(j).end()));
        net.input_dim = d.features.cols;
        net.validate();
    } else {
        x = random_unit_input(net, rng.substream(100));
        x2 = random_unit_input(net, rng.substream(101));
    }

    const MeanStderr norm = mc_norm_ratio(net, scheme, x, o.samples, rng.substream(0),
                                          o.threads);
    const PropTheoryParams theory = default_theory_params(net);
    const double theory_ratio = expected_norm(theory, 1.0);

    CovTrace trace = mc_cov_trace(net, scheme, x, x2, o.samples, rng.substream(1), o.threads);
    const double block_alpha = net.blocks.empty() ? 1.0 : net.blocks.front().alpha;
    const double block_beta = net.blocks.empty() ? 1.0 : net.blocks.front().beta;
    const auto bounds = cov_bound_recursion(CovBoundParams::from_scheme(
        block_alpha, block_beta, net.blocks.size(), trace.input_cov));

    const std::string norm_path = o.out_path.empty() ? "" : o.out_path + "_norm.csv";
    const std::string cov_path = o.out_path.empty() ? "" : o.out_path + "_cov.csv";
    {
        std::ofstream file;
        std::ostream& os = open_out(file, norm_path);
        write_norm_csv(os, scheme_name(scheme.kind), net.depth(),
                       net.blocks.empty() ? net.first_layer_out : net.blocks.front().n_out,
                       norm, theory_ratio);
    }
    {
        std::ofstream file;
        std::ostream& os = open_out(file, cov_path);
        write_cov_csv(os, trace, bounds);
    }
    return kExitOk;
}

// --------------------------- lemma -----------------------------------------

int cmd_lemma(const CommonOpts& o, std::size_t grid) {
    if (grid < 2) throw ConfigError("lemma: --grid must be at least 2");
    if (o.samples < 2) throw ConfigError("lemma: --samples must be at least 2");

    std::vector<double> rhos(grid);
    for (std::size_t i = 0; i < grid; ++i)
        rhos[i] = -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(grid - 1);

    const auto scan = lemma_constant_scan(rhos);
    RngStream rng(o.seed);
    std::vector<LemmaCsvRow> rows;
    rows.reserve(grid);
    for (std::size_t i = 0; i < grid; ++i) {
        LemmaCsvRow row;
        row.scan = scan[i];
        row.mc = lemma_mc_check(1.0, 1.0, rhos[i], o.samples, rng.substream(i), o.threads);
        rows.push_back(row);
    }

    std::ofstream file;
    std::ostream& os = open_out(file, o.out_path);
    if (o.format == "json") {
        json points = json::array();
        double c_min = rows.front().scan.c, c_max = rows.front().scan.c;
        for (const auto& r : rows) {
            c_min = std::min(c_min, r.scan.c);
            c_max = std::max(c_max, r.scan.c);
            points.push_back({{"rho", r.scan.rho},
                              {"g", r.scan.g},
                              {"h", r.scan.h},
                              {"c", r.scan.c},
                              {"mc_mean", r.mc.mean},
                              {"mc_stderr", r.mc.stderr_}});
        }
        json j;
        j["points"] = points;
        j["c_min"] = c_min;
        j["c_max"] = c_max;
        os << j.dump(2) << '\n';
    } else {
        write_lemma_csv(os, rows);
    }
    return kExitOk;
}

// --------------------------- train / alpha-sweep ----------------------------

struct TrainOpts {
    std::string dataset = "blobs";
    std::string data_path;
    int blob_classes = 2;
    std::size_t blob_dim = 16;
    std::size_t blob_n = 500;
    double blob_spread = 0.5;
    std::size_t per_class_cap = 0;
    double lr = 0.1;
    double momentum = 0.9;
    double weight_decay = 0.0005;
    std::string schedule = "cosine";
    std::size_t epochs = 20;
    std::size_t batch = 256;
    std::size_t max_steps = 0;
    std::string alphas = "0,1";
};

// The network config file may carry "train" and "dataset" sections; they
// override the built-in defaults, and explicitly passed flags override both.
void apply_config_overrides(const CommonOpts& o, const CLI::App* cmd, TrainOpts& t) {
    if (o.config_path.empty()) return;
    std::ifstream in(o.config_path);
    if (!in) throw ConfigError("cannot open config file: " + o.config_path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    auto unset = [&](const std::string& flag) { return cmd->count(flag) == 0; };
    if (j.contains("train")) {
        const json& tr = j["train"];
        if (unset("--lr")) t.lr = tr.value("learning_rate", t.lr);
        if (unset("--momentum")) t.momentum = tr.value("momentum", t.momentum);
        if (unset("--weight-decay")) t.weight_decay = tr.value("weight_decay", t.weight_decay);
        if (unset("--schedule")) t.schedule = tr.value("schedule", t.schedule);
        if (unset("--epochs")) t.epochs = tr.value("epochs", t.epochs);
        if (unset("--batch")) t.batch = tr.value("batch_size", t.batch);
        if (unset("--max-steps")) t.max_steps = tr.value("max_steps", t.max_steps);
    }
    if (j.contains("dataset")) {
        const json& ds = j["dataset"];
        if (unset("--dataset")) t.dataset = ds.value("kind", t.dataset);
        if (unset("--data")) t.data_path = ds.value("path", t.data_path);
        if (unset("--blob-classes")) t.blob_classes = ds.value("classes", t.blob_classes);
        if (unset("--blob-dim")) t.blob_dim = ds.value("dim", t.blob_dim);
        if (unset("--blob-n")) t.blob_n = ds.value("n_per_class", t.blob_n);
        if (unset("--blob-spread")) t.blob_spread = ds.value("spread", t.blob_spread);
        if (unset("--per-class")) t.per_class_cap = ds.value("per_class", t.per_class_cap);
    }
}

Dataset load_dataset(const TrainOpts& t, std::uint64_t seed) {
    if (t.dataset == "blobs") {
        return synth_blobs(t.blob_classes, t.blob_dim, t.blob_n, t.blob_spread,
                           RngStream(seed, 777));
    }
    if (t.dataset == "cifar") {
        if (t.data_path.empty()) throw ConfigError("train: cifar dataset needs --data PATH");
        Dataset d = cifar10_load(t.data_path);
        if (t.per_class_cap > 0) d = dataset_head(d, t.per_class_cap);
        return d;
    }
    throw ConfigError("unknown dataset: " + t.dataset);
}

TrainConfig make_train_config(const TrainOpts& t, std::uint64_t seed) {
    TrainConfig cfg;
    cfg.learning_rate = t.lr;
    cfg.momentum = t.momentum;
    cfg.weight_decay = t.weight_decay;
    if (t.schedule == "cosine") {
        cfg.schedule = LrSchedule::Cosine;
    } else if (t.schedule == "constant") {
        cfg.schedule = LrSchedule::Constant;
    } else {
        throw ConfigError("unknown schedule: " + t.schedule);
    }
    cfg.epochs = t.epochs;
    cfg.batch_size = t.batch;
    cfg.max_steps = t.max_steps;
    cfg.seed = seed;
    return cfg;
}

NetworkSpec make_train_spec(const CommonOpts& o, const InitScheme& scheme, const Dataset& d) {
    NetworkSpec net;
    if (!o.config_path.empty()) {
        net = make_network_spec(o, scheme);
    } else {
        net = NetworkSpec::fc_uniform(o.depth, o.width, scheme,
                                      static_cast<std::size_t>(d.n_classes));
        net.input_dim = d.features.cols;
    }
    net.output_dim = static_cast<std::size_t>(d.n_classes);
    return net;
}

int cmd_train(const CommonOpts& o, const CLI::App* cmd, TrainOpts t) {
    const InitScheme scheme = make_scheme(o);
    apply_config_overrides(o, cmd, t);
    const Dataset data = load_dataset(t, o.seed);
    const NetworkSpec net = make_train_spec(o, scheme, data);
    const TrainConfig cfg = make_train_config(t, o.seed);

    TrainLog log = sgd_train(net, scheme, data, cfg);

    const std::string csv_path = o.out_path.empty() ? "" : o.out_path + ".csv";
    const std::string json_path = o.out_path.empty() ? "" : o.out_path + ".json";
    {
        std::ofstream file;
        std::ostream& os = open_out(file, csv_path);
        write_train_csv(os, log);
    }
    {
        std::ofstream file;
        std::ostream& os = open_out(file, json_path);
        json j = train_summary_json(log);
        j["scheme"] = scheme_name(scheme.kind);
        j["seed"] = o.seed;
        os << j.dump(2) << '\n';
    }
    return log.diverged ? kExitVerification : kExitOk;
}

int cmd_alpha_sweep(const CommonOpts& o, const CLI::App* cmd, TrainOpts t) {
    const InitScheme scheme = make_scheme(o);
    if (!scheme.is_looks_linear())
        throw ConfigError("alpha-sweep: use a risotto scheme");
    apply_config_overrides(o, cmd, t);
    const Dataset data = load_dataset(t, o.seed);
    const NetworkSpec net = make_train_spec(o, scheme, data);
    const TrainConfig cfg = make_train_config(t, o.seed);

    std::vector<double> alphas;
    std::stringstream ss(t.alphas);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (!tok.empty()) alphas.push_back(std::stod(tok));
    }
    if (alphas.empty()) throw ConfigError("alpha-sweep: --alphas is empty");

    const auto rows = alpha_sweep(net, scheme, alphas, data, cfg);

    std::ofstream file;
    std::ostream& os = open_out(file, o.out_path);
    if (o.format == "json") {
        json j = json::array();
        for (const auto& r : rows)
            j.push_back({{"alpha", r.alpha},
                         {"final_loss", r.final_loss},
                         {"final_acc", r.final_acc},
                         {"diverged", r.diverged}});
        os << j.dump(2) << '\n';
    } else {
        os << "alpha,final_loss,final_acc,diverged\n";
        for (const auto& r : rows)
            os << r.alpha << ',' << r.final_loss << ',' << r.final_acc << ','
               << (r.diverged ? 1 : 0) << '\n';
    }
    return kExitOk;
}

// --------------------------- init-dump -------------------------------------

int cmd_init_dump(const CommonOpts& o, std::size_t n_mid_opt, std::size_t n_out_opt,
                  std::size_t k1, std::size_t k2) {
    const InitScheme scheme = make_scheme(o);
    BlockSpec spec;
    spec.kind = scheme.block_kind();
    spec.n_in = o.width;
    spec.n_mid = n_mid_opt > 0 ? n_mid_opt : o.width;
    spec.n_out = n_out_opt > 0 ? n_out_opt : o.width;
    spec.k1_1 = spec.k1_2 = k1;
    spec.k2_1 = spec.k2_2 = k2;
    spec.alpha = scheme.alpha;
    spec.beta = scheme.beta;

    BlockWeights w = init_block(spec, scheme, RngStream(o.seed));

    std::ofstream file;
    std::ostream& os = open_out(file, o.out_path);
    os << block_weights_to_json(w, spec, scheme_name(scheme.kind), o.seed).dump(2) << '\n';
    return kExitOk;
}

} // namespace

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"residual-network initialization toolbox"};
    app.require_subcommand(1);

    CommonOpts common;
    TrainOpts train_opts;
    std::size_t lemma_grid = 21;
    std::size_t dump_n_mid = 0, dump_n_out = 0, dump_k1 = 1, dump_k2 = 1;

    auto* di = app.add_subcommand("di-verify",
                                  "per-block Jacobian spectra and dynamical-isometry check");
    add_common(di, common, false);

    auto* sp = app.add_subcommand("sigprop", "Monte-Carlo norm and covariance traces");
    add_common(sp, common);
    std::string sigprop_data;
    sp->add_option("--data", sigprop_data,
                   "CIFAR-10 batch file; two records become the correlation inputs");

    auto* lm = app.add_subcommand("lemma", "ReLU Gaussian covariance scan and MC check");
    add_common(lm, common);
    lm->add_option("--grid", lemma_grid, "number of rho grid points on [-1, 1]");

    auto* tr = app.add_subcommand("train", "SGD training on a dataset");
    add_common(tr, common, false);
    tr->add_option("--dataset", train_opts.dataset, "blobs or cifar");
    tr->add_option("--data", train_opts.data_path, "dataset file (cifar)");
    tr->add_option("--blob-classes", train_opts.blob_classes, "blobs: class count");
    tr->add_option("--blob-dim", train_opts.blob_dim, "blobs: feature dimension");
    tr->add_option("--blob-n", train_opts.blob_n, "blobs: samples per class");
    tr->add_option("--blob-spread", train_opts.blob_spread, "blobs: cluster spread");
    tr->add_option("--per-class", train_opts.per_class_cap, "cap samples per class");
    tr->add_option("--lr", train_opts.lr, "learning rate");
    tr->add_option("--momentum", train_opts.momentum, "SGD momentum");
    tr->add_option("--weight-decay", train_opts.weight_decay, "L2 weight decay");
    tr->add_option("--schedule", train_opts.schedule, "cosine or constant");
    tr->add_option("--epochs", train_opts.epochs, "training epochs");
    tr->add_option("--batch", train_opts.batch, "batch size");
    tr->add_option("--max-steps", train_opts.max_steps, "hard step cap (0 = none)");

    auto* sw = app.add_subcommand("alpha-sweep", "train once per alpha and tabulate");
    add_common(sw, common, false);
    sw->add_option("--dataset", train_opts.dataset, "blobs or cifar");
    sw->add_option("--data", train_opts.data_path, "dataset file (cifar)");
    sw->add_option("--blob-classes", train_opts.blob_classes, "blobs: class count");
    sw->add_option("--blob-dim", train_opts.blob_dim, "blobs: feature dimension");
    sw->add_option("--blob-n", train_opts.blob_n, "blobs: samples per class");
    sw->add_option("--blob-spread", train_opts.blob_spread, "blobs: cluster spread");
    sw->add_option("--lr", train_opts.lr, "learning rate");
    sw->add_option("--momentum", train_opts.momentum, "SGD momentum");
    sw->add_option("--weight-decay", train_opts.weight_decay, "L2 weight decay");
    sw->add_option("--schedule", train_opts.schedule, "cosine or constant");
    sw->add_option("--epochs", train_opts.epochs, "training epochs");
    sw->add_option("--batch", train_opts.batch, "batch size");
    sw->add_option("--max-steps", train_opts.max_steps, "hard step cap (0 = none)");
    sw->add_option("--alphas", train_opts.alphas, "comma-separated alpha values");

    auto* dump = app.add_subcommand("init-dump", "serialize one initialized block as JSON");
    add_common(dump, common, false);
    dump->add_option("--n-mid", dump_n_mid, "intermediary width (defaults to --width)");
    dump->add_option("--n-out", dump_n_out, "output width (defaults to --width)");
    dump->add_option("--k1", dump_k1, "W1 kernel size (odd)");
    dump->add_option("--k2", dump_k2, "W2 kernel size (odd)");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (di->parsed()) return cmd_di_verify(common);
        if (sp->parsed()) return cmd_sigprop(common, sigprop_data);
        if (lm->parsed()) return cmd_lemma(common, lemma_grid);
        if (tr->parsed()) return cmd_train(common, tr, train_opts);
        if (sw->parsed()) return cmd_alpha_sweep(common, sw, train_opts);
        if (dump->parsed()) return cmd_init_dump(common, dump_n_mid, dump_n_out, dump_k1,
                                                 dump_k2);
        std::cerr << "no subcommand given\n";
        return kExitUsage;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    }
}

} // namespace resinit
