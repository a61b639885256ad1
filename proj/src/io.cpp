#include "resinit/io.hpp"

#include <cctype>
#include <fstream>
#include <ostream>

namespace resinit {

namespace {

BlockKind block_kind_from_string(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (s == "b" || s == "typeb" || s == "type_b") return BlockKind::TypeB;
    if (s == "c" || s == "typec" || s == "type_c") return BlockKind::TypeC;
    throw ConfigError("unknown block kind: " + s);
}

std::string block_kind_to_string(BlockKind k) {
    return k == BlockKind::TypeB ? "B" : "C";
}

} // namespace

NetworkSpec network_spec_from_json(const json& j) {
    try {
        NetworkSpec net;
        net.input_dim = j.at("input_dim").get<std::size_t>();
        if (j.contains("spatial")) {
            const auto& s = j.at("spatial");
            net.spatial_h = s.at(0).get<std::size_t>();
            net.spatial_w = s.at(1).get<std::size_t>();
        }
        net.first_layer_out = j.at("first_layer_out").get<std::size_t>();
        net.first_layer_k = j.value("first_layer_k", std::size_t{1});
        for (const auto& bj : j.at("blocks")) {
            BlockSpec b;
            b.kind = block_kind_from_string(bj.at("kind").get<std::string>());
            b.n_in = bj.at("n_in").get<std::size_t>();
            b.n_mid = bj.at("n_mid").get<std::size_t>();
            b.n_out = bj.at("n_out").get<std::size_t>();
            const std::size_t k1 = bj.value("k1", std::size_t{1});
            const std::size_t k2 = bj.value("k2", std::size_t{1});
            b.k1_1 = b.k1_2 = k1;
            b.k2_1 = b.k2_2 = k2;
            b.alpha = bj.value("alpha", 1.0);
            b.beta = bj.value("beta", 1.0);
            net.blocks.push_back(b);
        }
        const std::string pooling = j.value("pooling", std::string("average"));
        if (pooling == "none") {
            net.pooling = Pooling::None;
        } else if (pooling == "average") {
            net.pooling = Pooling::Average;
        } else {
            throw ConfigError("unknown pooling: " + pooling);
        }
        net.output_dim = j.at("output_dim").get<std::size_t>();
        net.validate();
        return net;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("network config: ") + e.what());
    }
}

NetworkSpec network_spec_from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    return network_spec_from_json(j);
}

json network_spec_to_json(const NetworkSpec& net) {
    json j;
    j["input_dim"] = net.input_dim;
    if (net.spatial_h != 1 || net.spatial_w != 1)
        j["spatial"] = {net.spatial_h, net.spatial_w};
    j["first_layer_out"] = net.first_layer_out;
    j["first_layer_k"] = net.first_layer_k;
    j["blocks"] = json::array();
    for (const auto& b : net.blocks) {
        json bj;
        bj["kind"] = block_kind_to_string(b.kind);
        bj["n_in"] = b.n_in;
        bj["n_mid"] = b.n_mid;
        bj["n_out"] = b.n_out;
        bj["k1"] = b.k1_1;
        bj["k2"] = b.k2_1;
        bj["alpha"] = b.alpha;
        bj["beta"] = b.beta;
        j["blocks"].push_back(bj);
    }
    j["pooling"] = net.pooling == Pooling::None ? "none" : "average";
    j["output_dim"] = net.output_dim;
    return j;
}

json matrix_to_json(const Matrix& m) {
    json rows = json::array();
    for (std::size_t i = 0; i < m.rows; ++i) {
        json row = json::array();
        for (std::size_t jx = 0; jx < m.cols; ++jx) row.push_back(m(i, jx));
        rows.push_back(row);
    }
    return rows;
}

Matrix matrix_from_json(const json& j) {
    if (!j.is_array() || j.empty()) throw ConfigError("matrix json must be a nested array");
    Matrix m(j.size(), j.at(0).size());
    for (std::size_t i = 0; i < m.rows; ++i) {
        const auto& row = j.at(i);
        if (row.size() != m.cols) throw ConfigError("matrix json rows differ in length");
        for (std::size_t c = 0; c < m.cols; ++c) m(i, c) = row.at(c).get<double>();
    }
    return m;
}

json block_weights_to_json(const BlockWeights& w, const BlockSpec& spec,
                           const std::string& scheme, std::uint64_t seed) {
    json j;
    j["scheme"] = scheme;
    j["seed"] = seed;
    j["spec"] = {{"kind", block_kind_to_string(spec.kind)},
                 {"n_in", spec.n_in},
                 {"n_mid", spec.n_mid},
                 {"n_out", spec.n_out},
                 {"k1", spec.k1_1},
                 {"k2", spec.k2_1},
                 {"alpha", w.alpha},
                 {"beta", w.beta}};
    j["w1_center"] = matrix_to_json(w.w1.center_matrix());
    j["w2_center"] = matrix_to_json(w.w2.center_matrix());
    if (w.skip_is_identity()) {
        j["w_skip_center"] = "identity";
    } else {
        j["w_skip_center"] = matrix_to_json(w.w_skip->center_matrix());
    }
    if (w.record) {
        json rec;
        if (!w.record->u1.empty()) rec["u1"] = matrix_to_json(w.record->u1);
        if (!w.record->u2.empty()) rec["u2"] = matrix_to_json(w.record->u2);
        if (!w.record->m.empty()) rec["m"] = matrix_to_json(w.record->m);
        if (!w.record->u_skip.empty()) rec["u_skip"] = matrix_to_json(w.record->u_skip);
        j["submatrices"] = rec;
    }
    return j;
}

void write_norm_csv(std::ostream& os, const std::string& scheme, std::size_t depth,
                    std::size_t width, const MeanStderr& mc, double theory) {
    os << "scheme,L,width,mean,stderr,theory\n";
    os << scheme << ',' << depth << ',' << width << ',' << mc.mean << ',' << mc.stderr_
       << ',' << theory << '\n';
}

void write_cov_csv(std::ostream& os, const CovTrace& trace, std::span<const double> bounds) {
    os << "layer,mean_cov,stderr,mean_corr,bound";
    if (trace.has_effective) os << ",mean_eff_corr,max_eff_corr_dev";
    os << '\n';
    for (std::size_t l = 0; l < trace.layers.size(); ++l) {
        const auto& lay = trace.layers[l];
        // bounds apply to the block outputs; layer 0 is the first-layer state
        const double bound = (l >= 1 && l - 1 < bounds.size()) ? bounds[l - 1] : 0.0;
        os << l << ',' << lay.mean_cov << ',' << lay.stderr_cov << ',' << lay.mean_corr
           << ',' << bound;
        if (trace.has_effective) os << ',' << lay.mean_eff_corr << ',' << lay.max_eff_corr_dev;
        os << '\n';
    }
}

void write_lemma_csv(std::ostream& os, std::span<const LemmaCsvRow> rows) {
    os << "rho,g,h,c,mc_mean,mc_stderr\n";
    for (const auto& r : rows)
        os << r.scan.rho << ',' << r.scan.g << ',' << r.scan.h << ',' << r.scan.c << ','
           << r.mc.mean << ',' << r.mc.stderr_ << '\n';
}

void write_train_csv(std::ostream& os, const TrainLog& log) {
    os << "step,lr,loss\n";
    for (std::size_t t = 0; t < log.step_loss.size(); ++t)
        os << t << ',' << log.step_lr[t] << ',' << log.step_loss[t] << '\n';
}

json train_summary_json(const TrainLog& log) {
    json j;
    j["steps_run"] = log.steps_run;
    j["final_train_loss"] = log.final_train_loss;
    j["final_train_acc"] = log.final_train_acc;
    j["diverged"] = log.diverged;
    j["final_alphas"] = log.final_alphas;
    j["epoch_train_acc"] = log.epoch_train_acc;
    if (!log.epoch_test_acc.empty()) j["epoch_test_acc"] = log.epoch_test_acc;
    j["epoch_seconds"] = log.epoch_seconds;
    j["alpha_per_epoch"] = log.alpha_per_epoch;
    return j;
}

json jacobian_report_to_json(const JacobianReport& rep, std::size_t block_index) {
    json j;
    j["block"] = block_index;
    j["raw_singular_values"] = rep.raw_singular_values;
    j["effective_singular_values"] = rep.effective_singular_values;
    if (rep.effective_residual)
        j["effective_residual"] = *rep.effective_residual;
    j["analytic_vs_fd_gap"] = rep.analytic_vs_fd_gap;
    j["zero_preactivation"] = rep.zero_preactivation;
    return j;
}

} // namespace resinit
