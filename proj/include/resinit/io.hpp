#pragma once

#include <iosfwd>
#include <string>

#include "resinit/network.hpp"
#include "resinit/sigprop.hpp"
#include "resinit/train.hpp"

#include <json.hpp>

namespace resinit {

using json = nlohmann::json;

// Network config schema:
// {input_dim, spatial: [h, w]?, first_layer_out, first_layer_k?,
//  blocks: [{kind, n_in, n_mid, n_out, k1, k2, alpha, beta}],
//  pooling: "none"|"average", output_dim}
NetworkSpec network_spec_from_json(const json& j);
NetworkSpec network_spec_from_file(const std::string& path);
json network_spec_to_json(const NetworkSpec& net);

json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const json& j);

// Weight dump: scheme, spec, seed and center matrices as nested arrays, plus
// recorded submatrices when present.
json block_weights_to_json(const BlockWeights& w, const BlockSpec& spec,
                           const std::string& scheme, std::uint64_t seed);

// CSV writers. Columns are fixed:
//   norm:  scheme,L,width,mean,stderr,theory
//   cov:   layer,mean_cov,stderr,mean_corr,bound
//   lemma: rho,g,h,c,mc_mean,mc_stderr
//   train: step,lr,loss
void write_norm_csv(std::ostream& os, const std::string& scheme, std::size_t depth,
                    std::size_t width, const MeanStderr& mc, double theory);
void write_cov_csv(std::ostream& os, const CovTrace& trace, std::span<const double> bounds);
struct LemmaCsvRow {
    LemmaScanRow scan;
    MeanStderr mc;
};
void write_lemma_csv(std::ostream& os, std::span<const LemmaCsvRow> rows);
void write_train_csv(std::ostream& os, const TrainLog& log);
json train_summary_json(const TrainLog& log);
json jacobian_report_to_json(const JacobianReport& rep, std::size_t block_index);

} // namespace resinit
