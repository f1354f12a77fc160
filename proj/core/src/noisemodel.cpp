#include "wpnn/noisemodel.hpp"

#include <Eigen/SVD>
#include <climits>
#include <cmath>
#include <stdexcept>

namespace wpnn::noisemodel {

namespace {

double squared_norm(const ad::CMat& m, NormMode mode) {
    if (mode == NormMode::Frobenius) return m.squaredNorm();
    Eigen::JacobiSVD<ad::CMat> svd(m);
    double s = svd.singularValues()(0);
    return s * s;
}

}  // namespace

NoiseBudget predicted_noise_power(const std::vector<ad::CTensor>& weights,
                                  const Eigen::VectorXd& sigmas, NormMode mode) {
    const auto depth = static_cast<Eigen::Index>(weights.size());
    if (sigmas.size() != depth)
        throw std::invalid_argument("predicted_noise_power: one sigma per layer");
    for (Eigen::Index l = 0; l + 1 < depth; ++l)
        if (weights[static_cast<std::size_t>(l + 1)].cols() !=
            weights[static_cast<std::size_t>(l)].rows())
            throw std::invalid_argument("predicted_noise_power: chain dimension mismatch");
    for (Eigen::Index l = 0; l < depth; ++l)
        if (sigmas(l) < 0.0)
            throw std::invalid_argument("predicted_noise_power: negative variance");

    NoiseBudget budget;
    budget.per_layer_contrib = Eigen::VectorXd::Zero(depth);
    budget.norm_used = mode == NormMode::Frobenius ? "frobenius" : "spectral";
    // suffix products W_L ... W_{l+1}, built from the top down
    Eigen::Index d_out = depth > 0 ? weights.back().rows() : 0;
    ad::CMat suffix = ad::CMat::Identity(d_out, d_out);
    for (Eigen::Index l = depth - 1; l >= 0; --l) {
        budget.per_layer_contrib(l) = sigmas(l) * squared_norm(suffix, mode);
        suffix = suffix * weights[static_cast<std::size_t>(l)].complex();
    }
    budget.total = budget.per_layer_contrib.sum();
    return budget;
}

double monte_carlo_noise_power(const phy::WpnnModel& model, int trials,
                               RngStream& rng) {
    if (trials < 1)
        throw std::invalid_argument("monte_carlo_noise_power: trials must be >= 1");
    model.check_well_formed();
    int d_in = phy::layer_input_dim(model.layers.front());
    if (d_in < 1)
        throw std::invalid_argument("monte_carlo_noise_power: ambiguous input dim");

    // noiseless reference for a single zero column
    ad::CTensor zero_col = ad::CTensor::zero(d_in, 1);
    ad::Tape ref_tape;
    auto ref = phy::forward_network(ref_tape, model, zero_col, false, nullptr);
    ad::CTensor y0 = ref_tape.value(ref.signal);

    double acc = 0.0;
    const int chunk = 4096;
    for (int done = 0; done < trials;) {
        int b = std::min(chunk, trials - done);
        ad::Tape tape;
        ad::CTensor zeros = ad::CTensor::zero(d_in, b);
        auto out = phy::forward_network(tape, model, zeros, true, &rng);
        ad::CTensor y = tape.value(out.signal);
        for (int j = 0; j < b; ++j) {
            double s = (y.re.col(j) - y0.re.col(0)).squaredNorm() +
                       (y.im.col(j) - y0.im.col(0)).squaredNorm();
            acc += s;
        }
        done += b;
    }
    return acc / static_cast<double>(trials);
}

int depth_bound(const Eigen::VectorXd& norms, const Eigen::VectorXd& sigmas,
                double snr_floor_db, double signal_power) {
    if (norms.size() != sigmas.size())
        throw std::invalid_argument("depth_bound: norms/sigmas length mismatch");
    for (Eigen::Index l = 0; l < norms.size(); ++l)
        if (norms(l) <= 0.0)
            throw std::invalid_argument("depth_bound: norms must be positive");
    if (norms.size() == 0) return 0;
    if (sigmas.maxCoeff() == 0.0) return INT_MAX;

    double floor_lin = std::pow(10.0, snr_floor_db / 10.0);
    int best = 0;
    double total = 0.0;
    for (Eigen::Index depth = 1; depth <= norms.size(); ++depth) {
        double g = norms(depth - 1) * norms(depth - 1);
        total = total * g + sigmas(depth - 1);
        if (total == 0.0 || signal_power / total > floor_lin)
            best = static_cast<int>(depth);
    }
    return best;
}

}  // namespace wpnn::noisemodel
