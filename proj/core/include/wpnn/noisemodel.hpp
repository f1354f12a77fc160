#pragma once

#include <string>
#include <vector>

#include "wpnn/phylayers.hpp"

namespace wpnn::noisemodel {

struct NoiseBudget {
    Eigen::VectorXd per_layer_contrib;
    double total = 0.0;
    std::string norm_used = "frobenius";
};

enum class NormMode { Frobenius, Spectral };

// Linear-regime output noise power for a chain W_L ... W_1 with white noise
// of variance sigmas[l] injected after layer l:
//   contrib[l] = sigmas[l] * ||W_L ... W_{l+1}||_F^2
// The empty product is the identity. With Frobenius norm this is exact;
// Spectral gives the per-direction upper bound instead.
NoiseBudget predicted_noise_power(const std::vector<ad::CTensor>& weights,
                                  const Eigen::VectorXd& sigmas,
                                  NormMode mode = NormMode::Frobenius);

// Empirical E||forward(0, noise on) - forward(0, noise off)||^2, measured at
// the pre-readout signal. Valid for nonlinear activations.
double monte_carlo_noise_power(const phy::WpnnModel& model, int trials,
                               RngStream& rng);

// Largest depth L whose linear-regime SNR stays strictly above the floor,
// with per-layer gain bounds norms[l] and noise variances sigmas[l].
// Returns 0 if even L = 1 fails; INT_MAX when no layer injects noise.
int depth_bound(const Eigen::VectorXd& norms, const Eigen::VectorXd& sigmas,
                double snr_floor_db, double signal_power);

}  // namespace wpnn::noisemodel
