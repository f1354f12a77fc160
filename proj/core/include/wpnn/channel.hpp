#pragma once

#include <optional>

#include "wpnn/diffcore.hpp"
#include "wpnn/rng.hpp"

namespace wpnn::chan {

// Sampled channel matrix with a linear path-loss power scale.
struct ChannelRealization {
    ad::CTensor h;  // n_rx x n_tx complex gains
    double pathloss = 1.0;
    long coherence_id = 0;
};

// Per-entry complex noise variance, linear power. When constructed from an
// SNR the signal power is taken as 1.
struct NoiseSpec {
    double sigma2 = 0.0;
    std::optional<double> snr_db;

    static NoiseSpec from_sigma2(double s2);
    static NoiseSpec from_snr_db(double db);
    static NoiseSpec off() { return {}; }
};

struct CsiEstimate {
    ad::CTensor h_hat;
    double error_var = 0.0;
};

// i.i.d. CN(0,1) matrix scaled to var_per_entry (0.5 per real component).
ad::CTensor complex_gaussian(Eigen::Index rows, Eigen::Index cols,
                             double var_per_entry, RngStream& rng);

// i.i.d. Rayleigh fading, per-entry variance 1, pathloss 1.
ChannelRealization sample_rayleigh(int n_rx, int n_tx, RngStream& rng);

// Adds complex Gaussian noise of per-entry variance spec.sigma2.
ad::CTensor awgn(const ad::CTensor& x, const NoiseSpec& spec, RngStream& rng);

// Least-squares estimate from n_pilots orthogonal pilots at pilot_power;
// per-entry error variance is sigma2 / (pilot_power * n_pilots).
CsiEstimate estimate_csi_ls(const ChannelRealization& h_true, double pilot_power,
                            int n_pilots, const NoiseSpec& spec, RngStream& rng);

// Direct error-injection shortcut with the given per-entry error variance.
CsiEstimate corrupt_csi(const ChannelRealization& h_true, double error_var,
                        RngStream& rng);

// MMSE-regularized channel inverse (H^H H + lambda I)^-1 H^H. With
// lambda = 0 this is the pseudo-inverse.
ad::CTensor mmse_equalizer(const ad::CTensor& h_hat, double noise_var);

}  // namespace wpnn::chan
