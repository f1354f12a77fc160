#include "wpnn/channel.hpp"

#include <cmath>
#include <stdexcept>

namespace wpnn::chan {

NoiseSpec NoiseSpec::from_sigma2(double s2) {
    if (s2 < 0.0) throw std::invalid_argument("NoiseSpec: sigma2 must be >= 0");
    NoiseSpec s;
    s.sigma2 = s2;
    return s;
}

NoiseSpec NoiseSpec::from_snr_db(double db) {
    NoiseSpec s;
    s.snr_db = db;
    s.sigma2 = std::pow(10.0, -db / 10.0);
    return s;
}

ad::CTensor complex_gaussian(Eigen::Index rows, Eigen::Index cols,
                             double var_per_entry, RngStream& rng) {
    if (var_per_entry < 0.0)
        throw std::invalid_argument("complex_gaussian: variance must be >= 0");
    ad::CTensor z = ad::CTensor::zero(rows, cols);
    double s = std::sqrt(var_per_entry / 2.0);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) {
            z.re(i, j) = s * rng.normal();
            z.im(i, j) = s * rng.normal();
        }
    return z;
}

ChannelRealization sample_rayleigh(int n_rx, int n_tx, RngStream& rng) {
    if (n_rx < 1 || n_tx < 1)
        throw std::invalid_argument("sample_rayleigh: dimensions must be >= 1");
    ChannelRealization c;
    c.h = complex_gaussian(n_rx, n_tx, 1.0, rng);
    c.pathloss = 1.0;
    return c;
}

ad::CTensor awgn(const ad::CTensor& x, const NoiseSpec& spec, RngStream& rng) {
    if (spec.sigma2 < 0.0) throw std::invalid_argument("awgn: sigma2 must be >= 0");
    if (spec.sigma2 == 0.0) return x;
    ad::CTensor n = complex_gaussian(x.rows(), x.cols(), spec.sigma2, rng);
    return {x.re + n.re, x.im + n.im};
}

CsiEstimate estimate_csi_ls(const ChannelRealization& h_true, double pilot_power,
                            int n_pilots, const NoiseSpec& spec, RngStream& rng) {
    if (pilot_power <= 0.0)
        throw std::invalid_argument("estimate_csi_ls: pilot_power must be > 0");
    if (n_pilots < h_true.h.cols())
        throw std::invalid_argument(
            "estimate_csi_ls: under-determined, need n_pilots >= n_tx");
    double err_var = spec.sigma2 / (pilot_power * static_cast<double>(n_pilots));
    CsiEstimate est;
    est.error_var = err_var;
    if (err_var == 0.0) {
        est.h_hat = h_true.h;
        return est;
    }
    ad::CTensor e = complex_gaussian(h_true.h.rows(), h_true.h.cols(), err_var, rng);
    est.h_hat = {h_true.h.re + e.re, h_true.h.im + e.im};
    return est;
}

CsiEstimate corrupt_csi(const ChannelRealization& h_true, double error_var,
                        RngStream& rng) {
    if (error_var < 0.0)
        throw std::invalid_argument("corrupt_csi: error_var must be >= 0");
    CsiEstimate est;
    est.error_var = error_var;
    if (error_var == 0.0) {
        est.h_hat = h_true.h;
        return est;
    }
    ad::CTensor e = complex_gaussian(h_true.h.rows(), h_true.h.cols(), error_var, rng);
    est.h_hat = {h_true.h.re + e.re, h_true.h.im + e.im};
    return est;
}

ad::CTensor mmse_equalizer(const ad::CTensor& h_hat, double noise_var) {
    ad::CMat h = h_hat.complex();
    if (noise_var <= 0.0) {
        Eigen::CompleteOrthogonalDecomposition<ad::CMat> cod(h);
        return ad::CTensor(ad::CMat(cod.pseudoInverse()));
    }
    ad::CMat gram = h.adjoint() * h;
    gram.diagonal().array() += noise_var;
    ad::CMat eq = gram.ldlt().solve(h.adjoint());
    return ad::CTensor(eq);
}

}  // namespace wpnn::chan
