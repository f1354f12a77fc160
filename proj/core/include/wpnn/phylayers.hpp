#pragma once

#include <variant>
#include <vector>

#include "wpnn/activation.hpp"
#include "wpnn/channel.hpp"
#include "wpnn/diffcore.hpp"

namespace wpnn::phy {

using ad::CTensor;
using ad::CVar;
using ad::Mat;
using ad::Var;

// Analog precoder + channel + combiner; emulates an FC layer over the air.
// With csi_inversion the combiner field holds the logical weight and the
// deployed combiner is combiner * mmse_equalizer(h_hat), so the layer keeps
// its trained map under resampled channels.
struct TransceiverLayer {
    CTensor precoder;  // n_tx x d_in
    CTensor combiner;  // d_out x n_rx
    Mat bias;          // d_out x 1 DC offsets, added to the real part
    double p_max = 1e12;
    // agc: transmit at exactly p_max per column instead of only capping
    bool agc = false;
    bool constant_modulus = false;
    chan::NoiseSpec noise;
    bool csi_inversion = false;
    // real_weights: only the real parts of precoder and combiner train; the
    // imaginary parts stay fixed (amplitude-only processing)
    bool real_weights = false;
    bool train_precoder = true;
    bool train_combiner = true;
    bool train_bias = true;
};

// Amplify-and-forward relay stage: activation(G (H x + n)) with a power cap
// on the post-gain signal. With csi_inversion, gain holds the logical weight
// W and the deployed gain is W * mmse_equalizer(h_hat).
struct RelayHop {
    CTensor gain;
    act::ActivationModel activation = act::Linear{};
    chan::NoiseSpec noise;
    double power_cap = 1e12;
    // agc: retransmit at exactly power_cap (the classical AF power budget
    // equality); otherwise the signal is only scaled down when it exceeds it
    bool agc = false;
    // PA input back-off, applied to the pre-activation signal; trainable as a
    // single scalar so the operating point can move much faster than the
    // elementwise gain scale
    Mat backoff = Mat::Ones(1, 1);
    bool train_backoff = false;
    bool csi_inversion = false;
    // real_weights: only the real part of gain trains (a variable-gain
    // amplifier bank rather than a full complex beamformer)
    bool real_weights = false;
    bool trainable = true;
};

// Field of passive tags; the superposed reflections give one scalar weight.
struct BackscatterField {
    CTensor gamma;  // m x 1 reflection coefficients, |gamma_k| <= 1
    Eigen::VectorXcd h_tx, h_rx;
    std::complex<double> direct{0.0, 0.0};
    chan::NoiseSpec noise;
    bool trainable = true;
};

// One metasurface panel: propagation into the panel, then the phase screen.
struct RisPanel {
    Mat theta;    // n_elems x 1 phases (radians)
    Mat amp;      // n_elems x 1 amplitudes, identically 1 when passive
    CTensor prop; // inter-layer propagation
};

// Stacked metasurface between a precoder and a combiner.
struct RisSimStack {
    std::vector<RisPanel> panels;
    bool active = false;
    double amp_max = 1.0;
    CTensor precoder, combiner;
    chan::NoiseSpec noise;
    bool trainable = true;
};

// Per-subcarrier multiplication; equals circular convolution in time.
struct OfdmConvLayer {
    int n_sub = 32;
    CTensor per_sub_weight;        // n_sub x 1
    Eigen::VectorXcd channel_gain; // n_sub
    int groups = 1;
    bool trainable = true;
};

using PhysicalLayer = std::variant<TransceiverLayer, RelayHop, BackscatterField,
                                   RisSimStack, OfdmConvLayer>;

enum class ReadoutRule { RealPart, Magnitude };

struct Readout {
    ReadoutRule rule = ReadoutRule::RealPart;
    Mat bias;  // n_classes x 1
    bool trainable = true;
};

// End-to-end classifier: ordered layers, one channel realization per layer
// (identity for in-device layers), readout to real logits.
struct WpnnModel {
    std::vector<PhysicalLayer> layers;
    std::vector<chan::ChannelRealization> channels;
    std::vector<chan::CsiEstimate> csi;       // aligned with channels
    std::vector<bool> resample;               // layers whose channel varies
    Readout readout;

    void push_layer(PhysicalLayer layer, chan::ChannelRealization channel,
                    bool resample_channel = false);
    void check_well_formed() const;
};

// Unit-magnitude DFT matrix, e^{-i 2 pi k n / N}; idft is its scaled inverse.
ad::CMat dft_matrix(int n);
ad::CMat idft_matrix(int n);

// The linear map a layer applies in the noiseless, activation-free regime.
CTensor effective_weight(const PhysicalLayer& layer,
                         const chan::ChannelRealization& channel,
                         const chan::CsiEstimate* csi = nullptr);

// Frequency-domain forward of one OFDM conv layer (value level).
Eigen::VectorXcd ofdm_conv_forward(const OfdmConvLayer& layer,
                                   const Eigen::VectorXcd& x_time);

// Projects all hardware constraints (power caps, constant modulus, passive
// amplitudes, |gamma| <= 1). Idempotent.
void project_constraints_inplace(PhysicalLayer& layer);
PhysicalLayer project_constraints(PhysicalLayer layer);
void project_all_constraints(WpnnModel& model);

// Average transmit power of a matrix under a white unit-per-entry input,
// i.e. its squared Frobenius norm.
double matrix_power(const CTensor& w);

// Tape forward of a single layer. Parameters become tape leaves; when
// track_grads is set, trainable ones require grad and are appended to
// param_leaves (in trainable_params order).
CVar forward_layer(ad::Tape& tape, const PhysicalLayer& layer,
                   const chan::ChannelRealization& channel,
                   const chan::CsiEstimate* csi, CVar x, bool noise_on,
                   RngStream* rng, bool track_grads = false,
                   std::vector<Var>* param_leaves = nullptr);

struct ForwardResult {
    Var logits;                    // real n_classes x B
    CVar signal;                   // final complex signal before readout
    std::vector<Var> param_leaves; // aligned with trainable_params(model)
};

ForwardResult forward_network(ad::Tape& tape, const WpnnModel& model,
                              const CTensor& x, bool noise_on, RngStream* rng,
                              bool track_grads = false);

// Trainable parameter storage, in the order forward_network binds leaves.
std::vector<Mat*> trainable_params(WpnnModel& model);

// Same enumeration with stable names, e.g. "layer2.gain.re".
std::vector<std::pair<std::string, Mat*>> named_trainable_params(WpnnModel& model);

// Resample every flagged channel (same shape, fresh Rayleigh draw) and
// refresh the CSI estimates with the given error variance.
void resample_channels(WpnnModel& model, RngStream& channel_rng,
                       RngStream& csi_rng, double csi_error_var);

int layer_input_dim(const PhysicalLayer& layer);
int layer_output_dim(const PhysicalLayer& layer);

}  // namespace wpnn::phy
