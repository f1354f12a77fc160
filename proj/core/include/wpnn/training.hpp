#pragma once

#include <functional>
#include <string>

#include "wpnn/data.hpp"
#include "wpnn/phylayers.hpp"

namespace wpnn::train {

enum class ChannelResample { PerBatch, PerEpoch, Fixed };

struct PatConfig {
    int epochs = 20;
    int batch_size = 128;
    double lr = 1e-3;
    ChannelResample channel_resample = ChannelResample::PerBatch;
    bool noise_during_training = true;
    double csi_error_var = 0.0;
    std::uint64_t seed = 0;

    void validate() const;
};

struct TrainHistory {
    std::vector<double> train_loss;     // one entry per epoch
    std::vector<double> eval_accuracy;  // empty if no eval set given
};

// Digital-twin gradient training: per step sample/reuse channels, forward
// with optional noise, softmax cross-entropy, Adam, constraint projection.
TrainHistory train_pat(phy::WpnnModel& model, const data::ImageDataset& train_set,
                       const data::ImageDataset* eval_set, const PatConfig& cfg);

// Accuracy over a dataset; channels are resampled per evaluation batch when
// the model has resampling layers, so test-time realizations are fresh.
double evaluate_accuracy(phy::WpnnModel& model, const data::ImageDataset& ds,
                         bool noise_on, std::uint64_t seed, int batch_size = 512,
                         double csi_error_var = 0.0);

struct SpsaConfig {
    int iterations = 1000;
    double a = 0.2;
    double c = 0.1;
    double big_a = 100.0;   // stability offset A in a_k = a/(k+1+A)^alpha
    double alpha = 0.602;
    double gamma = 0.101;
    std::uint64_t seed = 0;

    void validate() const;
};

// Two-measurement zeroth-order training on a black-box loss. The evaluator
// reports the loss at the parameters' current values; gradients are never
// requested. project, when given, runs after every update.
void train_ist_spsa(const std::vector<ad::Mat*>& params,
                    const std::function<double()>& loss_eval,
                    const SpsaConfig& cfg,
                    const std::function<void()>& project = {},
                    const std::function<void(int)>& pre_iteration = {});

// Convenience wrapper treating the noisy simulator itself as the platform:
// each measurement is the batch loss of a forward pass with noise on.
void train_ist_spsa_model(phy::WpnnModel& model,
                          const data::ImageDataset& train_set,
                          const SpsaConfig& cfg, int batch_size = 32,
                          ChannelResample resample = ChannelResample::Fixed);

struct EmulationResult {
    ad::CTensor gain;          // fitted physical gain, after scaling
    double residual_fro = 0.0; // ||G H - W*||_F of the unscaled fit
    double scale_applied = 1.0;
};

// Fits min_G ||G H - W*||_F via G = W* H^+, then scales to the power cap.
EmulationResult emulate_fc(const ad::CTensor& w_target,
                           const chan::ChannelRealization& h, double power_cap);

struct OfdmEmulation {
    ad::CTensor per_sub_weight;   // n_sub x 1, after scaling
    double residual = 0.0;        // time-domain response gap, Frobenius
    double scale_applied = 1.0;
    std::vector<int> unreachable; // subcarriers with (near) zero channel gain
};

// per_sub_weight[n] = DFT(padded kernel)[n] / channel_gain[n], scaled so
// sum |w|^2 <= p_max * n_sub.
OfdmEmulation emulate_ofdm_kernel(const Eigen::VectorXcd& kernel,
                                  const Eigen::VectorXcd& channel_gain,
                                  double p_max);

// --- digital reference networks (the "upper bound" scheme) -----------------

struct DigitalTrainConfig {
    int epochs = 20;
    int batch_size = 128;
    double lr = 1e-3;
    std::uint64_t seed = 0;
};

// depth hidden FC layers of width 32 with the odd PA-shaped activation.
struct DigitalFc {
    std::vector<ad::Mat> hidden;  // [0]: 32 x 784, then 32 x 32
    ad::Mat head;                 // 10 x 32
    ad::Mat head_bias;            // 10 x 1
    act::ActivationModel activation = act::Rapp{};
};

DigitalFc digital_reference_fc(int depth, const data::ImageDataset& train_set,
                               const DigitalTrainConfig& cfg,
                               TrainHistory* history = nullptr,
                               const data::ImageDataset* eval_set = nullptr);

Eigen::MatrixXd digital_fc_logits(const DigitalFc& net, const Eigen::MatrixXd& x);
double digital_fc_accuracy(const DigitalFc& net, const data::ImageDataset& ds);

// Small 1-D circular CNN: linear embed to a length-32 sequence, stem conv
// 1->32 (k=3), conv 32->32 (k=3), global average pooling, FC head.
struct DigitalCnn {
    int n_sub = 32;
    ad::Mat embed;     // 32 x 784
    ad::Mat stem;      // 32 x 3
    ad::Mat conv2;     // 32 x 96
    ad::Mat head;      // 10 x 32
    ad::Mat head_bias; // 10 x 1
    act::ActivationModel activation = act::Rapp{};
};

DigitalCnn digital_reference_cnn(const data::ImageDataset& train_set,
                                 const DigitalTrainConfig& cfg,
                                 TrainHistory* history = nullptr,
                                 const data::ImageDataset* eval_set = nullptr);

Eigen::MatrixXd digital_cnn_logits(const DigitalCnn& net, const Eigen::MatrixXd& x);
double digital_cnn_accuracy(const DigitalCnn& net, const data::ImageDataset& ds);

// --- checkpointing ----------------------------------------------------------

// Versioned text format: named tensors plus a caller-supplied config hash.
void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, ad::Mat*>>& tensors,
                     const std::string& config_hash);
void load_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, ad::Mat*>>& tensors,
                     std::string* config_hash = nullptr);

}  // namespace wpnn::train
