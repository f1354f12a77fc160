#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "wpnn/data.hpp"
#include "wpnn/training.hpp"

namespace wpnn::harness {

// Dataset location; empty dir falls back to $WPNN_DATA_DIR, then "./data".
struct DataConfig {
    std::string dir;
    bool subset = false;
    int subset_train = 20000;
    int subset_test = 2000;
};

// Relay-cascade image classifier study: accuracy versus hop count.
struct Fig3Config {
    std::vector<int> m_list{1, 2, 3, 4, 5};
    double snr_db = 30.0;
    int n_antennas = 32;
    double relay_power_cap = 2048.0;  // per-column relay transmit power budget
    int epochs = 10;
    int batch_size = 128;
    double lr = 1e-3;
};

// Metasurface-assisted OFDM conv layer study: accuracy versus transmit power.
struct Fig4Config {
    std::vector<double> pmax_dbw{-55, -50, -45, -40, -35, -30, -25, -20, -15, -10};
    std::vector<int> n_elems{40, 100};
    int n_sub = 32;
    int n_tx = 9;
    int n_rx = 64;
    double noise_sigma2 = 0.1;
    int epochs = 10;
    int batch_size = 128;
    double lr = 1e-3;
};

// Predicted versus measured output noise power for linear chains.
struct NoiseSweepConfig {
    int max_depth = 8;
    double layer_gain = 1.0;  // uniform per-layer gain factor
    int dim = 4;
    double sigma2 = 1e-3;
    int trials = 20000;
};

struct ExperimentConfig {
    std::string experiment = "fig3_relay";  // fig3_relay | fig4_ris_cnn | noise_sweep
    DataConfig data;
    Fig3Config fig3;
    Fig4Config fig4;
    NoiseSweepConfig noise;
    std::uint64_t seed = 0;
    std::string out_dir = ".";
};

// Strict parser: unknown keys anywhere in the tree are an error.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config_file(const std::string& path);

// Canonical IDX files from the resolved data directory; a missing file error
// names the fetch script. Applies unit-power normalization fitted on train.
std::pair<data::ImageDataset, data::ImageDataset>
load_fashion_mnist(const DataConfig& d);

// The relay-cascade classifier: digital encoder, m_hops relay stages over
// resampled Rayleigh channels with channel-inversion combining, receive
// combiner head. All runners and tests build the study model through this.
phy::WpnnModel build_relay_classifier(int m_hops,
                                      const act::ActivationModel& activation,
                                      const Fig3Config& cfg, std::uint64_t seed);

// Same architecture carrying a pretrained digital network's weights instead
// of trained ones (the training-free emulation scheme).
phy::WpnnModel build_relay_emulation(const train::DigitalFc& net,
                                     const Fig3Config& cfg, std::uint64_t seed);

// Each returns the complete CSV document (header + rows). Output is a pure
// function of the config, so identical configs give identical bytes.
std::string run_fig3(const ExperimentConfig& cfg);
std::string run_fig4(const ExperimentConfig& cfg);
std::string run_noise_sweep(const ExperimentConfig& cfg);

// Finite-difference check over every differentiable op; returns the largest
// relative error seen across all instances.
double gradcheck_max_rel_error(int instances_per_op = 100,
                               std::uint64_t seed = 0);

// Full command-line entry point. Exit 0 on success, 2 on usage errors,
// 3 on config parse errors, 1 on runtime failures.
int cli_main(int argc, char** argv);

}  // namespace wpnn::harness
