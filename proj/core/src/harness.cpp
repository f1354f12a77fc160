#include "wpnn/harness.hpp"

#include <chrono>
#include <cmath>
#include <complex>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "wpnn/noisemodel.hpp"

namespace wpnn::harness {

using ad::CTensor;
using ad::Mat;
using ad::Tape;
using ad::Var;
using nlohmann::json;

namespace {

std::string fmt(double v, const char* f = "%.6f") {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

double elapsed_s(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
        .count();
}

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& ctx) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed)
            if (it.key() == k) ok = true;
        if (!ok)
            throw std::invalid_argument("config: unknown key \"" + it.key() +
                                        "\" in " + ctx);
    }
}

void parse_data(const json& j, DataConfig& d) {
    check_keys(j, {"dir", "subset", "subset_train", "subset_test"}, "data");
    if (j.contains("dir")) d.dir = j["dir"].get<std::string>();
    if (j.contains("subset")) d.subset = j["subset"].get<bool>();
    if (j.contains("subset_train")) d.subset_train = j["subset_train"].get<int>();
    if (j.contains("subset_test")) d.subset_test = j["subset_test"].get<int>();
}

void parse_fig3(const json& j, Fig3Config& c) {
    check_keys(j,
               {"m_list", "snr_db", "n_antennas", "relay_power_cap", "epochs",
                "batch_size", "lr"},
               "fig3");
    if (j.contains("m_list")) c.m_list = j["m_list"].get<std::vector<int>>();
    if (j.contains("snr_db")) c.snr_db = j["snr_db"].get<double>();
    if (j.contains("n_antennas")) c.n_antennas = j["n_antennas"].get<int>();
    if (j.contains("relay_power_cap"))
        c.relay_power_cap = j["relay_power_cap"].get<double>();
    if (j.contains("epochs")) c.epochs = j["epochs"].get<int>();
    if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<int>();
    if (j.contains("lr")) c.lr = j["lr"].get<double>();
}

void parse_fig4(const json& j, Fig4Config& c) {
    check_keys(j,
               {"pmax_dbw", "n_elems", "n_sub", "n_tx", "n_rx", "noise_sigma2",
                "epochs", "batch_size", "lr"},
               "fig4");
    if (j.contains("pmax_dbw")) c.pmax_dbw = j["pmax_dbw"].get<std::vector<double>>();
    if (j.contains("n_elems")) c.n_elems = j["n_elems"].get<std::vector<int>>();
    if (j.contains("n_sub")) c.n_sub = j["n_sub"].get<int>();
    if (j.contains("n_tx")) c.n_tx = j["n_tx"].get<int>();
    if (j.contains("n_rx")) c.n_rx = j["n_rx"].get<int>();
    if (j.contains("noise_sigma2")) c.noise_sigma2 = j["noise_sigma2"].get<double>();
    if (j.contains("epochs")) c.epochs = j["epochs"].get<int>();
    if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<int>();
    if (j.contains("lr")) c.lr = j["lr"].get<double>();
}

void parse_noise(const json& j, NoiseSweepConfig& c) {
    check_keys(j, {"max_depth", "layer_gain", "dim", "sigma2", "trials"},
               "noise_sweep");
    if (j.contains("max_depth")) c.max_depth = j["max_depth"].get<int>();
    if (j.contains("layer_gain")) c.layer_gain = j["layer_gain"].get<double>();
    if (j.contains("dim")) c.dim = j["dim"].get<int>();
    if (j.contains("sigma2")) c.sigma2 = j["sigma2"].get<double>();
    if (j.contains("trials")) c.trials = j["trials"].get<int>();
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument(std::string("config: invalid JSON: ") + e.what());
    }
    ExperimentConfig cfg;
    check_keys(j, {"experiment", "seed", "out_dir", "data", "fig3", "fig4",
                   "noise_sweep"},
               "top level");
    if (j.contains("experiment")) {
        cfg.experiment = j["experiment"].get<std::string>();
        if (cfg.experiment != "fig3_relay" && cfg.experiment != "fig4_ris_cnn" &&
            cfg.experiment != "noise_sweep")
            throw std::invalid_argument("config: unknown experiment \"" +
                                        cfg.experiment + "\"");
    }
    if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("out_dir")) cfg.out_dir = j["out_dir"].get<std::string>();
    if (j.contains("data")) parse_data(j["data"], cfg.data);
    if (j.contains("fig3")) parse_fig3(j["fig3"], cfg.fig3);
    if (j.contains("fig4")) parse_fig4(j["fig4"], cfg.fig4);
    if (j.contains("noise_sweep")) parse_noise(j["noise_sweep"], cfg.noise);
    return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::invalid_argument("config: cannot open " + path);
    std::ostringstream buf;
    buf << f.rdbuf();
    return parse_config(buf.str());
}

std::pair<data::ImageDataset, data::ImageDataset>
load_fashion_mnist(const DataConfig& d) {
    std::string dir = d.dir;
    if (dir.empty()) {
        const char* env = std::getenv("WPNN_DATA_DIR");
        dir = env ? env : "data";
    }
    namespace fs = std::filesystem;
    const std::string names[4] = {"train-images-idx3-ubyte", "train-labels-idx1-ubyte",
                                  "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"};
    for (const auto& n : names)
        if (!fs::exists(fs::path(dir) / n))
            throw std::runtime_error(
                "dataset file missing: " + (fs::path(dir) / n).string() +
                "\nfetch it with: python3 tools/fetch_fashion_mnist.py --out " + dir);
    auto train = data::load_idx((fs::path(dir) / names[0]).string(),
                                (fs::path(dir) / names[1]).string(),
                                data::Split::Train);
    auto test = data::load_idx((fs::path(dir) / names[2]).string(),
                               (fs::path(dir) / names[3]).string(),
                               data::Split::Test);
    if (d.subset) {
        train = data::subset(train, d.subset_train);
        test = data::subset(test, d.subset_test);
    }
    data::Normalizer norm;
    norm.fit(train);
    norm.apply(train);
    norm.apply(test);
    return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------

namespace {

// Real Gaussian init with per-entry variance var and a zero imaginary part.
CTensor real_gaussian(Eigen::Index rows, Eigen::Index cols, double var,
                      RngStream& rng) {
    CTensor g = chan::complex_gaussian(rows, cols, 2.0 * var, rng);
    g.im.setZero();
    return g;
}

}  // namespace

phy::WpnnModel build_relay_classifier(int m_hops,
                                      const act::ActivationModel& activation,
                                      const Fig3Config& cfg, std::uint64_t seed) {
    if (m_hops < 1)
        throw std::invalid_argument("build_relay_classifier: need >= 1 hop");
    const int na = cfg.n_antennas;
    RngStream init(seed, "model-init");
    RngStream chrng(seed, "model-channels");

    phy::WpnnModel model;

    // trainable processing is real (amplitude gains); CSI inversion removes
    // the complex channel, so the cascade matches the real digital reference
    phy::TransceiverLayer enc;
    enc.precoder = real_gaussian(na, 784, 1.0 / 784.0, init);
    enc.combiner = CTensor::identity(na);
    enc.bias = Mat::Zero(na, 1);
    enc.p_max = cfg.relay_power_cap;
    enc.agc = true;  // the transmitter also sends at the full power budget
    enc.real_weights = true;
    enc.train_combiner = false;
    enc.train_bias = false;
    chan::ChannelRealization ident;
    ident.h = CTensor::identity(na);
    model.push_layer(enc, ident, false);

    // the source transmits through its own power amplifier, so even the
    // single-relay network has two saturating stages end to end
    phy::RelayHop src_pa;
    src_pa.gain = CTensor::identity(na);
    src_pa.activation = activation;
    src_pa.power_cap = cfg.relay_power_cap;
    src_pa.agc = true;
    src_pa.real_weights = true;
    if (!std::holds_alternative<act::Linear>(activation)) {
        src_pa.train_backoff = true;
        src_pa.backoff(0, 0) = 0.125;
    }
    model.push_layer(src_pa, ident, false);

    for (int i = 0; i < m_hops; ++i) {
        phy::RelayHop hop;
        hop.gain = real_gaussian(na, na, 1.0 / na, init);
        hop.activation = activation;
        hop.noise = chan::NoiseSpec::from_snr_db(cfg.snr_db);
        hop.power_cap = cfg.relay_power_cap;
        hop.agc = true;  // relays retransmit at the full power budget
        hop.real_weights = true;
        // with a matched PA model the trainable input back-off starts in the
        // mild-compression region; the idealized linear model is scale
        // invariant under the power control, so its back-off stays fixed and
        // its weights get deployed at full drive
        if (!std::holds_alternative<act::Linear>(activation)) {
            hop.train_backoff = true;
            hop.backoff(0, 0) = 0.125;
        }
        hop.csi_inversion = true;
        model.push_layer(hop, chan::sample_rayleigh(na, na, chrng), true);
    }

    phy::TransceiverLayer rx;
    rx.precoder = CTensor::identity(na);
    rx.train_precoder = false;
    rx.combiner = real_gaussian(10, na, 1.0 / na, init);
    rx.bias = Mat::Zero(10, 1);
    rx.real_weights = true;
    rx.noise = chan::NoiseSpec::from_snr_db(cfg.snr_db);
    rx.csi_inversion = true;
    model.push_layer(rx, chan::sample_rayleigh(na, na, chrng), true);

    model.readout.rule = phy::ReadoutRule::RealPart;
    model.readout.bias = Mat::Zero(10, 1);
    model.readout.trainable = false;
    return model;
}

phy::WpnnModel build_relay_emulation(const train::DigitalFc& net,
                                     const Fig3Config& cfg, std::uint64_t seed) {
    const int m = static_cast<int>(net.hidden.size());
    if (m < 1)
        throw std::invalid_argument("build_relay_emulation: empty digital net");
    const int na = cfg.n_antennas;
    if (net.hidden[0].rows() != na)
        throw std::invalid_argument("build_relay_emulation: width != n_antennas");
    RngStream chrng(seed, "model-channels");

    phy::WpnnModel model;

    phy::TransceiverLayer enc;
    enc.precoder = CTensor(net.hidden[0], Mat::Zero(na, 784));
    enc.combiner = CTensor::identity(na);
    enc.bias = Mat::Zero(na, 1);
    enc.train_precoder = false;
    enc.train_combiner = false;
    enc.train_bias = false;
    chan::ChannelRealization ident;
    ident.h = CTensor::identity(na);
    model.push_layer(enc, ident, false);

    // hop i carries the digital weight that follows activation i; the first
    // hop only applies the activation the encoder's own layer calls for
    for (int i = 0; i < m; ++i) {
        phy::RelayHop hop;
        hop.gain = i == 0 ? CTensor::identity(na)
                          : CTensor(net.hidden[i], Mat::Zero(na, na));
        hop.activation = net.activation;
        hop.noise = chan::NoiseSpec::from_snr_db(cfg.snr_db);
        hop.power_cap = cfg.relay_power_cap;
        hop.csi_inversion = true;
        hop.trainable = false;
        model.push_layer(hop, chan::sample_rayleigh(na, na, chrng), true);
    }

    phy::TransceiverLayer rx;
    rx.precoder = CTensor::identity(na);
    rx.combiner = CTensor(net.head, Mat::Zero(10, na));
    rx.bias = net.head_bias;
    rx.train_precoder = false;
    rx.train_combiner = false;
    rx.train_bias = false;
    rx.noise = chan::NoiseSpec::from_snr_db(cfg.snr_db);
    rx.csi_inversion = true;
    model.push_layer(rx, chan::sample_rayleigh(na, na, chrng), true);

    model.readout.rule = phy::ReadoutRule::RealPart;
    model.readout.bias = Mat::Zero(10, 1);
    model.readout.trainable = false;
    return model;
}

// ---------------------------------------------------------------------------

namespace {

const char* kCsvHeader =
    "experiment,sweep_param,sweep_value,scheme,accuracy,final_train_loss,seed\n";

void csv_row(std::ostringstream& out, const std::string& experiment,
             const std::string& param, const std::string& value,
             const std::string& scheme, double accuracy, const std::string& loss,
             std::uint64_t seed) {
    out << experiment << ',' << param << ',' << value << ',' << scheme << ','
        << fmt(accuracy) << ',' << loss << ',' << seed << '\n';
}

}  // namespace

std::string run_fig3(const ExperimentConfig& cfg) {
    auto t0 = std::chrono::steady_clock::now();
    auto [train_ds, test_ds] = load_fashion_mnist(cfg.data);
    const Fig3Config& f3 = cfg.fig3;
    std::ostringstream csv;
    csv << kCsvHeader;

    for (int m : f3.m_list) {
        train::DigitalTrainConfig dcfg{f3.epochs, f3.batch_size, f3.lr, cfg.seed};
        train::TrainHistory dhist;
        auto digital = train::digital_reference_fc(m, train_ds, dcfg, &dhist);
        double acc_ub = train::digital_fc_accuracy(digital, test_ds);
        csv_row(csv, "fig3_relay", "M", std::to_string(m), "upper_bound", acc_ub,
                fmt(dhist.train_loss.back()), cfg.seed);
        std::fprintf(stderr, "[fig3] M=%d upper_bound acc=%.4f (%.1fs)\n", m,
                     acc_ub, elapsed_s(t0));

        auto emu = build_relay_emulation(digital, f3, cfg.seed);
        double acc_em = train::evaluate_accuracy(emu, test_ds, true, cfg.seed);
        csv_row(csv, "fig3_relay", "M", std::to_string(m), "emulation", acc_em,
                "", cfg.seed);
        std::fprintf(stderr, "[fig3] M=%d emulation acc=%.4f (%.1fs)\n", m,
                     acc_em, elapsed_s(t0));

        train::PatConfig pcfg;
        pcfg.epochs = f3.epochs;
        pcfg.batch_size = f3.batch_size;
        pcfg.lr = f3.lr;
        pcfg.seed = cfg.seed;

        auto linear = build_relay_classifier(m, act::Linear{}, f3, cfg.seed);
        auto lhist = train::train_pat(linear, train_ds, nullptr, pcfg);
        double acc_lin = train::evaluate_accuracy(linear, test_ds, true, cfg.seed);
        csv_row(csv, "fig3_relay", "M", std::to_string(m), "linear_pa", acc_lin,
                fmt(lhist.train_loss.back()), cfg.seed);
        std::fprintf(stderr, "[fig3] M=%d linear_pa acc=%.4f (%.1fs)\n", m,
                     acc_lin, elapsed_s(t0));

        auto nonlinear = build_relay_classifier(m, act::Rapp{}, f3, cfg.seed);
        auto nhist = train::train_pat(nonlinear, train_ds, nullptr, pcfg);
        double acc_nl = train::evaluate_accuracy(nonlinear, test_ds, true, cfg.seed);
        csv_row(csv, "fig3_relay", "M", std::to_string(m), "nonlinear_pa", acc_nl,
                fmt(nhist.train_loss.back()), cfg.seed);
        std::fprintf(stderr, "[fig3] M=%d nonlinear_pa acc=%.4f (%.1fs)\n", m,
                     acc_nl, elapsed_s(t0));

        // the linear-trained model deployed on saturating amplifiers
        auto mismatched = linear;
        for (auto& layer : mismatched.layers)
            if (auto* hop = std::get_if<phy::RelayHop>(&layer))
                hop->activation = act::Rapp{};
        double acc_mm = train::evaluate_accuracy(mismatched, test_ds, true, cfg.seed);
        csv_row(csv, "fig3_relay", "M", std::to_string(m), "mismatched_pa",
                acc_mm, "", cfg.seed);
        std::fprintf(stderr, "[fig3] M=%d mismatched_pa acc=%.4f (%.1fs)\n", m,
                     acc_mm, elapsed_s(t0));
    }
    return csv.str();
}

// ---------------------------------------------------------------------------

namespace {

// Aggregate per-subcarrier gain of the metasurface-assisted link: element
// phases aligned at subcarrier 0, per-element delay taps give mild frequency
// selectivity, antenna arrays contribute sqrt(n_tx * n_rx).
Eigen::VectorXcd ris_subcarrier_gains(int n_elems, const Fig4Config& cfg,
                                      std::uint64_t seed) {
    RngStream rng = RngStream(seed, "ris-channel").split(
        static_cast<std::uint64_t>(n_elems));
    Eigen::VectorXcd g = Eigen::VectorXcd::Zero(cfg.n_sub);
    for (int e = 0; e < n_elems; ++e) {
        double mag = std::hypot(rng.normal(), rng.normal()) * std::numbers::sqrt2 / 2.0;
        int delay = static_cast<int>(rng.engine()() % 3);
        for (int n = 0; n < cfg.n_sub; ++n) {
            double ph = -2.0 * std::numbers::pi * n * delay / cfg.n_sub;
            g(n) += std::polar(mag, ph);
        }
    }
    return g * std::sqrt(static_cast<double>(cfg.n_tx * cfg.n_rx));
}

Mat cnn_pool_matrix(int n) {
    Mat gap = Mat::Zero(32, 32 * n);
    for (int c = 0; c < 32; ++c)
        for (int p = 0; p < n; ++p) gap(c, c * n + p) = 1.0 / n;
    return gap;
}

// Over-the-air second conv stage: the emulated response equals the digital
// kernel, receiver noise is amplified by the inverse of the power-cap scale.
Mat ota_cnn_logits(const train::DigitalCnn& net, const Mat& x, double noise_std,
                   RngStream& rng) {
    Tape tape;
    const int n = net.n_sub;
    Var h = tape.matmul_const(net.embed, tape.leaf(x, false));
    h = act::apply_odd_amam(
        tape, tape.circ_conv1d(h, tape.leaf(net.stem, false), n, 1, 32, 3),
        net.activation);
    Var y2 = tape.circ_conv1d(h, tape.leaf(net.conv2, false), n, 32, 32, 3);
    Mat y = tape.value(y2);
    for (Eigen::Index j = 0; j < y.cols(); ++j)
        for (Eigen::Index i = 0; i < y.rows(); ++i) y(i, j) += noise_std * rng.normal();
    y = y.unaryExpr(
        [&net](double v) { return act::odd_amam(v, net.activation); });
    Mat pooled = cnn_pool_matrix(n) * y;
    return (net.head * pooled).colwise() + net.head_bias.col(0);
}

// Averaged over a few noise realizations drawn from a stream shared by all
// sweep points, so curves at different noise levels see the same draws and
// the reported accuracy tracks its expectation.
double ota_cnn_accuracy(const train::DigitalCnn& net, const data::ImageDataset& ds,
                        double noise_std, std::uint64_t seed) {
    const int reps = 8;
    RngStream rng(seed, "ota-noise");
    auto batches = data::batch_indices(ds.size(), 512, seed, 0, false);
    Mat images;
    std::vector<int> labels;
    long correct = 0;
    for (int rep = 0; rep < reps; ++rep)
        for (const auto& batch : batches) {
            data::gather_batch(ds, batch, images, labels);
            Mat logits = ota_cnn_logits(net, images, noise_std, rng);
            for (Eigen::Index j = 0; j < logits.cols(); ++j) {
                Eigen::Index best;
                logits.col(j).maxCoeff(&best);
                if (static_cast<int>(best) == labels[static_cast<std::size_t>(j)])
                    ++correct;
            }
        }
    return static_cast<double>(correct) / static_cast<double>(ds.size() * reps);
}

}  // namespace

std::string run_fig4(const ExperimentConfig& cfg) {
    auto t0 = std::chrono::steady_clock::now();
    auto [train_ds, test_ds] = load_fashion_mnist(cfg.data);
    const Fig4Config& f4 = cfg.fig4;

    train::DigitalTrainConfig dcfg{f4.epochs, f4.batch_size, f4.lr, cfg.seed};
    auto net = train::digital_reference_cnn(train_ds, dcfg);
    double acc_dig = train::digital_cnn_accuracy(net, test_ds);
    std::fprintf(stderr, "[fig4] digital upper bound acc=%.4f (%.1fs)\n", acc_dig,
                 elapsed_s(t0));

    std::ostringstream csv;
    csv << kCsvHeader;
    for (double pdb : f4.pmax_dbw)
        csv_row(csv, "fig4_ris_cnn", "pmax_dbw", fmt(pdb, "%.2f"), "upper_bound",
                acc_dig, "", cfg.seed);

    for (int n_elems : f4.n_elems) {
        Eigen::VectorXcd g = ris_subcarrier_gains(n_elems, f4, cfg.seed);
        // total transmit power of the unscaled per-subcarrier weights,
        // summed over all 32x32 kernel links
        double ptot = 0.0;
        for (int o = 0; o < 32; ++o)
            for (int i = 0; i < 32; ++i) {
                Eigen::VectorXcd kernel =
                    net.conv2.row(o).segment(3 * i, 3).transpose().cast<std::complex<double>>();
                auto em = train::emulate_ofdm_kernel(kernel, g, 1e30);
                ptot += em.per_sub_weight.squared_norm();
            }
        std::string scheme = "ris_N" + std::to_string(n_elems);
        for (double pdb : f4.pmax_dbw) {
            double pmax = std::pow(10.0, pdb / 10.0);
            double s = ptot > pmax ? std::sqrt(pmax / ptot) : 1.0;
            double noise_std = std::sqrt(f4.noise_sigma2) / s;
            double acc = ota_cnn_accuracy(net, test_ds, noise_std, cfg.seed);
            csv_row(csv, "fig4_ris_cnn", "pmax_dbw", fmt(pdb, "%.2f"), scheme,
                    acc, "", cfg.seed);
            std::fprintf(stderr, "[fig4] N=%d pmax=%.1f dBW scale=%.3g acc=%.4f (%.1fs)\n",
                         n_elems, pdb, s, acc, elapsed_s(t0));
        }
    }
    return csv.str();
}

// ---------------------------------------------------------------------------

std::string run_noise_sweep(const ExperimentConfig& cfg) {
    const NoiseSweepConfig& ns = cfg.noise;
    if (ns.max_depth < 1 || ns.dim < 1 || ns.trials < 1)
        throw std::invalid_argument("noise_sweep: depth, dim, trials must be >= 1");
    std::ostringstream csv;
    csv << "experiment,depth,predicted,measured,rel_error,seed\n";
    const Mat wre = ns.layer_gain * Mat::Identity(ns.dim, ns.dim);

    for (int depth = 1; depth <= ns.max_depth; ++depth) {
        // relay noise enters before the hop's own gain, so the prediction
        // chain gets a leading identity stage to carry that injection point
        std::vector<CTensor> weights;
        Eigen::VectorXd sigmas = Eigen::VectorXd::Zero(depth + 1);
        weights.emplace_back(CTensor::identity(ns.dim));
        for (int l = 0; l < depth; ++l) {
            weights.emplace_back(wre, Mat::Zero(ns.dim, ns.dim));
            sigmas(l) = ns.sigma2;
        }
        auto budget = noisemodel::predicted_noise_power(weights, sigmas);

        phy::WpnnModel model;
        for (int l = 0; l < depth; ++l) {
            phy::RelayHop hop;
            hop.gain = CTensor(wre, Mat::Zero(ns.dim, ns.dim));
            hop.noise = chan::NoiseSpec::from_sigma2(ns.sigma2);
            hop.trainable = false;
            chan::ChannelRealization ident;
            ident.h = CTensor::identity(ns.dim);
            model.push_layer(hop, ident, false);
        }
        model.readout.bias = Mat::Zero(ns.dim, 1);
        model.readout.trainable = false;

        RngStream rng = RngStream(cfg.seed, "noise-mc").split(
            static_cast<std::uint64_t>(depth));
        double mc = noisemodel::monte_carlo_noise_power(model, ns.trials, rng);
        double rel = std::abs(mc - budget.total) / budget.total;
        csv << "noise_sweep," << depth << ',' << fmt(budget.total, "%.9e") << ','
            << fmt(mc, "%.9e") << ',' << fmt(rel, "%.6f") << ',' << cfg.seed
            << '\n';
    }
    return csv.str();
}

// ---------------------------------------------------------------------------

namespace {

// One finite-difference comparison: loss(inputs) built on a fresh tape per
// evaluation, analytic gradients against central differences on every entry.
class GradChecker {
public:
    explicit GradChecker(std::uint64_t seed) : rng_(seed, "gradcheck") {}

    double max_rel() const { return max_rel_; }
    const std::string& worst_op() const { return worst_op_; }

    Mat random(Eigen::Index r, Eigen::Index c, double offset = 0.0) {
        Mat m(r, c);
        for (Eigen::Index j = 0; j < c; ++j)
            for (Eigen::Index i = 0; i < r; ++i) {
                double v = rng_.normal();
                m(i, j) = v + (v >= 0.0 ? offset : -offset);
            }
        return m;
    }

    void check(const std::string& name, std::vector<Mat> inputs,
               const std::function<Var(Tape&, const std::vector<Var>&)>& build) {
        const double h = 1e-4;
        auto eval = [&](bool want_grads, std::vector<Mat>* grads) {
            Tape tape;
            std::vector<Var> leaves;
            leaves.reserve(inputs.size());
            for (const Mat& m : inputs) leaves.push_back(tape.leaf(m, want_grads));
            Var loss = build(tape, leaves);
            double v = tape.value(loss)(0, 0);
            if (want_grads) {
                tape.backward(loss);
                for (Var l : leaves) grads->push_back(tape.grad(l));
            }
            return v;
        };
        std::vector<Mat> analytic;
        eval(true, &analytic);
        for (std::size_t p = 0; p < inputs.size(); ++p) {
            Mat& m = inputs[p];
            for (Eigen::Index j = 0; j < m.cols(); ++j)
                for (Eigen::Index i = 0; i < m.rows(); ++i) {
                    double keep = m(i, j);
                    m(i, j) = keep + h;
                    double lp = eval(false, nullptr);
                    m(i, j) = keep - h;
                    double lm = eval(false, nullptr);
                    m(i, j) = keep;
                    double numeric = (lp - lm) / (2.0 * h);
                    double a = analytic[p](i, j);
                    double rel = std::abs(a - numeric) /
                                 std::max(1.0, std::abs(a) + std::abs(numeric));
                    if (rel > max_rel_) {
                        max_rel_ = rel;
                        worst_op_ = name;
                    }
                }
        }
    }

    RngStream& rng() { return rng_; }

private:
    RngStream rng_;
    double max_rel_ = 0.0;
    std::string worst_op_ = "none";
};

Var sq_loss(Tape& t, Var v) { return t.sum_sq(v); }
Var sq_loss(Tape& t, ad::CVar v) { return t.add(t.sum_sq(v.re), t.sum_sq(v.im)); }

}  // namespace

double gradcheck_max_rel_error(int instances_per_op, std::uint64_t seed) {
    GradChecker gc(seed);
    for (int it = 0; it < instances_per_op; ++it) {
        gc.check("add", {gc.random(2, 3), gc.random(2, 3)},
                 [](Tape& t, const std::vector<Var>& v) {
                     return sq_loss(t, t.add(v[0], v[1]));
                 });
        gc.check("sub", {gc.random(2, 3), gc.random(2, 3)},
                 [](Tape& t, const std::vector<Var>& v) {
                     return sq_loss(t, t.sub(v[0], v[1]));
                 });
        gc.check("neg", {gc.random(2, 3)},
                 [](Tape& t, const std::vector<Var>& v) {
                     return sq_loss(t, t.neg(v[0]));
                 });
        gc.check("mul", {gc.random(2, 3), gc.random(2, 3)},
                 [](Tape& t, const std::vector<Var>& v) {
                     return sq_loss(t, t.mul(v[0], v[1]));
                 });
        gc.check("matmul", {gc.random(2, 3), gc.random(3, 4)},
                 [](Tape& t, const std::vector<Var>& v) {
                     return sq_loss(t, t.matmul(v[0], v[1]));
                 });
        Mat cst = gc.random(2, 3);
        gc.check("matmul_const", {gc.random(3, 4)},
                 [&cst](Tape& t, const std::vector<Var>& v) {
                     return sq_loss(t, t.matmul_const(cst, v[0]));
                 });
        gc.check("scale", {gc.random(2, 3)},
                 [](Tape& t, const std::vector<Var>& v) {
                     return sq_loss(t, t.scale(v[0], -1.7));
                 });
        gc.check("add_const", {gc.random(2, 3)},
                 [&cst](Tape& t, const std::vector<Var>& v) {
                     return sq_loss(t, t.add_const(v[0], cst));
                 });
        gc.check("bias_cols", {gc.random(3, 4), gc.random(3, 1)},
                 [](Tape& t, const std::vector<Var>& v) {
                     return sq_loss(t, t.bias_cols(v[0], v[1]));
                 });
        gc.check("sum", {gc.random(2, 3)},
                 [](Tape& t, const std::vector<Var>& v) {
                     return sq_loss(t, t.sum(v[0]));
                 });
        gc.check("mean", {gc.random(2, 3)},
                 [](Tape& t, const std::vector<Var>& v) {
                     return sq_loss(t, t.mean(v[0]));
                 });
        gc.check("relu", {gc.random(2, 3, 0.3)},
                 [](Tape& t, const std::vector<Var>& v) {
                     return sq_loss(t, t.relu(v[0]));
                 });
        gc.check("leaky_relu", {gc.random(2, 3, 0.3)},
                 [](Tape& t, const std::vector<Var>& v) {
                     return sq_loss(t, t.leaky_relu(v[0], 0.1));
                 });
        gc.check("mul_scalar", {gc.random(1, 1), gc.random(2, 3)},
                 [](Tape& t, const std::vector<Var>& v) {
                     return sq_loss(t, t.mul_scalar(v[0], v[1]));
                 });
        gc.check("colwise_mul", {gc.random(3, 4), gc.random(3, 1)},
                 [](Tape& t, const std::vector<Var>& v) {
                     return sq_loss(t, t.colwise_mul(v[0], v[1]));
                 });
        gc.check("unary_exp", {gc.random(2, 3)},
                 [](Tape& t, const std::vector<Var>& v) {
                     Var u = t.unary(v[0], [](double x) { return std::exp(x); },
                                     [](double x) { return std::exp(x); });
                     return sq_loss(t, u);
                 });
        std::vector<int> labels(5);
        for (int& l : labels)
            l = static_cast<int>(gc.rng().engine()() % 4);
        gc.check("softmax_xent", {gc.random(4, 5)},
                 [&labels](Tape& t, const std::vector<Var>& v) {
                     return t.softmax_xent(v[0], labels);
                 });
        gc.check("circ_conv1d", {gc.random(2 * 5, 3), gc.random(2, 2 * 3)},
                 [](Tape& t, const std::vector<Var>& v) {
                     return sq_loss(t, t.circ_conv1d(v[0], v[1], 5, 2, 2, 3));
                 });
        gc.check("cmatmul", {gc.random(2, 3), gc.random(2, 3), gc.random(3, 4),
                             gc.random(3, 4)},
                 [](Tape& t, const std::vector<Var>& v) {
                     return sq_loss(t, t.cmatmul({v[0], v[1]}, {v[2], v[3]}));
                 });
        gc.check("cmul", {gc.random(2, 3), gc.random(2, 3), gc.random(2, 3),
                          gc.random(2, 3)},
                 [](Tape& t, const std::vector<Var>& v) {
                     return sq_loss(t, t.cmul({v[0], v[1]}, {v[2], v[3]}));
                 });
        gc.check("ccolwise_mul", {gc.random(3, 4), gc.random(3, 4),
                                  gc.random(3, 1), gc.random(3, 1)},
                 [](Tape& t, const std::vector<Var>& v) {
                     return sq_loss(t, t.ccolwise_mul({v[0], v[1]}, {v[2], v[3]}));
                 });
        gc.check("cscale", {gc.random(2, 3), gc.random(2, 3)},
                 [](Tape& t, const std::vector<Var>& v) {
                     return sq_loss(t, t.cscale({v[0], v[1]}, {0.3, -1.1}));
                 });
        gc.check("act_rapp", {gc.random(2, 3, 0.2), gc.random(2, 3, 0.2)},
                 [](Tape& t, const std::vector<Var>& v) {
                     return sq_loss(t,
                                    act::apply_activation(t, {v[0], v[1]},
                                                          act::Rapp{1.0, 2.0}));
                 });
        gc.check("act_saleh", {gc.random(2, 3, 0.2), gc.random(2, 3, 0.2)},
                 [](Tape& t, const std::vector<Var>& v) {
                     return sq_loss(t, act::apply_activation(t, {v[0], v[1]},
                                                             act::Saleh{}));
                 });
        gc.check("act_clip", {gc.random(2, 3, 0.2), gc.random(2, 3, 0.2)},
                 [](Tape& t, const std::vector<Var>& v) {
                     // random magnitudes sit away from the clip boundary
                     return sq_loss(t, act::apply_activation(
                                           t, {v[0], v[1]}, act::EnvelopeClip{10.0}));
                 });
        gc.check("odd_rapp", {gc.random(2, 3, 0.2)},
                 [](Tape& t, const std::vector<Var>& v) {
                     return sq_loss(
                         t, act::apply_odd_amam(t, v[0], act::Rapp{1.0, 2.0}));
                 });
    }
    return gc.max_rel();
}

// ---------------------------------------------------------------------------

namespace {

void write_text(const std::string& dir, const std::string& name,
                const std::string& text) {
    std::filesystem::create_directories(dir);
    std::string path = (std::filesystem::path(dir) / name).string();
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << text;
    std::fprintf(stderr, "wrote %s\n", path.c_str());
}

int run_train_command(const ExperimentConfig& cfg) {
    auto [train_ds, test_ds] = load_fashion_mnist(cfg.data);
    int m = cfg.fig3.m_list.front();
    auto model = build_relay_classifier(m, act::Rapp{}, cfg.fig3, cfg.seed);
    train::PatConfig pcfg;
    pcfg.epochs = cfg.fig3.epochs;
    pcfg.batch_size = cfg.fig3.batch_size;
    pcfg.lr = cfg.fig3.lr;
    pcfg.seed = cfg.seed;
    auto hist = train::train_pat(model, train_ds, nullptr, pcfg);
    double acc = train::evaluate_accuracy(model, test_ds, true, cfg.seed);
    std::filesystem::create_directories(cfg.out_dir);
    auto named = phy::named_trainable_params(model);
    std::string ckpt =
        (std::filesystem::path(cfg.out_dir) / "model.ckpt").string();
    train::save_checkpoint(ckpt, named, "fig3-relay-m" + std::to_string(m));
    std::printf("train: M=%d final_loss=%.6f test_accuracy=%.4f checkpoint=%s\n",
                m, hist.train_loss.back(), acc, ckpt.c_str());
    return 0;
}

int run_emulate_command(const ExperimentConfig& cfg) {
    auto [train_ds, test_ds] = load_fashion_mnist(cfg.data);
    std::ostringstream csv;
    csv << kCsvHeader;
    for (int m : cfg.fig3.m_list) {
        train::DigitalTrainConfig dcfg{cfg.fig3.epochs, cfg.fig3.batch_size,
                                       cfg.fig3.lr, cfg.seed};
        auto digital = train::digital_reference_fc(m, train_ds, dcfg);
        auto emu = build_relay_emulation(digital, cfg.fig3, cfg.seed);
        double acc = train::evaluate_accuracy(emu, test_ds, true, cfg.seed);
        csv_row(csv, "emulate", "M", std::to_string(m), "emulation", acc, "",
                cfg.seed);
        std::printf("emulate: M=%d accuracy=%.4f\n", m, acc);
    }
    write_text(cfg.out_dir, "emulation.csv", csv.str());
    return 0;
}

}  // namespace

int cli_main(int argc, char** argv) {
    CLI::App app{"wireless physical neural network experiment runner"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path, out_dir, data_dir;
    long long seed = -1;
    bool subset = false;
    app.add_option("--config", config_path, "experiment config file (JSON)");
    app.add_option("--seed", seed, "seed override");
    app.add_option("--out", out_dir, "output directory override");
    app.add_option("--data", data_dir, "dataset directory override");
    app.add_flag("--subset", subset, "fast run on a dataset subset");

    auto* cmd_train = app.add_subcommand("train", "train the relay classifier");
    auto* cmd_emulate =
        app.add_subcommand("emulate", "deploy a pretrained digital network");
    auto* cmd_reproduce =
        app.add_subcommand("reproduce", "run a full case study sweep");
    std::string figure;
    cmd_reproduce->add_option("figure", figure, "fig3 or fig4")->required();
    auto* cmd_noise = app.add_subcommand("noise-sweep",
                                         "predicted vs measured output noise");
    auto* cmd_gradcheck =
        app.add_subcommand("gradcheck", "finite-difference gradient audit");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    ExperimentConfig cfg;
    if (!config_path.empty()) {
        try {
            cfg = load_config_file(config_path);
        } catch (const std::exception& e) {
            std::fprintf(stderr, "error: %s\n", e.what());
            return 3;
        }
    }
    if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (!data_dir.empty()) cfg.data.dir = data_dir;
    if (subset) cfg.data.subset = true;

    try {
        if (cmd_gradcheck->parsed()) {
            double err = gradcheck_max_rel_error(100, cfg.seed);
            std::printf("gradcheck: max relative error %.3e over all ops\n", err);
            return err <= 1e-5 ? 0 : 1;
        }
        if (cmd_noise->parsed()) {
            write_text(cfg.out_dir, "noise_sweep.csv", run_noise_sweep(cfg));
            return 0;
        }
        if (cmd_reproduce->parsed()) {
            if (figure == "fig3") {
                write_text(cfg.out_dir, "fig3.csv", run_fig3(cfg));
                return 0;
            }
            if (figure == "fig4") {
                write_text(cfg.out_dir, "fig4.csv", run_fig4(cfg));
                return 0;
            }
            std::fprintf(stderr, "error: unknown figure \"%s\" (want fig3 or fig4)\n",
                         figure.c_str());
            return 2;
        }
        if (cmd_train->parsed()) return run_train_command(cfg);
        if (cmd_emulate->parsed()) return run_emulate_command(cfg);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}

}  // namespace wpnn::harness
