#include "wpnn/training.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace wpnn::train {

using ad::CTensor;
using ad::Mat;
using ad::Tape;
using ad::Var;

namespace {

int argmax_col(const Mat& m, Eigen::Index col) {
    Eigen::Index best;
    m.col(col).maxCoeff(&best);
    return static_cast<int>(best);
}

// Layer index of the first non-finite intermediate signal, -1 if clean.
int first_nonfinite_layer(const phy::WpnnModel& model, const CTensor& x) {
    Tape tape;
    ad::CVar s = tape.leaf(x, false);
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        s = phy::forward_layer(tape, model.layers[i], model.channels[i],
                               &model.csi[i], s, false, nullptr);
        if (!tape.value(s.re).allFinite() || !tape.value(s.im).allFinite())
            return static_cast<int>(i);
    }
    return -1;
}

}  // namespace

void PatConfig::validate() const {
    if (epochs < 0) throw std::invalid_argument("PatConfig: epochs must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("PatConfig: batch_size must be >= 1");
    if (lr <= 0.0) throw std::invalid_argument("PatConfig: lr must be > 0");
    if (csi_error_var < 0.0)
        throw std::invalid_argument("PatConfig: csi_error_var must be >= 0");
}

TrainHistory train_pat(phy::WpnnModel& model, const data::ImageDataset& train_set,
                       const data::ImageDataset* eval_set, const PatConfig& cfg) {
    cfg.validate();
    model.check_well_formed();
    if (train_set.size() == 0)
        throw std::invalid_argument("train_pat: empty training set");

    TrainHistory history;
    if (cfg.epochs == 0) return history;

    RngStream channel_rng(cfg.seed, "channel");
    RngStream noise_rng(cfg.seed, "noise");
    RngStream csi_rng(cfg.seed, "csi");

    std::vector<Mat*> params = phy::trainable_params(model);
    ad::AdamState adam;

    Mat images;
    std::vector<int> labels;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (cfg.channel_resample == ChannelResample::PerEpoch)
            phy::resample_channels(model, channel_rng, csi_rng, cfg.csi_error_var);
        auto batches = data::batch_indices(train_set.size(), cfg.batch_size,
                                           cfg.seed, epoch);
        double loss_acc = 0.0;
        for (const auto& batch : batches) {
            if (cfg.channel_resample == ChannelResample::PerBatch)
                phy::resample_channels(model, channel_rng, csi_rng,
                                       cfg.csi_error_var);
            data::gather_batch(train_set, batch, images, labels);
            CTensor x(images, Mat::Zero(images.rows(), images.cols()));

            Tape tape;
            auto fwd = phy::forward_network(tape, model, x,
                                            cfg.noise_during_training,
                                            &noise_rng, true);
            Var loss = tape.softmax_xent(fwd.logits, labels);
            double loss_v = tape.value(loss)(0, 0);
            if (!std::isfinite(loss_v)) {
                int bad = first_nonfinite_layer(model, x);
                throw std::runtime_error(
                    "train_pat: non-finite loss at epoch " + std::to_string(epoch) +
                    ", first non-finite signal at layer " + std::to_string(bad));
            }
            loss_acc += loss_v;
            tape.backward(loss);

            std::vector<Mat> grads;
            grads.reserve(fwd.param_leaves.size());
            for (Var v : fwd.param_leaves) grads.push_back(tape.grad(v));
            if (grads.size() != params.size())
                throw std::logic_error("train_pat: leaf/parameter count mismatch");
            ad::adam_step(params, grads, adam, cfg.lr);
            phy::project_all_constraints(model);
        }
        history.train_loss.push_back(loss_acc / static_cast<double>(batches.size()));
        if (eval_set)
            history.eval_accuracy.push_back(evaluate_accuracy(
                model, *eval_set, cfg.noise_during_training,
                cfg.seed + 0x5eed, 512, cfg.csi_error_var));
    }
    return history;
}

double evaluate_accuracy(phy::WpnnModel& model, const data::ImageDataset& ds,
                         bool noise_on, std::uint64_t seed, int batch_size,
                         double csi_error_var) {
    RngStream channel_rng(seed, "eval-channel");
    RngStream noise_rng(seed, "eval-noise");
    RngStream csi_rng(seed, "eval-csi");
    auto batches = data::batch_indices(ds.size(), batch_size, seed, 0, false);
    Mat images;
    std::vector<int> labels;
    long correct = 0;
    for (const auto& batch : batches) {
        phy::resample_channels(model, channel_rng, csi_rng, csi_error_var);
        data::gather_batch(ds, batch, images, labels);
        CTensor x(images, Mat::Zero(images.rows(), images.cols()));
        Tape tape;
        auto fwd = phy::forward_network(tape, model, x, noise_on, &noise_rng);
        const Mat& logits = tape.value(fwd.logits);
        for (Eigen::Index j = 0; j < logits.cols(); ++j)
            if (argmax_col(logits, j) == labels[static_cast<std::size_t>(j)])
                ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(ds.size());
}

// ---------------------------------------------------------------------------

void SpsaConfig::validate() const {
    if (iterations < 0) throw std::invalid_argument("SpsaConfig: iterations >= 0");
    if (c <= 0.0) throw std::invalid_argument("SpsaConfig: c must be > 0");
    if (alpha <= 0.5 || alpha > 1.0)
        throw std::invalid_argument("SpsaConfig: alpha must lie in (0.5, 1]");
    if (gamma <= 0.0 || gamma > 0.5)
        throw std::invalid_argument("SpsaConfig: gamma must lie in (0, 0.5]");
}

void train_ist_spsa(const std::vector<Mat*>& params,
                    const std::function<double()>& loss_eval,
                    const SpsaConfig& cfg, const std::function<void()>& project,
                    const std::function<void(int)>& pre_iteration) {
    cfg.validate();
    RngStream rng(cfg.seed, "spsa");
    std::vector<Mat> delta(params.size());
    for (int k = 0; k < cfg.iterations; ++k) {
        if (pre_iteration) pre_iteration(k);
        double ak = cfg.a / std::pow(k + 1.0 + cfg.big_a, cfg.alpha);
        double ck = cfg.c / std::pow(k + 1.0, cfg.gamma);
        for (std::size_t i = 0; i < params.size(); ++i) {
            delta[i].resize(params[i]->rows(), params[i]->cols());
            for (Eigen::Index c2 = 0; c2 < delta[i].cols(); ++c2)
                for (Eigen::Index r = 0; r < delta[i].rows(); ++r)
                    delta[i](r, c2) = static_cast<double>(rng.bernoulli_sign());
        }
        for (std::size_t i = 0; i < params.size(); ++i)
            *params[i] += ck * delta[i];
        double lp = loss_eval();
        for (std::size_t i = 0; i < params.size(); ++i)
            *params[i] -= 2.0 * ck * delta[i];
        double lm = loss_eval();
        for (std::size_t i = 0; i < params.size(); ++i)
            *params[i] += ck * delta[i];

        double diff = (lp - lm) / (2.0 * ck);
        for (std::size_t i = 0; i < params.size(); ++i)
            *params[i] -= (ak * diff) * delta[i];  // delta^-1 == delta for +-1
        if (project) project();
    }
}

void train_ist_spsa_model(phy::WpnnModel& model,
                          const data::ImageDataset& train_set,
                          const SpsaConfig& cfg, int batch_size,
                          ChannelResample resample) {
    model.check_well_formed();
    RngStream channel_rng(cfg.seed, "channel");
    RngStream noise_rng(cfg.seed, "noise");
    RngStream csi_rng(cfg.seed, "csi");
    auto all_batches = data::batch_indices(train_set.size(), batch_size, cfg.seed, 0);
    std::vector<Mat*> params = phy::trainable_params(model);

    Mat images;
    std::vector<int> labels;
    CTensor x;
    auto loss_eval = [&]() {
        Tape tape;
        auto fwd = phy::forward_network(tape, model, x, true, &noise_rng);
        Var loss = tape.softmax_xent(fwd.logits, labels);
        return tape.value(loss)(0, 0);
    };
    auto pre_iteration = [&](int k) {
        const auto& batch = all_batches[static_cast<std::size_t>(k) % all_batches.size()];
        data::gather_batch(train_set, batch, images, labels);
        x = CTensor(images, Mat::Zero(images.rows(), images.cols()));
        if (resample == ChannelResample::PerBatch)
            phy::resample_channels(model, channel_rng, csi_rng, 0.0);
    };
    train_ist_spsa(params, loss_eval, cfg,
                   [&model]() { phy::project_all_constraints(model); },
                   pre_iteration);
}

// ---------------------------------------------------------------------------

EmulationResult emulate_fc(const CTensor& w_target,
                           const chan::ChannelRealization& h, double power_cap) {
    ad::CMat hc = std::sqrt(h.pathloss) * h.h.complex();
    if (w_target.cols() != hc.rows())
        throw std::invalid_argument("emulate_fc: target/channel dimensions disagree");
    Eigen::CompleteOrthogonalDecomposition<ad::CMat> cod(hc);
    ad::CMat pinv = cod.pseudoInverse();
    ad::CMat g = w_target.complex() * pinv;

    EmulationResult res;
    res.residual_fro = (g * hc - w_target.complex()).norm();
    double power = g.squaredNorm() / static_cast<double>(g.cols());
    res.scale_applied = power > power_cap ? std::sqrt(power_cap / power) : 1.0;
    res.gain = CTensor(ad::CMat(g * res.scale_applied));
    return res;
}

OfdmEmulation emulate_ofdm_kernel(const Eigen::VectorXcd& kernel,
                                  const Eigen::VectorXcd& channel_gain,
                                  double p_max) {
    const int n = static_cast<int>(channel_gain.size());
    if (kernel.size() > n)
        throw std::invalid_argument("emulate_ofdm_kernel: kernel longer than n_sub");
    if (p_max <= 0.0)
        throw std::invalid_argument("emulate_ofdm_kernel: p_max must be > 0");
    Eigen::VectorXcd padded = Eigen::VectorXcd::Zero(n);
    padded.head(kernel.size()) = kernel;
    Eigen::VectorXcd target = phy::dft_matrix(n) * padded;

    OfdmEmulation res;
    Eigen::VectorXcd w = Eigen::VectorXcd::Zero(n);
    double gap_energy = 0.0;
    for (int k = 0; k < n; ++k) {
        if (std::abs(channel_gain(k)) < 1e-9) {
            res.unreachable.push_back(k);
            gap_energy += std::norm(target(k));
        } else {
            w(k) = target(k) / channel_gain(k);
        }
    }
    res.residual = std::sqrt(gap_energy / static_cast<double>(n));
    double power = w.squaredNorm();
    double cap = p_max * static_cast<double>(n);
    res.scale_applied = power > cap ? std::sqrt(cap / power) : 1.0;
    res.per_sub_weight = CTensor(ad::CMat(w * res.scale_applied));
    return res;
}

// ---------------------------------------------------------------------------

namespace {

Mat gaussian_init(Eigen::Index rows, Eigen::Index cols, double stddev,
                  RngStream& rng) {
    Mat m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = stddev * rng.normal();
    return m;
}

// Shared minibatch Adam loop for the digital reference networks.
// forward(tape, x, leaves) must bind leaves aligned with params.
template <typename ForwardFn>
void run_digital_training(const std::vector<Mat*>& params, ForwardFn&& forward,
                          const data::ImageDataset& train_set,
                          const DigitalTrainConfig& cfg, TrainHistory* history,
                          const std::function<double()>& eval_fn) {
    ad::AdamState adam;
    Mat images;
    std::vector<int> labels;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto batches = data::batch_indices(train_set.size(), cfg.batch_size,
                                           cfg.seed, epoch);
        double loss_acc = 0.0;
        for (const auto& batch : batches) {
            data::gather_batch(train_set, batch, images, labels);
            Tape tape;
            std::vector<Var> leaves;
            Var logits = forward(tape, images, leaves);
            Var loss = tape.softmax_xent(logits, labels);
            loss_acc += tape.value(loss)(0, 0);
            tape.backward(loss);
            std::vector<Mat> grads;
            grads.reserve(leaves.size());
            for (Var v : leaves) grads.push_back(tape.grad(v));
            ad::adam_step(params, grads, adam, cfg.lr);
        }
        if (history) {
            history->train_loss.push_back(loss_acc /
                                          static_cast<double>(batches.size()));
            if (eval_fn) history->eval_accuracy.push_back(eval_fn());
        }
    }
}

}  // namespace

DigitalFc digital_reference_fc(int depth, const data::ImageDataset& train_set,
                               const DigitalTrainConfig& cfg,
                               TrainHistory* history,
                               const data::ImageDataset* eval_set) {
    if (depth < 1)
        throw std::invalid_argument("digital_reference_fc: depth must be >= 1");
    RngStream init(cfg.seed, "init");
    DigitalFc net;
    net.hidden.push_back(gaussian_init(32, 784, 1.0 / std::sqrt(784.0), init));
    for (int l = 1; l < depth; ++l)
        net.hidden.push_back(gaussian_init(32, 32, 1.0 / std::sqrt(32.0), init));
    net.head = gaussian_init(10, 32, 1.0 / std::sqrt(32.0), init);
    net.head_bias = Mat::Zero(10, 1);

    std::vector<Mat*> params;
    for (Mat& w : net.hidden) params.push_back(&w);
    params.push_back(&net.head);
    params.push_back(&net.head_bias);

    auto forward = [&net](Tape& tape, const Mat& x, std::vector<Var>& leaves) {
        std::vector<Var> ws;
        for (Mat& w : net.hidden) ws.push_back(tape.leaf(w, true));
        Var head = tape.leaf(net.head, true);
        Var bias = tape.leaf(net.head_bias, true);
        for (Var v : ws) leaves.push_back(v);
        leaves.push_back(head);
        leaves.push_back(bias);
        Var h = tape.leaf(x, false);
        for (Var w : ws)
            h = act::apply_odd_amam(tape, tape.matmul(w, h), net.activation);
        return tape.bias_cols(tape.matmul(head, h), bias);
    };
    std::function<double()> eval_fn;
    if (eval_set)
        eval_fn = [&net, eval_set]() { return digital_fc_accuracy(net, *eval_set); };
    run_digital_training(params, forward, train_set, cfg, history, eval_fn);
    return net;
}

Eigen::MatrixXd digital_fc_logits(const DigitalFc& net, const Mat& x) {
    Mat h = x;
    for (const Mat& w : net.hidden) {
        Mat z = w * h;
        h = z.unaryExpr([&net](double v) { return act::odd_amam(v, net.activation); });
    }
    return (net.head * h).colwise() + net.head_bias.col(0);
}

double digital_fc_accuracy(const DigitalFc& net, const data::ImageDataset& ds) {
    auto batches = data::batch_indices(ds.size(), 1024, 0, 0, false);
    Mat images;
    std::vector<int> labels;
    long correct = 0;
    for (const auto& batch : batches) {
        data::gather_batch(ds, batch, images, labels);
        Mat logits = digital_fc_logits(net, images);
        for (Eigen::Index j = 0; j < logits.cols(); ++j)
            if (argmax_col(logits, j) == labels[static_cast<std::size_t>(j)])
                ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(ds.size());
}

DigitalCnn digital_reference_cnn(const data::ImageDataset& train_set,
                                 const DigitalTrainConfig& cfg,
                                 TrainHistory* history,
                                 const data::ImageDataset* eval_set) {
    RngStream init(cfg.seed, "init");
    DigitalCnn net;
    const int n = net.n_sub;
    net.embed = gaussian_init(n, 784, 1.0 / std::sqrt(784.0), init);
    net.stem = gaussian_init(32, 3, 1.0 / std::sqrt(3.0), init);
    net.conv2 = gaussian_init(32, 96, 1.0 / std::sqrt(96.0), init);
    net.head = gaussian_init(10, 32, 1.0 / std::sqrt(32.0), init);
    net.head_bias = Mat::Zero(10, 1);

    // global average pooling over positions, per channel
    Mat gap = Mat::Zero(32, 32 * n);
    for (int c = 0; c < 32; ++c)
        for (int p = 0; p < n; ++p) gap(c, c * n + p) = 1.0 / n;

    std::vector<Mat*> params{&net.embed, &net.stem, &net.conv2, &net.head,
                             &net.head_bias};
    auto forward = [&net, &gap, n](Tape& tape, const Mat& x,
                                   std::vector<Var>& leaves) {
        Var embed = tape.leaf(net.embed, true);
        Var stem = tape.leaf(net.stem, true);
        Var conv2 = tape.leaf(net.conv2, true);
        Var head = tape.leaf(net.head, true);
        Var bias = tape.leaf(net.head_bias, true);
        leaves.assign({embed, stem, conv2, head, bias});
        Var h = tape.matmul(embed, tape.leaf(x, false));
        h = act::apply_odd_amam(tape, tape.circ_conv1d(h, stem, n, 1, 32, 3),
                                net.activation);
        h = act::apply_odd_amam(tape, tape.circ_conv1d(h, conv2, n, 32, 32, 3),
                                net.activation);
        Var pooled = tape.matmul_const(gap, h);
        return tape.bias_cols(tape.matmul(head, pooled), bias);
    };
    std::function<double()> eval_fn;
    if (eval_set)
        eval_fn = [&net, eval_set]() { return digital_cnn_accuracy(net, *eval_set); };
    run_digital_training(params, forward, train_set, cfg, history, eval_fn);
    return net;
}

Eigen::MatrixXd digital_cnn_logits(const DigitalCnn& net, const Mat& x) {
    Tape tape;
    const int n = net.n_sub;
    Var h = tape.matmul_const(net.embed, tape.leaf(x, false));
    h = act::apply_odd_amam(
        tape, tape.circ_conv1d(h, tape.leaf(net.stem, false), n, 1, 32, 3),
        net.activation);
    h = act::apply_odd_amam(
        tape, tape.circ_conv1d(h, tape.leaf(net.conv2, false), n, 32, 32, 3),
        net.activation);
    Mat gap = Mat::Zero(32, 32 * n);
    for (int c = 0; c < 32; ++c)
        for (int p = 0; p < n; ++p) gap(c, c * n + p) = 1.0 / n;
    Var pooled = tape.matmul_const(gap, h);
    Mat logits = net.head * tape.value(pooled);
    return logits.colwise() + net.head_bias.col(0);
}

double digital_cnn_accuracy(const DigitalCnn& net, const data::ImageDataset& ds) {
    auto batches = data::batch_indices(ds.size(), 1024, 0, 0, false);
    Mat images;
    std::vector<int> labels;
    long correct = 0;
    for (const auto& batch : batches) {
        data::gather_batch(ds, batch, images, labels);
        Mat logits = digital_cnn_logits(net, images);
        for (Eigen::Index j = 0; j < logits.cols(); ++j)
            if (argmax_col(logits, j) == labels[static_cast<std::size_t>(j)])
                ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(ds.size());
}

// ---------------------------------------------------------------------------

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Mat*>>& tensors,
                     const std::string& config_hash) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    f << "wpnn-checkpoint v1\n";
    f << "config_hash " << config_hash << "\n";
    f << "tensors " << tensors.size() << "\n";
    f << std::setprecision(17);
    for (const auto& [name, m] : tensors) {
        f << "tensor " << name << " " << m->rows() << " " << m->cols() << "\n";
        for (Eigen::Index i = 0; i < m->rows(); ++i) {
            for (Eigen::Index j = 0; j < m->cols(); ++j) {
                if (j) f << " ";
                f << (*m)(i, j);
            }
            f << "\n";
        }
    }
}

void load_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Mat*>>& tensors,
                     std::string* config_hash) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
    std::string line;
    if (!std::getline(f, line) || line != "wpnn-checkpoint v1")
        throw std::runtime_error("checkpoint: unknown format/version");
    std::string key, hash;
    f >> key >> hash;
    if (key != "config_hash") throw std::runtime_error("checkpoint: missing config_hash");
    if (config_hash) *config_hash = hash;
    std::size_t count;
    f >> key >> count;
    if (key != "tensors") throw std::runtime_error("checkpoint: missing tensor count");
    if (count != tensors.size())
        throw std::runtime_error("checkpoint: tensor count mismatch");
    for (std::size_t t = 0; t < count; ++t) {
        std::string name;
        Eigen::Index rows, cols;
        f >> key >> name >> rows >> cols;
        if (key != "tensor") throw std::runtime_error("checkpoint: malformed entry");
        Mat* dst = nullptr;
        for (const auto& [n, m] : tensors)
            if (n == name) dst = m;
        if (!dst) throw std::runtime_error("checkpoint: unexpected tensor " + name);
        if (dst->rows() != rows || dst->cols() != cols)
            throw std::runtime_error("checkpoint: shape mismatch for " + name);
        for (Eigen::Index i = 0; i < rows; ++i)
            for (Eigen::Index j = 0; j < cols; ++j)
                if (!(f >> (*dst)(i, j)))
                    throw std::runtime_error("checkpoint: truncated data for " + name);
    }
}

}  // namespace wpnn::train
