#include "wpnn/phylayers.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace wpnn::phy {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

CTensor scaled_channel(const chan::ChannelRealization& c) {
    double s = std::sqrt(c.pathloss);
    return {c.h.re * s, c.h.im * s};
}

// Physical combiner/gain under CSI-based channel inversion. Light diagonal
// loading keeps the inverse close to exact (the effective weight then stays
// close to the logical one per realization) while still bounding the noise
// blowup on near-singular draws.
constexpr double kEqLoading = 0.01;

CTensor equalizer_for(const chan::ChannelRealization& channel,
                      const chan::CsiEstimate* csi, double noise_var) {
    const CTensor& h = csi ? csi->h_hat : channel.h;
    return chan::mmse_equalizer(h, noise_var * kEqLoading);
}

}  // namespace

void WpnnModel::push_layer(PhysicalLayer layer, chan::ChannelRealization channel,
                           bool resample_channel) {
    layers.push_back(std::move(layer));
    chan::CsiEstimate est;
    est.h_hat = channel.h;
    est.error_var = 0.0;
    channels.push_back(std::move(channel));
    csi.push_back(std::move(est));
    resample.push_back(resample_channel);
}

void WpnnModel::check_well_formed() const {
    if (layers.size() != channels.size() || layers.size() != csi.size() ||
        layers.size() != resample.size())
        throw std::invalid_argument("WpnnModel: per-layer lists out of sync");
}

ad::CMat dft_matrix(int n) {
    ad::CMat d(n, n);
    const double w = -2.0 * std::numbers::pi / static_cast<double>(n);
    for (int k = 0; k < n; ++k)
        for (int m = 0; m < n; ++m)
            d(k, m) = std::polar(1.0, w * k * m);
    return d;
}

ad::CMat idft_matrix(int n) {
    return dft_matrix(n).adjoint() / static_cast<double>(n);
}

double matrix_power(const CTensor& w) { return w.squared_norm(); }

// ---------------------------------------------------------------------------

CTensor effective_weight(const PhysicalLayer& layer,
                         const chan::ChannelRealization& channel,
                         const chan::CsiEstimate* csi) {
    return std::visit(
        overloaded{
            [&](const TransceiverLayer& l) {
                CTensor h = scaled_channel(channel);
                CTensor hf = ad::cmatmul(h, l.precoder);
                if (l.csi_inversion)
                    hf = ad::cmatmul(equalizer_for(channel, csi, l.noise.sigma2), hf);
                return ad::cmatmul(l.combiner, hf);
            },
            [&](const RelayHop& l) {
                CTensor h = scaled_channel(channel);
                if (l.csi_inversion)
                    h = ad::cmatmul(equalizer_for(channel, csi, l.noise.sigma2), h);
                CTensor w = ad::cmatmul(l.gain, h);
                w.re *= l.backoff(0, 0);
                w.im *= l.backoff(0, 0);
                return w;
            },
            [&](const BackscatterField& l) {
                std::complex<double> w = l.direct;
                ad::CMat g = l.gamma.complex();
                for (Eigen::Index k = 0; k < g.rows(); ++k)
                    w += l.h_rx(k) * g(k, 0) * l.h_tx(k);
                CTensor out = CTensor::zero(1, 1);
                out.re(0, 0) = w.real();
                out.im(0, 0) = w.imag();
                return out;
            },
            [&](const RisSimStack& l) {
                CTensor m = l.precoder;
                for (const RisPanel& p : l.panels) {
                    m = ad::cmatmul(p.prop, m);
                    ad::CMat phase(p.theta.rows(), 1);
                    for (Eigen::Index i = 0; i < p.theta.rows(); ++i)
                        phase(i, 0) = std::polar(p.amp(i, 0), p.theta(i, 0));
                    ad::CMat mz = phase.asDiagonal() * m.complex();
                    m = CTensor(mz);
                }
                return ad::cmatmul(l.combiner, m);
            },
            [&](const OfdmConvLayer& l) {
                ad::CMat d = dft_matrix(l.n_sub);
                Eigen::VectorXcd wg =
                    l.per_sub_weight.complex().col(0).cwiseProduct(l.channel_gain);
                ad::CMat m = idft_matrix(l.n_sub) * wg.asDiagonal() * d;
                return CTensor(m);
            },
        },
        layer);
}

Eigen::VectorXcd ofdm_conv_forward(const OfdmConvLayer& layer,
                                   const Eigen::VectorXcd& x_time) {
    if (x_time.size() != layer.n_sub)
        throw std::invalid_argument("ofdm_conv_forward: input length != n_sub");
    if (layer.per_sub_weight.rows() != layer.n_sub ||
        layer.channel_gain.size() != layer.n_sub)
        throw std::invalid_argument("ofdm_conv_forward: weight/gain length != n_sub");
    Eigen::VectorXcd xf = dft_matrix(layer.n_sub) * x_time;
    Eigen::VectorXcd yf = xf.cwiseProduct(
        layer.per_sub_weight.complex().col(0).cwiseProduct(layer.channel_gain));
    return idft_matrix(layer.n_sub) * yf;
}

// ---------------------------------------------------------------------------

void project_constraints_inplace(PhysicalLayer& layer) {
    std::visit(
        overloaded{
            [](TransceiverLayer& l) {
                double power = matrix_power(l.precoder) /
                               static_cast<double>(l.precoder.cols());
                if (power > l.p_max) {
                    double s = std::sqrt(l.p_max / power);
                    l.precoder.re *= s;
                    l.precoder.im *= s;
                }
                if (l.constant_modulus) {
                    double m = 1.0 / std::sqrt(static_cast<double>(l.precoder.rows()));
                    for (Eigen::Index j = 0; j < l.precoder.cols(); ++j)
                        for (Eigen::Index i = 0; i < l.precoder.rows(); ++i) {
                            double r = std::hypot(l.precoder.re(i, j),
                                                  l.precoder.im(i, j));
                            if (r > 0.0) {
                                l.precoder.re(i, j) *= m / r;
                                l.precoder.im(i, j) *= m / r;
                            } else {
                                l.precoder.re(i, j) = m;
                                l.precoder.im(i, j) = 0.0;
                            }
                        }
                }
            },
            [](RelayHop& l) {
                double power = matrix_power(l.gain) /
                               static_cast<double>(l.gain.cols());
                if (power > l.power_cap) {
                    double s = std::sqrt(l.power_cap / power);
                    l.gain.re *= s;
                    l.gain.im *= s;
                }
            },
            [](BackscatterField& l) {
                for (Eigen::Index k = 0; k < l.gamma.rows(); ++k) {
                    double r = std::hypot(l.gamma.re(k, 0), l.gamma.im(k, 0));
                    if (r > 1.0) {
                        l.gamma.re(k, 0) /= r;
                        l.gamma.im(k, 0) /= r;
                    }
                }
            },
            [](RisSimStack& l) {
                for (RisPanel& p : l.panels) {
                    if (l.active) {
                        p.amp = p.amp.cwiseMax(0.0).cwiseMin(l.amp_max);
                    } else {
                        p.amp.setOnes();
                    }
                }
            },
            [](OfdmConvLayer&) {},
        },
        layer);
}

PhysicalLayer project_constraints(PhysicalLayer layer) {
    project_constraints_inplace(layer);
    return layer;
}

void project_all_constraints(WpnnModel& model) {
    for (PhysicalLayer& l : model.layers) project_constraints_inplace(l);
}

// ---------------------------------------------------------------------------

namespace {

// Binds a parameter matrix as a tape leaf, recording it when trainable.
Var bind(ad::Tape& t, const Mat& m, bool train, bool track,
         std::vector<Var>* leaves) {
    bool rg = train && track;
    Var v = t.leaf(m, rg);
    if (rg && leaves) leaves->push_back(v);
    return v;
}

CVar bind(ad::Tape& t, const CTensor& m, bool train, bool track,
          std::vector<Var>* leaves, bool real_only = false) {
    if (real_only)
        return {bind(t, m.re, train, track, leaves), t.leaf(m.im, false)};
    return {bind(t, m.re, train, track, leaves),
            bind(t, m.im, train, track, leaves)};
}

CVar add_noise(ad::Tape& t, CVar x, const chan::NoiseSpec& spec, bool noise_on,
               RngStream* rng) {
    if (!noise_on || spec.sigma2 <= 0.0) return x;
    if (!rng)
        throw std::invalid_argument("forward: noise requested without an RNG stream");
    CTensor n = chan::complex_gaussian(t.value(x.re).rows(), t.value(x.re).cols(),
                                       spec.sigma2, *rng);
    return t.cadd_const(x, n);
}

CVar scalar_times(ad::Tape& t, CVar w, CVar x) {
    return {t.sub(t.mul_scalar(w.re, x.re), t.mul_scalar(w.im, x.im)),
            t.add(t.mul_scalar(w.re, x.im), t.mul_scalar(w.im, x.re))};
}

}  // namespace

CVar forward_layer(ad::Tape& tape, const PhysicalLayer& layer,
                   const chan::ChannelRealization& channel,
                   const chan::CsiEstimate* csi, CVar x, bool noise_on,
                   RngStream* rng, bool track_grads,
                   std::vector<Var>* param_leaves) {
    return std::visit(
        overloaded{
            [&](const TransceiverLayer& l) {
                CVar f = bind(tape, l.precoder, l.train_precoder, track_grads,
                              param_leaves, l.real_weights);
                CVar c = bind(tape, l.combiner, l.train_combiner, track_grads,
                              param_leaves, l.real_weights);
                Var b = bind(tape, l.bias, l.train_bias, track_grads, param_leaves);
                CVar s = tape.cmatmul(f, x);
                double cols = static_cast<double>(tape.value(s.re).cols());
                double pw = tape.value(s).squared_norm() / cols;
                if (l.agc ? pw > 0.0 : pw > l.p_max)
                    s = tape.cscale(s, std::sqrt(l.p_max / pw));
                CVar r = tape.cmatmul_const(scaled_channel(channel), s);
                r = add_noise(tape, r, l.noise, noise_on, rng);
                if (l.csi_inversion)
                    r = tape.cmatmul_const(
                        equalizer_for(channel, csi, l.noise.sigma2), r);
                CVar y = tape.cmatmul(c, r);
                return CVar{tape.bias_cols(y.re, b), y.im};
            },
            [&](const RelayHop& l) {
                CVar g = bind(tape, l.gain, l.trainable, track_grads,
                              param_leaves, l.real_weights);
                CVar r = tape.cmatmul_const(scaled_channel(channel), x);
                r = add_noise(tape, r, l.noise, noise_on, rng);
                if (l.csi_inversion)
                    r = tape.cmatmul_const(
                        equalizer_for(channel, csi, l.noise.sigma2), r);
                CVar z = tape.cmatmul(g, r);
                if (l.train_backoff || l.backoff(0, 0) != 1.0) {
                    Var b = bind(tape, l.backoff, l.trainable && l.train_backoff,
                                 track_grads, param_leaves);
                    z = CVar{tape.mul_scalar(b, z.re), tape.mul_scalar(b, z.im)};
                }
                CVar y = act::apply_activation(tape, z, l.activation);
                // power budget on the retransmitted signal, batch-average
                // estimate; the gain scale stays free as the PA back-off
                double cols = static_cast<double>(tape.value(y.re).cols());
                double pw = tape.value(y).squared_norm() / cols;
                if (l.agc ? pw > 0.0 : pw > l.power_cap)
                    y = tape.cscale(y, std::sqrt(l.power_cap / pw));
                return y;
            },
            [&](const BackscatterField& l) {
                CVar gm = bind(tape, l.gamma, l.trainable, track_grads, param_leaves);
                Eigen::VectorXcd link = l.h_rx.cwiseProduct(l.h_tx);
                CTensor row(ad::CMat(link.transpose()));
                CVar w = tape.cmatmul_const(row, gm);  // 1x1
                CTensor d = CTensor::zero(1, 1);
                d.re(0, 0) = l.direct.real();
                d.im(0, 0) = l.direct.imag();
                w = tape.cadd_const(w, d);
                CVar y = scalar_times(tape, w, x);
                return add_noise(tape, y, l.noise, noise_on, rng);
            },
            [&](const RisSimStack& l) {
                CVar f = bind(tape, l.precoder, l.trainable, track_grads,
                              param_leaves);
                CVar c = bind(tape, l.combiner, l.trainable, track_grads,
                              param_leaves);
                CVar s = tape.cmatmul(f, x);
                for (const RisPanel& p : l.panels) {
                    Var th = bind(tape, p.theta, l.trainable, track_grads,
                                  param_leaves);
                    Var am = bind(tape, p.amp, l.trainable && l.active,
                                  track_grads, param_leaves);
                    s = tape.cmatmul_const(p.prop, s);
                    Var cth = tape.unary(th, [](double v) { return std::cos(v); },
                                         [](double v) { return -std::sin(v); });
                    Var sth = tape.unary(th, [](double v) { return std::sin(v); },
                                         [](double v) { return std::cos(v); });
                    CVar phase{tape.mul(am, cth), tape.mul(am, sth)};
                    s = tape.ccolwise_mul(s, phase);
                }
                s = add_noise(tape, s, l.noise, noise_on, rng);
                return tape.cmatmul(c, s);
            },
            [&](const OfdmConvLayer& l) {
                CVar w = bind(tape, l.per_sub_weight, l.trainable, track_grads,
                              param_leaves);
                CVar g = tape.leaf(CTensor(ad::CMat(l.channel_gain)), false);
                CVar wg = tape.cmul(w, g);
                CVar xf = tape.cmatmul_const(CTensor(dft_matrix(l.n_sub)), x);
                CVar yf = tape.ccolwise_mul(xf, wg);
                return tape.cmatmul_const(CTensor(idft_matrix(l.n_sub)), yf);
            },
        },
        layer);
}

ForwardResult forward_network(ad::Tape& tape, const WpnnModel& model,
                              const CTensor& x, bool noise_on, RngStream* rng,
                              bool track_grads) {
    model.check_well_formed();
    ForwardResult res;
    CVar s = tape.leaf(x, false);
    for (std::size_t i = 0; i < model.layers.size(); ++i)
        s = forward_layer(tape, model.layers[i], model.channels[i],
                          &model.csi[i], s, noise_on, rng, track_grads,
                          &res.param_leaves);
    res.signal = s;
    Var b = bind(tape, model.readout.bias, model.readout.trainable, track_grads,
                 &res.param_leaves);
    if (model.readout.rule == ReadoutRule::RealPart) {
        res.logits = tape.bias_cols(s.re, b);
    } else {
        Var r2 = tape.add(tape.mul(s.re, s.re), tape.mul(s.im, s.im));
        Var r = tape.unary(r2,
                           [](double v) { return std::sqrt(v); },
                           [](double v) { return v > 0.0 ? 0.5 / std::sqrt(v) : 0.0; });
        res.logits = tape.bias_cols(r, b);
    }
    return res;
}

std::vector<Mat*> trainable_params(WpnnModel& model) {
    std::vector<Mat*> out;
    for (PhysicalLayer& layer : model.layers)
        std::visit(
            overloaded{
                [&](TransceiverLayer& l) {
                    if (l.train_precoder) {
                        out.push_back(&l.precoder.re);
                        if (!l.real_weights) out.push_back(&l.precoder.im);
                    }
                    if (l.train_combiner) {
                        out.push_back(&l.combiner.re);
                        if (!l.real_weights) out.push_back(&l.combiner.im);
                    }
                    if (l.train_bias) out.push_back(&l.bias);
                },
                [&](RelayHop& l) {
                    if (l.trainable) {
                        out.push_back(&l.gain.re);
                        if (!l.real_weights) out.push_back(&l.gain.im);
                        if (l.train_backoff) out.push_back(&l.backoff);
                    }
                },
                [&](BackscatterField& l) {
                    if (l.trainable) {
                        out.push_back(&l.gamma.re);
                        out.push_back(&l.gamma.im);
                    }
                },
                [&](RisSimStack& l) {
                    if (l.trainable) {
                        out.push_back(&l.precoder.re);
                        out.push_back(&l.precoder.im);
                        out.push_back(&l.combiner.re);
                        out.push_back(&l.combiner.im);
                        for (RisPanel& p : l.panels) {
                            out.push_back(&p.theta);
                            if (l.active) out.push_back(&p.amp);
                        }
                    }
                },
                [&](OfdmConvLayer& l) {
                    if (l.trainable) {
                        out.push_back(&l.per_sub_weight.re);
                        out.push_back(&l.per_sub_weight.im);
                    }
                },
            },
            layer);
    if (model.readout.trainable) out.push_back(&model.readout.bias);
    return out;
}

std::vector<std::pair<std::string, Mat*>> named_trainable_params(WpnnModel& model) {
    std::vector<std::pair<std::string, Mat*>> out;
    std::size_t li = 0;
    for (PhysicalLayer& layer : model.layers) {
        std::string base = "layer" + std::to_string(li++) + ".";
        std::visit(
            overloaded{
                [&](TransceiverLayer& l) {
                    if (l.train_precoder) {
                        out.emplace_back(base + "precoder.re", &l.precoder.re);
                        if (!l.real_weights)
                            out.emplace_back(base + "precoder.im", &l.precoder.im);
                    }
                    if (l.train_combiner) {
                        out.emplace_back(base + "combiner.re", &l.combiner.re);
                        if (!l.real_weights)
                            out.emplace_back(base + "combiner.im", &l.combiner.im);
                    }
                    if (l.train_bias) out.emplace_back(base + "bias", &l.bias);
                },
                [&](RelayHop& l) {
                    if (l.trainable) {
                        out.emplace_back(base + "gain.re", &l.gain.re);
                        if (!l.real_weights)
                            out.emplace_back(base + "gain.im", &l.gain.im);
                        if (l.train_backoff)
                            out.emplace_back(base + "backoff", &l.backoff);
                    }
                },
                [&](BackscatterField& l) {
                    if (l.trainable) {
                        out.emplace_back(base + "gamma.re", &l.gamma.re);
                        out.emplace_back(base + "gamma.im", &l.gamma.im);
                    }
                },
                [&](RisSimStack& l) {
                    if (l.trainable) {
                        out.emplace_back(base + "precoder.re", &l.precoder.re);
                        out.emplace_back(base + "precoder.im", &l.precoder.im);
                        out.emplace_back(base + "combiner.re", &l.combiner.re);
                        out.emplace_back(base + "combiner.im", &l.combiner.im);
                        std::size_t pi = 0;
                        for (RisPanel& p : l.panels) {
                            std::string pb = base + "panel" + std::to_string(pi++) + ".";
                            out.emplace_back(pb + "theta", &p.theta);
                            if (l.active) out.emplace_back(pb + "amp", &p.amp);
                        }
                    }
                },
                [&](OfdmConvLayer& l) {
                    if (l.trainable) {
                        out.emplace_back(base + "per_sub_weight.re", &l.per_sub_weight.re);
                        out.emplace_back(base + "per_sub_weight.im", &l.per_sub_weight.im);
                    }
                },
            },
            layer);
    }
    if (model.readout.trainable) out.emplace_back("readout.bias", &model.readout.bias);
    return out;
}

void resample_channels(WpnnModel& model, RngStream& channel_rng,
                       RngStream& csi_rng, double csi_error_var) {
    model.check_well_formed();
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        if (!model.resample[i]) continue;
        long id = model.channels[i].coherence_id + 1;
        double pl = model.channels[i].pathloss;
        auto c = chan::sample_rayleigh(static_cast<int>(model.channels[i].h.rows()),
                                       static_cast<int>(model.channels[i].h.cols()),
                                       channel_rng);
        c.pathloss = pl;
        c.coherence_id = id;
        model.csi[i] = chan::corrupt_csi(c, csi_error_var, csi_rng);
        model.channels[i] = std::move(c);
    }
}

int layer_input_dim(const PhysicalLayer& layer) {
    return std::visit(
        overloaded{
            [](const TransceiverLayer& l) { return static_cast<int>(l.precoder.cols()); },
            [](const RelayHop& l) { return static_cast<int>(l.gain.cols()); },
            [](const BackscatterField&) { return -1; },  // scalar weight, any dim
            [](const RisSimStack& l) { return static_cast<int>(l.precoder.cols()); },
            [](const OfdmConvLayer& l) { return l.n_sub; },
        },
        layer);
}

int layer_output_dim(const PhysicalLayer& layer) {
    return std::visit(
        overloaded{
            [](const TransceiverLayer& l) { return static_cast<int>(l.combiner.rows()); },
            [](const RelayHop& l) { return static_cast<int>(l.gain.rows()); },
            [](const BackscatterField&) { return -1; },
            [](const RisSimStack& l) { return static_cast<int>(l.combiner.rows()); },
            [](const OfdmConvLayer& l) { return l.n_sub; },
        },
        layer);
}

}  // namespace wpnn::phy
