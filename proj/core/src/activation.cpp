#include "wpnn/activation.hpp"

#include <cmath>
#include <stdexcept>

namespace wpnn::act {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

}  // namespace

void validate(const ActivationModel& model) {
    std::visit(
        overloaded{
            [](const Linear&) {},
            [](const IdealReLU&) {},
            [](const Rapp& m) {
                if (m.a_sat <= 0.0 || m.p <= 0.0)
                    throw std::invalid_argument("Rapp: a_sat and p must be positive");
            },
            [](const Saleh& m) {
                if (m.alpha_a <= 0.0 || m.beta_a <= 0.0 || m.alpha_phi <= 0.0 ||
                    m.beta_phi <= 0.0)
                    throw std::invalid_argument("Saleh: parameters must be positive");
            },
            [](const LeakyReLU& m) {
                if (m.slope <= 0.0 || m.slope >= 1.0)
                    throw std::invalid_argument("LeakyReLU: slope must lie in (0,1)");
            },
            [](const EnvelopeClip& m) {
                if (m.ceiling <= 0.0)
                    throw std::invalid_argument("EnvelopeClip: ceiling must be positive");
            },
        },
        model);
}

double rapp_amam(double r, double a_sat, double p) {
    if (r < 0.0) throw std::invalid_argument("rapp_amam: amplitude must be nonnegative");
    if (a_sat <= 0.0 || p <= 0.0)
        throw std::invalid_argument("rapp_amam: a_sat and p must be positive");
    return r / std::pow(1.0 + std::pow(r / a_sat, 2.0 * p), 1.0 / (2.0 * p));
}

std::pair<double, double> saleh_amam_ampm(double r, double alpha_a, double beta_a,
                                          double alpha_phi, double beta_phi) {
    if (r < 0.0)
        throw std::invalid_argument("saleh_amam_ampm: amplitude must be nonnegative");
    double amp = alpha_a * r / (1.0 + beta_a * r * r);
    double phase = alpha_phi * r * r / (1.0 + beta_phi * r * r);
    return {amp, phase};
}

// --- value-level -----------------------------------------------------------

ad::CTensor apply_activation(const ad::CTensor& x, const ActivationModel& model) {
    validate(model);
    ad::CTensor y = x;
    std::visit(
        overloaded{
            [&](const Linear&) {},
            [&](const Rapp& m) {
                for (Eigen::Index j = 0; j < y.cols(); ++j)
                    for (Eigen::Index i = 0; i < y.rows(); ++i) {
                        double r = std::hypot(y.re(i, j), y.im(i, j));
                        double s = r > 0.0 ? rapp_amam(r, m.a_sat, m.p) / r : 1.0;
                        y.re(i, j) *= s;
                        y.im(i, j) *= s;
                    }
            },
            [&](const Saleh& m) {
                for (Eigen::Index j = 0; j < y.cols(); ++j)
                    for (Eigen::Index i = 0; i < y.rows(); ++i) {
                        double re = y.re(i, j), im = y.im(i, j);
                        double r = std::hypot(re, im);
                        auto [amp, ph] = saleh_amam_ampm(r, m.alpha_a, m.beta_a,
                                                         m.alpha_phi, m.beta_phi);
                        double s = r > 0.0 ? amp / r : m.alpha_a;
                        double c = std::cos(ph), sn = std::sin(ph);
                        y.re(i, j) = s * (re * c - im * sn);
                        y.im(i, j) = s * (re * sn + im * c);
                    }
            },
            [&](const IdealReLU&) {
                y.re = y.re.cwiseMax(0.0);
                y.im = y.im.cwiseMax(0.0);
            },
            [&](const LeakyReLU& m) {
                auto f = [&m](double v) { return v > 0.0 ? v : m.slope * v; };
                y.re = y.re.unaryExpr(f);
                y.im = y.im.unaryExpr(f);
            },
            [&](const EnvelopeClip& m) {
                for (Eigen::Index j = 0; j < y.cols(); ++j)
                    for (Eigen::Index i = 0; i < y.rows(); ++i) {
                        double r = std::hypot(y.re(i, j), y.im(i, j));
                        if (r > m.ceiling) {
                            double s = m.ceiling / r;
                            y.re(i, j) *= s;
                            y.im(i, j) *= s;
                        }
                    }
            },
        },
        model);
    return y;
}

// --- tape-level ------------------------------------------------------------

namespace {

// Envelope scale factors expressed as smooth functions of r^2, so gradients
// stay finite through the origin.
ad::Var squared_envelope(ad::Tape& t, ad::CVar x) {
    return t.add(t.mul(x.re, x.re), t.mul(x.im, x.im));
}

ad::CVar scale_envelope(ad::Tape& t, ad::CVar x, ad::Var s) {
    return {t.mul(x.re, s), t.mul(x.im, s)};
}

}  // namespace

ad::CVar apply_activation(ad::Tape& tape, ad::CVar x, const ActivationModel& model) {
    validate(model);
    return std::visit(
        overloaded{
            [&](const Linear&) { return x; },
            [&](const Rapp& m) {
                double a2 = m.a_sat * m.a_sat;
                double p = m.p;
                ad::Var r2 = squared_envelope(tape, x);
                // s(r2) = (1 + (r2/a^2)^p)^(-1/(2p)), g(r) = r * s(r^2)
                ad::Var s = tape.unary(
                    r2,
                    [a2, p](double v) {
                        return std::pow(1.0 + std::pow(v / a2, p), -1.0 / (2.0 * p));
                    },
                    [a2, p](double v) {
                        double u = v / a2;
                        double base = 1.0 + std::pow(u, p);
                        return -0.5 * std::pow(base, -1.0 / (2.0 * p) - 1.0) *
                               std::pow(u, p - 1.0) / a2;
                    });
                return scale_envelope(tape, x, s);
            },
            [&](const Saleh& m) {
                ad::Var r2 = squared_envelope(tape, x);
                // A(r)/r = alpha_a / (1 + beta_a r^2)
                ad::Var s = tape.unary(
                    r2,
                    [m](double v) { return m.alpha_a / (1.0 + m.beta_a * v); },
                    [m](double v) {
                        double d = 1.0 + m.beta_a * v;
                        return -m.alpha_a * m.beta_a / (d * d);
                    });
                ad::Var phi = tape.unary(
                    r2,
                    [m](double v) { return m.alpha_phi * v / (1.0 + m.beta_phi * v); },
                    [m](double v) {
                        double d = 1.0 + m.beta_phi * v;
                        return m.alpha_phi / (d * d);
                    });
                ad::Var cp = tape.unary(phi, [](double v) { return std::cos(v); },
                                        [](double v) { return -std::sin(v); });
                ad::Var sp = tape.unary(phi, [](double v) { return std::sin(v); },
                                        [](double v) { return std::cos(v); });
                ad::CVar rot{tape.sub(tape.mul(x.re, cp), tape.mul(x.im, sp)),
                             tape.add(tape.mul(x.re, sp), tape.mul(x.im, cp))};
                return scale_envelope(tape, rot, s);
            },
            [&](const IdealReLU&) {
                return ad::CVar{tape.relu(x.re), tape.relu(x.im)};
            },
            [&](const LeakyReLU& m) {
                return ad::CVar{tape.leaky_relu(x.re, m.slope),
                                tape.leaky_relu(x.im, m.slope)};
            },
            [&](const EnvelopeClip& m) {
                double c2 = m.ceiling * m.ceiling;
                double c = m.ceiling;
                ad::Var r2 = squared_envelope(tape, x);
                ad::Var s = tape.unary(
                    r2,
                    [c, c2](double v) { return v <= c2 ? 1.0 : c / std::sqrt(v); },
                    [c, c2](double v) {
                        return v <= c2 ? 0.0 : -0.5 * c * std::pow(v, -1.5);
                    });
                return scale_envelope(tape, x, s);
            },
        },
        model);
}

double odd_amam(double x, const ActivationModel& model) {
    return std::visit(
        overloaded{
            [&](const Linear&) { return x; },
            [&](const Rapp& m) {
                double g = rapp_amam(std::abs(x), m.a_sat, m.p);
                return x < 0.0 ? -g : g;
            },
            [&](const Saleh&) -> double {
                throw std::invalid_argument(
                    "odd_amam: Saleh AM/PM has no real-line counterpart");
            },
            [&](const IdealReLU&) { return x > 0.0 ? x : 0.0; },
            [&](const LeakyReLU& m) { return x > 0.0 ? x : m.slope * x; },
            [&](const EnvelopeClip& m) {
                return std::clamp(x, -m.ceiling, m.ceiling);
            },
        },
        model);
}

ad::Var apply_odd_amam(ad::Tape& tape, ad::Var x, const ActivationModel& model) {
    validate(model);
    return std::visit(
        overloaded{
            [&](const Linear&) { return x; },
            [&](const Rapp& m) {
                double a = m.a_sat, p = m.p;
                return tape.unary(
                    x,
                    [a, p, m](double v) {
                        double g = rapp_amam(std::abs(v), a, p);
                        return v < 0.0 ? -g : g;
                    },
                    [a, p](double v) {
                        // d/dr [r (1+(r/a)^{2p})^{-1/(2p)}], even in v
                        double r = std::abs(v);
                        double u = std::pow(r / a, 2.0 * p);
                        double base = 1.0 + u;
                        return std::pow(base, -1.0 / (2.0 * p) - 1.0);
                    });
            },
            [&](const Saleh&) -> ad::Var {
                throw std::invalid_argument(
                    "apply_odd_amam: Saleh AM/PM has no real-line counterpart");
            },
            [&](const IdealReLU&) { return tape.relu(x); },
            [&](const LeakyReLU& m) { return tape.leaky_relu(x, m.slope); },
            [&](const EnvelopeClip& m) {
                double c = m.ceiling;
                return tape.unary(
                    x, [c](double v) { return std::clamp(v, -c, c); },
                    [c](double v) { return std::abs(v) < c ? 1.0 : 0.0; });
            },
        },
        model);
}

}  // namespace wpnn::act
