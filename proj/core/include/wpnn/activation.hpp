#pragma once

#include <utility>
#include <variant>

#include "wpnn/diffcore.hpp"

namespace wpnn::act {

// Hardware-derived activation shapes. The PA models act on the complex
// envelope (AM/AM plus, for Saleh, AM/PM); the rectifier family acts on the
// signed real and imaginary components; EnvelopeClip caps the magnitude.
struct Linear {};
struct Rapp {
    double a_sat = 1.0;
    double p = 2.0;
};
struct Saleh {
    double alpha_a = 1.2;
    double beta_a = 1.43;
    double alpha_phi = 0.37;
    double beta_phi = 0.68;
};
struct IdealReLU {};
struct LeakyReLU {
    double slope = 0.1;
};
struct EnvelopeClip {
    double ceiling = 1.0;
};

using ActivationModel =
    std::variant<Linear, Rapp, Saleh, IdealReLU, LeakyReLU, EnvelopeClip>;

// Throws std::invalid_argument if shape parameters are out of range.
void validate(const ActivationModel& model);

// AM/AM response g(r) = r / (1 + (r/a_sat)^(2p))^(1/(2p)), r >= 0.
double rapp_amam(double r, double a_sat, double p);

// (amplitude, phase shift in radians):
//   A(r) = alpha_a r / (1 + beta_a r^2),  Phi(r) = alpha_phi r^2 / (1 + beta_phi r^2)
std::pair<double, double> saleh_amam_ampm(double r, double alpha_a,
                                          double beta_a, double alpha_phi,
                                          double beta_phi);

// Entry-wise application to a complex tensor (no gradient tracking).
ad::CTensor apply_activation(const ad::CTensor& x, const ActivationModel& model);

// Tape version; gradient-tracked when the input is.
ad::CVar apply_activation(ad::Tape& tape, ad::CVar x, const ActivationModel& model);

// Odd-symmetric AM/AM on a real tensor, sign(x) * g(|x|). This is the shape a
// PA presents to a purely real baseband signal; the digital reference networks
// use it so that their activation matches the over-the-air one.
ad::Var apply_odd_amam(ad::Tape& tape, ad::Var x, const ActivationModel& model);
double odd_amam(double x, const ActivationModel& model);

}  // namespace wpnn::act
