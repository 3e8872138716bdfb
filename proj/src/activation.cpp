#include "ntklab/activation.hpp"

#include <cmath>
#include <stdexcept>

namespace ntklab {

namespace {

constexpr double kInvSqrt2Pi = 0.3989422804014326779;
constexpr double kInvSqrt2 = 0.7071067811865475244;

double normal_pdf(double z) { return kInvSqrt2Pi * std::exp(-0.5 * z * z); }
double normal_cdf(double z) { return 0.5 * std::erfc(-z * kInvSqrt2); }

// 64-point Gauss-Hermite abscissas/weights would be overkill; the covariance
// map only feeds a bisection, so a fixed 201-point trapezoid over [-10, 10]
// standard deviations is plenty and keeps this dependency-free.
double gauss_expect_sq(const Activation& act, double K) {
    if (K <= 0.0) return 0.0;
    const double sd = std::sqrt(K);
    const int N = 201;
    const double lo = -10.0, hi = 10.0;
    const double h = (hi - lo) / (N - 1);
    double acc = 0.0;
    for (int i = 0; i < N; ++i) {
        const double g = lo + h * i;
        const double w = (i == 0 || i == N - 1) ? 0.5 : 1.0;
        const double s = act.value(sd * g);
        acc += w * s * s * normal_pdf(g);
    }
    return acc * h;
}

} // namespace

Activation Activation::from_name(std::string_view name) {
    if (name == "linear") return Activation(ActivationKind::Linear);
    if (name == "tanh") return Activation(ActivationKind::Tanh);
    if (name == "gelu") return Activation(ActivationKind::Gelu);
    throw std::invalid_argument("unknown activation: " + std::string(name));
}

std::string Activation::name() const {
    switch (kind_) {
        case ActivationKind::Linear: return "linear";
        case ActivationKind::Tanh: return "tanh";
        case ActivationKind::Gelu: return "gelu";
    }
    return "?";
}

double Activation::value(double z) const {
    switch (kind_) {
        case ActivationKind::Linear: return z;
        case ActivationKind::Tanh: return std::tanh(z);
        case ActivationKind::Gelu: return z * normal_cdf(z);
    }
    return 0.0;
}

double Activation::d1(double z) const {
    switch (kind_) {
        case ActivationKind::Linear: return 1.0;
        case ActivationKind::Tanh: {
            const double t = std::tanh(z);
            return 1.0 - t * t;
        }
        case ActivationKind::Gelu: return normal_cdf(z) + z * normal_pdf(z);
    }
    return 0.0;
}

void Activation::derivs(double z, std::span<double, 6> out) const {
    switch (kind_) {
        case ActivationKind::Linear:
            out[0] = z;
            out[1] = 1.0;
            out[2] = out[3] = out[4] = out[5] = 0.0;
            return;
        case ActivationKind::Tanh: {
            const double t = std::tanh(z);
            const double u = 1.0 - t * t;
            const double t2 = t * t;
            out[0] = t;
            out[1] = u;
            out[2] = -2.0 * t * u;
            out[3] = u * (6.0 * t2 - 2.0);
            out[4] = u * t * (16.0 - 24.0 * t2);
            out[5] = u * (16.0 - 120.0 * t2 + 120.0 * t2 * t2);
            return;
        }
        case ActivationKind::Gelu: {
            const double P = normal_cdf(z);
            const double f = normal_pdf(z);
            const double z2 = z * z;
            out[0] = z * P;
            out[1] = P + z * f;
            out[2] = (2.0 - z2) * f;
            out[3] = (z2 - 4.0) * z * f;
            out[4] = (-z2 * z2 + 7.0 * z2 - 4.0) * f;
            out[5] = (z2 * z2 - 11.0 * z2 + 18.0) * z * f;
            return;
        }
    }
}

Jet Activation::apply(const Jet& z) const {
    switch (kind_) {
        case ActivationKind::Linear: return z;
        case ActivationKind::Tanh: return jet_tanh(z);
        case ActivationKind::Gelu: return jet_gelu(z);
    }
    return z;
}

CriticalPreset Activation::critical_preset() const {
    switch (kind_) {
        case ActivationKind::Linear: return {0.0, 1.0};
        case ActivationKind::Tanh: return {0.0, 1.0};
        case ActivationKind::Gelu: {
            static const double cw = calibrate_critical_cw(Activation(ActivationKind::Gelu));
            return {0.0, cw};
        }
    }
    return {0.0, 1.0};
}

double covariance_map(const Activation& act, double Cb, double Cw, double K) {
    return Cb + Cw * gauss_expect_sq(act, K);
}

double calibrate_critical_cw(const Activation& act) {
    // Per-layer amplification of a small signal is Cw * G(K)/K as K -> 0+.
    const double K_probe = 1e-10;
    const double slope = gauss_expect_sq(act, K_probe) / K_probe;
    if (!(slope > 0.0)) {
        throw std::domain_error("activation covariance map has no growth at K=0");
    }
    double lo = 1e-3, hi = 1e3;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (mid * slope > 1.0) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    return 0.5 * (lo + hi);
}

} // namespace ntklab
