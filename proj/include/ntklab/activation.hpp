#pragma once

#include <span>
#include <string>
#include <string_view>

#include "ntklab/jet.hpp"

namespace ntklab {

enum class ActivationKind { Linear, Tanh, Gelu };

struct CriticalPreset {
    double Cb = 0.0;
    double Cw = 1.0;
};

/// Smooth activation with closed-form derivatives through fifth order and an
/// independent truncated-Taylor evaluator. ReLU-style kinks are unsupported.
class Activation {
public:
    Activation() = default;
    explicit Activation(ActivationKind kind) : kind_(kind) {}

    static Activation from_name(std::string_view name);

    ActivationKind kind() const { return kind_; }
    std::string name() const;

    double value(double z) const;
    double d1(double z) const;

    /// out[k] = sigma^[k](z) for k = 0..5.
    void derivs(double z, std::span<double, 6> out) const;

    /// Series propagation via coefficient recurrences (not the derivative
    /// table), so it cross-checks derivs().
    Jet apply(const Jet& z) const;

    /// (Cb, Cw) tuned so deep signals neither explode nor vanish; gelu's Cw is
    /// found by a fixed-point search on the single-input covariance recursion.
    CriticalPreset critical_preset() const;

private:
    ActivationKind kind_ = ActivationKind::Tanh;
};

/// One iteration of the single-input covariance map
/// K -> Cb + Cw * E_{z ~ N(0,K)}[sigma(z)^2], evaluated by quadrature.
double covariance_map(const Activation& act, double Cb, double Cw, double K);

/// Solves Cw * d/dK E[sigma^2]|_{K->0+} = 1 by bisection; the critical Cw for
/// the K* = 0 universality class that tanh, gelu and linear all belong to.
double calibrate_critical_cw(const Activation& act);

} // namespace ntklab
