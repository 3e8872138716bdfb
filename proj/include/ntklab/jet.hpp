#pragma once

#include <array>
#include <span>

#include "ntklab/common.hpp"

namespace ntklab {

inline constexpr int kMaxJetOrder = 5;

/// Truncated Taylor polynomial c0 + c1*eps + ... + cK*eps^K with eps^{K+1} = 0.
/// Arithmetic is exact truncated-series algebra; K is fixed per jet, 1 <= K <= 5.
class Jet {
public:
    explicit Jet(int order);
    Jet(int order, double value);

    /// value + 1*eps, the seed for directional differentiation.
    static Jet variable(int order, double value);
    static Jet constant(int order, double value);

    int order() const { return order_; }
    double value() const { return c_[0]; }
    double coeff(int k) const { return c_[static_cast<std::size_t>(k)]; }
    double& coeff(int k) { return c_[static_cast<std::size_t>(k)]; }

    Jet& operator+=(const Jet& o);
    Jet& operator-=(const Jet& o);
    Jet& operator+=(double v);
    Jet& operator-=(double v);
    Jet& operator*=(double v);

    friend Jet operator+(Jet a, const Jet& b) { a += b; return a; }
    friend Jet operator-(Jet a, const Jet& b) { a -= b; return a; }
    friend Jet operator+(Jet a, double b) { a += b; return a; }
    friend Jet operator-(Jet a, double b) { a -= b; return a; }
    friend Jet operator*(Jet a, double b) { a *= b; return a; }
    friend Jet operator*(double a, Jet b) { b *= a; return b; }
    friend Jet operator-(Jet a) { a *= -1.0; return a; }
    friend Jet operator*(const Jet& a, const Jet& b);

    /// Composition with a smooth scalar function given its derivatives at
    /// value(): derivs[k] = f^[k](c0) for k = 0..order. Exact truncated series.
    Jet compose(std::span<const double> derivs) const;

private:
    int order_;
    std::array<double, kMaxJetOrder + 1> c_{};
};

Jet jet_exp(const Jet& u);
Jet jet_tanh(const Jet& u);
Jet jet_gelu(const Jet& u);

} // namespace ntklab
