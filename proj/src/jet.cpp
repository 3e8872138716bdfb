#include "ntklab/jet.hpp"

#include <cmath>

namespace ntklab {

namespace {

void check_order(int order) {
    if (order < 1 || order > kMaxJetOrder) {
        throw std::invalid_argument("jet order must be in [1, 5]");
    }
}

void check_same(const Jet& a, const Jet& b) {
    if (a.order() != b.order()) {
        throw std::invalid_argument("jet orders differ");
    }
}

} // namespace

Jet::Jet(int order) : order_(order) {
    check_order(order);
}

Jet::Jet(int order, double value) : order_(order) {
    check_order(order);
    c_[0] = value;
}

Jet Jet::variable(int order, double value) {
    Jet j(order, value);
    j.c_[1] = 1.0;
    return j;
}

Jet Jet::constant(int order, double value) {
    return Jet(order, value);
}

Jet& Jet::operator+=(const Jet& o) {
    check_same(*this, o);
    for (int k = 0; k <= order_; ++k) c_[k] += o.c_[k];
    return *this;
}

Jet& Jet::operator-=(const Jet& o) {
    check_same(*this, o);
    for (int k = 0; k <= order_; ++k) c_[k] -= o.c_[k];
    return *this;
}

Jet& Jet::operator+=(double v) {
    c_[0] += v;
    return *this;
}

Jet& Jet::operator-=(double v) {
    c_[0] -= v;
    return *this;
}

Jet& Jet::operator*=(double v) {
    for (int k = 0; k <= order_; ++k) c_[k] *= v;
    return *this;
}

Jet operator*(const Jet& a, const Jet& b) {
    check_same(a, b);
    Jet out(a.order());
    for (int m = 0; m <= a.order(); ++m) {
        double d = 0.0;
        for (int i = 0; i <= m; ++i) d += a.coeff(i) * b.coeff(m - i);
        out.coeff(m) = d;
    }
    return out;
}

Jet Jet::compose(std::span<const double> derivs) const {
    if (static_cast<int>(derivs.size()) < order_ + 1) {
        throw std::invalid_argument("compose needs order+1 derivative values");
    }
    // Horner evaluation of sum_k f^[k](c0)/k! * u^k with u = (*this) - c0.
    Jet u = *this;
    u.coeff(0) = 0.0;

    double fact = 1.0;
    std::array<double, kMaxJetOrder + 1> taylor{};
    for (int k = 0; k <= order_; ++k) {
        if (k > 0) fact *= k;
        taylor[k] = derivs[k] / fact;
    }

    Jet r = Jet::constant(order_, taylor[order_]);
    for (int k = order_ - 1; k >= 0; --k) {
        r = r * u;
        r += taylor[k];
    }
    return r;
}

Jet jet_exp(const Jet& u) {
    const int K = u.order();
    Jet e(K);
    e.coeff(0) = std::exp(u.value());
    for (int k = 1; k <= K; ++k) {
        double acc = 0.0;
        for (int j = 1; j <= k; ++j) acc += j * u.coeff(j) * e.coeff(k - j);
        e.coeff(k) = acc / k;
    }
    return e;
}

Jet jet_tanh(const Jet& u) {
    const int K = u.order();
    Jet t(K), s(K);
    t.coeff(0) = std::tanh(u.value());
    s.coeff(0) = 1.0 - t.coeff(0) * t.coeff(0);
    // t' = (1 - t^2) u' propagated coefficientwise; s tracks 1 - t^2.
    for (int k = 1; k <= K; ++k) {
        double acc = 0.0;
        for (int j = 1; j <= k; ++j) acc += j * u.coeff(j) * s.coeff(k - j);
        t.coeff(k) = acc / k;
        double sq = 0.0;
        for (int a = 0; a <= k; ++a) sq += t.coeff(a) * t.coeff(k - a);
        s.coeff(k) = -sq;
    }
    return t;
}

Jet jet_gelu(const Jet& u) {
    const int K = u.order();
    constexpr double inv_sqrt_2pi = 0.3989422804014326779;
    constexpr double inv_sqrt_2 = 0.7071067811865475244;

    Jet phi = jet_exp(u * u * (-0.5)) * inv_sqrt_2pi;

    Jet big_phi(K);
    big_phi.coeff(0) = 0.5 * std::erfc(-u.value() * inv_sqrt_2);
    // Phi' = phi(u) u' integrated coefficientwise.
    for (int k = 1; k <= K; ++k) {
        double acc = 0.0;
        for (int j = 0; j < k; ++j) acc += phi.coeff(j) * (k - j) * u.coeff(k - j);
        big_phi.coeff(k) = acc / k;
    }
    return u * big_phi;
}

} // namespace ntklab
