#include "ntklab/scaling.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace ntklab {

void ScalingStrategy::validate() const {
    if (L < 1) {
        throw std::invalid_argument("strategy depth L must be >= 1");
    }
    if (p.size() != static_cast<std::size_t>(L) || q.size() != static_cast<std::size_t>(L)) {
        throw std::invalid_argument("strategy exponent arrays must have length L");
    }
}

std::string ConstraintReport::describe() const {
    std::ostringstream os;
    os << "criticality=" << (criticality ? "pass" : "FAIL")
       << " lr_equivalence=" << (lr_equivalence ? "pass" : "FAIL")
       << " finite_learning=" << (finite_learning ? "pass" : "FAIL");
    return os.str();
}

ScalingStrategy derive_meta_family(double s, int L) {
    if (L < 1) {
        throw std::invalid_argument("meta family needs L >= 1");
    }
    if (s < 0.0 || s > 1.0) {
        std::fprintf(stderr, "warning: metaparameter s=%g outside [0,1]\n", s);
    }
    ScalingStrategy out;
    out.L = L;
    out.p.assign(L, 0.0);
    out.q.assign(L, 0.0);
    out.p[L - 1] = s;
    out.q[L - 1] = s;
    out.r = s;
    out.provenance = "meta-family(s=" + std::to_string(s) + ")";
    return out;
}

ScalingStrategy gauge_transform(const ScalingStrategy& strategy, double g) {
    strategy.validate();
    ScalingStrategy out = strategy;
    for (double& v : out.q) v += g;
    out.r += g;
    out.provenance = strategy.provenance + " gauge(g=" + std::to_string(g) + ")";
    return out;
}

ConstraintReport validate_meta_principles(const ScalingStrategy& strategy) {
    strategy.validate();
    const int L = strategy.L;

    ConstraintReport rep;
    rep.criticality = true;
    for (int l = 1; l <= L - 1; ++l) {
        if (strategy.p[l - 1] != 0.0) rep.criticality = false;
    }
    rep.lr_equivalence = true;
    for (int l = 1; l <= L - 1; ++l) {
        if (strategy.q[l] != strategy.p[l] + strategy.q[l - 1]) rep.lr_equivalence = false;
    }
    rep.finite_learning = (strategy.r == strategy.q[L - 1]);
    return rep;
}

double gamma(long n, int L, double s) {
    if (n < 1) {
        throw std::invalid_argument("gamma needs n >= 1");
    }
    if (L < 1) {
        throw std::invalid_argument("gamma needs L >= 1");
    }
    return static_cast<double>(L) / std::pow(static_cast<double>(n), 1.0 - s);
}

AbcParams to_abc(const ScalingStrategy& strategy) {
    strategy.validate();
    const int L = strategy.L;
    AbcParams out;
    out.a.resize(L);
    out.b.resize(L);
    // 2a_1 = q_1, 2a_l = 1 + q_l (l >= 2); 2a_l + 2b_l = p_1 resp. 1 + p_l.
    // The system pins all of a, b, c; b vanishes exactly when p_l = q_l.
    out.a[0] = strategy.q[0] / 2.0;
    out.b[0] = (strategy.p[0] - strategy.q[0]) / 2.0;
    for (int l = 2; l <= L; ++l) {
        out.a[l - 1] = (1.0 + strategy.q[l - 1]) / 2.0;
        out.b[l - 1] = (strategy.p[l - 1] - strategy.q[l - 1]) / 2.0;
    }
    out.c = -strategy.r;
    return out;
}

ScalingStrategy from_abc(const AbcParams& abc, int L) {
    if (L < 1) {
        throw std::invalid_argument("from_abc needs L >= 1");
    }
    if (abc.a.size() != static_cast<std::size_t>(L) ||
        abc.b.size() != static_cast<std::size_t>(L)) {
        throw std::invalid_argument("abc arrays must have length L");
    }
    ScalingStrategy out;
    out.L = L;
    out.p.resize(L);
    out.q.resize(L);
    out.q[0] = 2.0 * abc.a[0];
    out.p[0] = 2.0 * abc.a[0] + 2.0 * abc.b[0];
    for (int l = 2; l <= L; ++l) {
        out.q[l - 1] = 2.0 * abc.a[l - 1] - 1.0;
        out.p[l - 1] = 2.0 * abc.a[l - 1] + 2.0 * abc.b[l - 1] - 1.0;
    }
    out.r = -abc.c;
    out.provenance = "from-abc";
    return out;
}

nlohmann::json strategy_to_json(const ScalingStrategy& s) {
    s.validate();
    return nlohmann::json{
        {"L", s.L}, {"p", s.p}, {"q", s.q}, {"r", s.r}, {"provenance", s.provenance}};
}

ScalingStrategy strategy_from_json(const nlohmann::json& j) {
    ScalingStrategy s;
    s.L = j.at("L").get<int>();
    s.p = j.at("p").get<std::vector<double>>();
    s.q = j.at("q").get<std::vector<double>>();
    s.r = j.at("r").get<double>();
    s.provenance = j.value("provenance", "raw");
    s.validate();
    return s;
}

} // namespace ntklab
