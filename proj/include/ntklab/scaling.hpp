#pragma once

#include <string>
#include <vector>

#include <json.hpp>

namespace ntklab {

/// Width-scaling exponents: p_l on initialization variances, q_l on the
/// per-layer learning-rate tensor, r on the global learning rate. The typical
/// width these exponentiate is n_{L-1} throughout.
struct ScalingStrategy {
    int L = 1;
    std::vector<double> p;
    std::vector<double> q;
    double r = 0.0;
    std::string provenance = "raw";

    void validate() const;
};

struct ConstraintReport {
    bool criticality = false;      // p_1 = ... = p_{L-1} = 0
    bool lr_equivalence = false;   // q_{l+1} = p_{l+1} + q_l for all l
    bool finite_learning = false;  // r = q_L

    bool all_pass() const { return criticality && lr_equivalence && finite_learning; }
    std::string describe() const;
};

/// One-parameter family indexed by s in [0,1]: p = (0,..,0,s), q = (0,..,0,s),
/// r = s. s = 0 is neural-tangent scaling, s = 1 maximal-update scaling.
/// Values of s outside [0,1] warn on stderr but are allowed.
ScalingStrategy derive_meta_family(double s, int L);

/// q_l -> q_l + g, r -> r + g; p unchanged. No physical consequence.
ScalingStrategy gauge_transform(const ScalingStrategy& strategy, double g);

/// Checks the three constraints with exact equality of stored reals.
ConstraintReport validate_meta_principles(const ScalingStrategy& strategy);

/// Emergent scale L / n^{1-s}.
double gamma(long n, int L, double s);

struct AbcParams {
    std::vector<double> a;
    std::vector<double> b;
    double c = 0.0;
};

AbcParams to_abc(const ScalingStrategy& strategy);
ScalingStrategy from_abc(const AbcParams& abc, int L);

nlohmann::json strategy_to_json(const ScalingStrategy& s);
ScalingStrategy strategy_from_json(const nlohmann::json& j);

} // namespace ntklab
