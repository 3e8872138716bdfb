// Acceptance suite: one check per release criterion, each printed as a
// single PASS/FAIL line with its measured numbers and wall time.

#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>
#include <iostream>
#include <sstream>
#include <vector>

#include "ntklab/dynamics.hpp"
#include "ntklab/estimator.hpp"
#include "ntklab/oracle.hpp"

using namespace ntklab;

namespace {

struct Criterion {
    int id;
    const char* name;
    double budget_seconds;
    std::function<bool(std::ostream&)> run;
};

double rel_diff(const Tensor& a, const Tensor& b) {
    const double scale = std::max(b.max_abs(), 1e-300);
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
    }
    return worst;
}

ScalingStrategy random_strategy(RngStream& rng, int L) {
    ScalingStrategy s;
    s.L = L;
    s.p.resize(L);
    s.q.resize(L);
    for (int l = 0; l < L; ++l) {
        s.p[l] = 2.0 * rng.uniform() - 1.0;
        s.q[l] = 2.0 * rng.uniform() - 1.0;
    }
    s.r = 2.0 * rng.uniform() - 1.0;
    return s;
}

bool check_slope(std::ostream& os, const SweepResult& result, const std::string& obs,
                 double expected, double tol) {
    for (const auto& fit : result.fits) {
        if (fit.observable != obs) continue;
        const bool ok = fit.valid && std::abs(fit.slope - expected) <= tol;
        os << " " << obs << " slope " << fit.slope << " (want " << expected << " +- " << tol
           << (ok ? ")" : ") <-- MISS");
        return ok;
    }
    os << " " << obs << " fit missing";
    return false;
}

// ---------------------------------------------------------------- criterion 1
bool criterion_oracle_equivalence(std::ostream& os) {
    const char* acts[3] = {"linear", "tanh", "gelu"};
    const int ns[3] = {2, 3, 4};
    const int Ls[2] = {2, 3};
    const int Ds[2] = {1, 2};

    RngStream meta(1001, 0);
    double worst = 0.0;
    for (int inst = 0; inst < 50; ++inst) {
        const char* act = acts[inst % 3];
        const int n = ns[(inst / 3) % 3];
        const int L = Ls[(inst / 9) % 2];
        const int D = Ds[(inst / 18) % 2];

        auto cfg = NetworkConfig::make(n, n, n, L, Activation::from_name(act));
        const auto strategy = random_strategy(meta, L);
        RngStream stream(2000 + inst, 0);
        const auto params = init_params(cfg, strategy, stream);
        RngStream dstream(3000 + inst, 0);
        const auto data = make_unit_norm_dataset(D, n, dstream);

        const auto stack = compute_kernels(params, cfg, strategy, data, KernelOrder::DDNTK);
        const auto defn = kernels_from_definition(
            params, cfg, strategy, data, KernelOrderFlags::for_order(KernelOrder::DDNTK));

        worst = std::max(worst, rel_diff(stack.output().H, defn.H));
        worst = std::max(worst, rel_diff(*stack.output().dH, *defn.dH));
        worst = std::max(worst, rel_diff(*stack.output().ddI, *defn.ddI));
        worst = std::max(worst, rel_diff(*stack.output().ddII, *defn.ddII));
    }
    os << " 50 instances, max rel err " << worst << " (tol 1e-10)";
    return worst <= 1e-10;
}

// ---------------------------------------------------------------- criterion 2
bool criterion_gauge_invariance(std::ostream& os) {
    RngStream meta(42, 0);
    double worst_tensor = 0.0, worst_obs = 0.0;

    const Observable obs[] = {
        Observable::preact_sq(1),  Observable::ntk_mean(1),
        Observable::ntk_mean(2),   Observable::z_dntk(),
        Observable::ddntk1_mean(), Observable::ddntk2_mean(),
        Observable::hodiff(1, Parity::Even), Observable::hodiff(2, Parity::Even),
        Observable::hodiff(1, Parity::Odd),  Observable::hodiff(2, Parity::Odd),
    };

    for (int trial = 0; trial < 20; ++trial) {
        const auto strategy = random_strategy(meta, 3);
        const double g = 2.0 * meta.gaussian();
        const auto gauged = gauge_transform(strategy, g);

        // tensor-level invariance of eta H, eta^2 dH, eta^3 ddNTKs
        {
            auto cfg = NetworkConfig::make(3, 5, 2, 3, Activation::from_name("tanh"));
            RngStream s1(500 + trial, 0), s2(500 + trial, 0);
            const auto p1 = init_params(cfg, strategy, s1);
            const auto p2 = init_params(cfg, gauged, s2);
            RngStream dstream(600 + trial, 0);
            const auto data = make_unit_norm_dataset(2, 3, dstream);
            const auto k1 = compute_kernels(p1, cfg, strategy, data, KernelOrder::DDNTK);
            const auto k2 = compute_kernels(p2, cfg, gauged, data, KernelOrder::DDNTK);
            const double e1 = global_eta(cfg, strategy), e2 = global_eta(cfg, gauged);

            auto weighted = [&](const Tensor& a, const Tensor& b, int w) {
                const double wa = std::pow(e1, w), wb = std::pow(e2, w);
                const double scale = std::max(std::abs(wa) * a.max_abs(), 1e-300);
                double worst = 0.0;
                for (std::size_t i = 0; i < a.size(); ++i) {
                    worst = std::max(worst, std::abs(wa * a[i] - wb * b[i]) / scale);
                }
                return worst;
            };
            worst_tensor = std::max(worst_tensor, weighted(k1.output().H, k2.output().H, 1));
            worst_tensor =
                std::max(worst_tensor, weighted(*k1.output().dH, *k2.output().dH, 2));
            worst_tensor =
                std::max(worst_tensor, weighted(*k1.output().ddI, *k2.output().ddI, 3));
            worst_tensor =
                std::max(worst_tensor, weighted(*k1.output().ddII, *k2.output().ddII, 3));
        }

        // per-instance sweep observables (one-hidden-layer so the closed
        // forms are in play too)
        {
            auto cfg = NetworkConfig::make(4, 6, 1, 2, Activation::from_name("tanh"));
            auto strat2 = random_strategy(meta, 2);
            const auto gauged2 = gauge_transform(strat2, g);
            RngStream dstream(700 + trial, 0);
            const auto data = make_unit_norm_dataset(1, 4, dstream);
            RngStream s1(800 + trial, 0), s2(800 + trial, 0);
            const auto v1 = evaluate_observables(obs, cfg, strat2, data, s1);
            const auto v2 = evaluate_observables(obs, cfg, gauged2, data, s2);
            const double e1 = global_eta(cfg, strat2), e2 = global_eta(cfg, gauged2);
            for (std::size_t k = 0; k < std::size(obs); ++k) {
                const int w = obs[k].gauge_eta_weight();
                const double a = std::pow(e1, w) * v1[k];
                const double b = std::pow(e2, w) * v2[k];
                worst_obs =
                    std::max(worst_obs, std::abs(a - b) / std::max(std::abs(a), 1e-300));
            }
        }
    }
    os << " 20 trials, tensor err " << worst_tensor << ", observable err " << worst_obs
       << " (tol 1e-12)";
    return worst_tensor <= 1e-12 && worst_obs <= 1e-12;
}

// ---------------------------------------------------------------- criterion 3
bool criterion_dntk_scaling(std::ostream& os) {
    const Observable obs[] = {Observable::z_dntk()};
    const int widths[] = {16, 32, 64, 128};
    SweepOptions opts;
    opts.n0 = 16;
    bool ok = true;
    for (double s : {0.0, 0.5, 1.0}) {
        const auto result = width_sweep(obs, s, 2, widths, 1000, 20240001, opts);
        os << " [s=" << s << "]";
        ok = check_slope(os, result, "z_dntk", -1.0, 0.1) && ok;
    }
    return ok;
}

// ---------------------------------------------------------------- criterion 4
bool criterion_ddntk_scaling(std::ostream& os) {
    const Observable obs[] = {Observable::ddntk1_mean(), Observable::ddntk2_mean()};
    const int widths[] = {8, 16, 32, 64};
    SweepOptions opts;
    opts.n0 = 16;
    bool ok = true;
    for (double s : {0.0, 0.5, 1.0}) {
        const auto result = width_sweep(obs, s, 2, widths, 1000, 20240002, opts);
        os << " [s=" << s << "]";
        ok = check_slope(os, result, "ddntk1_mean", -(1.0 - s), 0.1) && ok;
        ok = check_slope(os, result, "ddntk2_mean", -(1.0 - s), 0.1) && ok;
    }
    return ok;
}

// ---------------------------------------------------------------- criterion 5
bool criterion_hodiff_hierarchy(std::ostream& os) {
    const int widths[] = {64, 128, 256, 512, 1024};
    SweepOptions opts;
    opts.n0 = 16;
    bool ok = true;
    for (double s : {0.0, 0.5, 1.0}) {
        os << " [s=" << s << "]";
        {
            const auto r = hodiff_sweep(1, Parity::Even, s, widths, 4000, 20240003, opts);
            ok = check_slope(os, r, "hodiff_even(1)", -(1.0 - s), 0.1) && ok;
        }
        {
            const auto r = hodiff_sweep(2, Parity::Even, s, widths, 4000, 20240004, opts);
            ok = check_slope(os, r, "hodiff_even(2)", -2.0 * (1.0 - s), 0.15) && ok;
        }
        {
            const auto r = hodiff_sweep(1, Parity::Odd, s, widths, 4000, 20240005, opts);
            ok = check_slope(os, r, "hodiff_odd(1)", -(1.0 * (1.0 - s) + s), 0.15) && ok;
        }
    }
    return ok;
}

// ---------------------------------------------------------------- criterion 6
bool criterion_layer_scalings(std::ostream& os) {
    const Observable obs[] = {Observable::preact_sq(1), Observable::preact_sq(2),
                              Observable::preact_sq(3), Observable::ntk_mean(1),
                              Observable::ntk_mean(2),  Observable::ntk_mean(3)};
    const int widths[] = {64, 128, 256, 512};
    SweepOptions opts;
    opts.n0 = 16;
    bool ok = true;
    for (double s : {0.0, 0.5, 1.0}) {
        const auto result = width_sweep(obs, s, 3, widths, 800, 20240006, opts);
        os << " [s=" << s << "]";
        ok = check_slope(os, result, "preact_sq(1)", 0.0, 0.1) && ok;
        ok = check_slope(os, result, "preact_sq(2)", 0.0, 0.1) && ok;
        ok = check_slope(os, result, "preact_sq(3)", -s, 0.1) && ok;
        ok = check_slope(os, result, "ntk_mean(1)", 0.0, 0.1) && ok;
        ok = check_slope(os, result, "ntk_mean(2)", 0.0, 0.1) && ok;
        ok = check_slope(os, result, "ntk_mean(3)", -s, 0.1) && ok;
    }
    return ok;
}

// ---------------------------------------------------------------- criterion 7
bool criterion_taylor_orders(std::ostream& os) {
    auto cfg = NetworkConfig::make(8, 16, 2, 3, Activation::from_name("tanh"));
    const auto strategy = derive_meta_family(0.0, 3);
    RngStream stream(20240007, 0);
    const auto params = init_params(cfg, strategy, stream);

    RngStream dstream(20240007, 1);
    Dataset data = make_unit_norm_dataset(4, 8, dstream);
    data.label_dim = 2;
    data.labels.resize(data.count * 2);
    dstream.fill_gaussian(data.labels, 0.0, 1.0);
    const LossModel loss{{0, 1, 2}};  // sample 3 held out

    const auto trace = forward(params, cfg, data);
    const auto stack = compute_kernels(params, cfg, strategy, data, KernelOrder::DDNTK);

    bool ok = true;
    auto scan = [&](bool ntk_target, int order) {
        std::vector<std::pair<double, double>> pts;
        for (int k = 0; k < 8; ++k) {
            const double eta0 = 1e-2 * std::pow(10.0, k / 7.0);
            auto cfg_eta = cfg;
            cfg_eta.eta0 = eta0;
            const double eta = global_eta(cfg_eta, strategy);
            const auto stepped = gd_step(params, cfg_eta, strategy, data, loss);
            double resid = 0.0;
            if (!ntk_target) {
                const auto actual = forward(stepped, cfg_eta, data).outputs();
                const auto pred =
                    taylor_predict_outputs(stack, trace, cfg_eta, data, loss, eta, order);
                for (std::size_t i = 0; i < actual.size(); ++i) {
                    resid = std::max(resid, std::abs(actual[i] - pred[i]));
                }
            } else {
                const auto after = compute_kernels(stepped, cfg_eta, strategy, data,
                                                   KernelOrder::NTK);
                const auto pred =
                    taylor_predict_ntk(stack, trace, cfg_eta, data, loss, eta, order);
                const auto& Ha = after.output().H;
                for (std::size_t i = 0; i < Ha.size(); ++i) {
                    resid = std::max(resid, std::abs(Ha[i] - pred[i]));
                }
            }
            pts.push_back({eta0, resid});
        }
        return fit_loglog_slope(pts).slope;
    };

    for (int order : {1, 2, 3}) {
        const double slope = scan(false, order);
        const double want = order + 1.0;
        const bool good = std::abs(slope - want) <= 0.2;
        os << " f-order" << order << " slope " << slope << (good ? "" : " <-- MISS");
        ok = ok && good;
    }
    for (int order : {1, 2}) {
        const double slope = scan(true, order);
        const double want = order + 1.0;
        const bool good = std::abs(slope - want) <= 0.2;
        os << " H-order" << order << " slope " << slope << (good ? "" : " <-- MISS");
        ok = ok && good;
    }
    return ok;
}

// ---------------------------------------------------------------- criterion 8
bool criterion_depth_proportionality(std::ostream& os) {
    const Observable obs[] = {Observable::ddntk1_mean()};
    const int depths[] = {3, 6, 12};
    SweepOptions opts;
    opts.n0 = 16;
    const auto result = depth_sweep(obs, 0.0, 32, depths, 2000, 20240008, opts);
    os << " (soft criterion; tanh criticality preset is verified)";
    return check_slope(os, result, "ddntk1_mean", 1.0, 0.3);
}

// ---------------------------------------------------------------- criterion 9
bool criterion_family_algebra(std::ostream& os) {
    bool ok = true;
    // exponent tables, exact equality of stored reals
    for (double s : {0.0, 0.25, 0.5, 0.75, 1.0}) {
        for (int L : {2, 5, 10}) {
            const auto st = derive_meta_family(s, L);
            for (int l = 0; l < L - 1; ++l) ok = ok && st.p[l] == 0.0 && st.q[l] == 0.0;
            ok = ok && st.p[L - 1] == s && st.q[L - 1] == s && st.r == s;
            ok = ok && validate_meta_principles(st).all_pass();
        }
    }
    os << " tables " << (ok ? "exact" : "WRONG");

    // abc round trip at 1e-15
    RngStream rng(20240009, 0);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const int L = 1 + static_cast<int>(rng.uniform() * 9);
        const auto s = random_strategy(rng, L);
        const auto back = from_abc(to_abc(s), L);
        for (int l = 0; l < L; ++l) {
            worst = std::max(worst, std::abs(back.p[l] - s.p[l]));
            worst = std::max(worst, std::abs(back.q[l] - s.q[l]));
        }
        worst = std::max(worst, std::abs(back.r - s.r));
    }
    os << ", abc round-trip err " << worst;
    ok = ok && worst <= 1e-15;

    // 100 perturbations, each breaking exactly one constraint
    int wrong = 0;
    const int Ls[3] = {2, 5, 10};
    for (int trial = 0; trial < 100; ++trial) {
        const int L = Ls[trial % 3];
        auto st = derive_meta_family(rng.uniform(), L);
        const double delta = 0.1 + rng.uniform();
        const int which = trial % 3 == 0 ? 0 : (trial % 3 == 1 ? 1 : 2);
        // p_1 sits only in criticality, q_1 only in equivalence (L >= 2),
        // r only in finite learning
        if (which == 0) st.p[0] += delta;
        if (which == 1) st.q[0] += delta;
        if (which == 2) st.r += delta;
        const auto rep = validate_meta_principles(st);
        const bool expected_ok =
            (rep.criticality == (which != 0)) && (rep.lr_equivalence == (which != 1)) &&
            (rep.finite_learning == (which != 2));
        if (!expected_ok) ++wrong;
    }
    os << ", " << (100 - wrong) << "/100 perturbations classified";
    return ok && wrong == 0;
}

} // namespace

int main(int argc, char** argv) {
    std::vector<int> only;
    for (int i = 1; i < argc; ++i) {
        if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) {
            only.push_back(std::atoi(argv[++i]));
        }
    }

    const Criterion criteria[] = {
        {1, "oracle equivalence (recursions vs definitions)", 120, criterion_oracle_equivalence},
        {2, "gauge invariance of kernels and observables", 60, criterion_gauge_invariance},
        {3, "dNTK width scaling, slope -1 for all s", 600, criterion_dntk_scaling},
        {4, "ddNTK width scaling, slope -(1-s)", 1800, criterion_ddntk_scaling},
        {5, "higher-order differential hierarchy (one hidden layer)", 900,
         criterion_hodiff_hierarchy},
        {6, "preactivation/NTK layer scalings", 600, criterion_layer_scalings},
        {7, "Taylor truncation-error orders", 300, criterion_taylor_orders},
        {8, "ddNTK depth proportionality", 1800, criterion_depth_proportionality},
        {9, "scaling-family algebra", 1, criterion_family_algebra},
    };

    bool all_ok = true;
    for (const auto& crit : criteria) {
        if (!only.empty() &&
            std::find(only.begin(), only.end(), crit.id) == only.end()) {
            continue;
        }
        const auto start = std::chrono::steady_clock::now();
        std::ostringstream detail;
        bool ok = false;
        try {
            ok = crit.run(detail);
        } catch (const std::exception& e) {
            detail << " exception: " << e.what();
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const bool in_budget = secs <= crit.budget_seconds;
        const bool pass = ok && in_budget;
        std::cout << "criterion " << crit.id << " [" << (pass ? "PASS" : "FAIL") << "] "
                  << crit.name << ":" << detail.str() << " (" << secs << " s"
                  << (in_budget ? "" : ", OVER BUDGET") << ")\n"
                  << std::flush;
        all_ok = all_ok && pass;
    }
    std::cout << (all_ok ? "ACCEPTANCE: all criteria passed" : "ACCEPTANCE: FAILURES present")
              << "\n";
    return all_ok ? 0 : 1;
}
