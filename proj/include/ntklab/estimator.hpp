#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ntklab/kernels.hpp"
#include "ntklab/network.hpp"
#include "ntklab/stats.hpp"

namespace ntklab {

enum class Parity { Even, Odd };

/// A single real per network instance. Kernel-differential observables carry
/// their eta powers inside the value (those are the gauge-invariant
/// combinations); the bare-NTK observable needs one extra eta power to be
/// gauge-invariant, recorded in gauge_eta_weight().
struct Observable {
    enum class Kind {
        PreactSq,    // (z^{(l)}_{0;0})^2
        NtkMean,     // H^{(l)}[0,0;0,0]
        ZDntk,       // z * eta^2 * dH  (all indices 0)
        Ddntk1Mean,  // eta^3 * ddI
        Ddntk2Mean,  // eta^3 * ddII
        HodiffEven,  // eta^{2m+1} * d^{2m}_I H   (k = 2m+1, L = 2 only)
        HodiffOdd,   // eta^{2m} * z * d^{2m-1}_I H   (k = 2m, L = 2 only)
    };

    Kind kind = Kind::PreactSq;
    int layer = 1;  // PreactSq / NtkMean
    int m = 1;      // Hodiff*

    std::string name() const;
    static Observable parse(const std::string& name);

    int gauge_eta_weight() const { return kind == Kind::NtkMean ? 1 : 0; }

    static Observable preact_sq(int layer) { return {Kind::PreactSq, layer, 1}; }
    static Observable ntk_mean(int layer) { return {Kind::NtkMean, layer, 1}; }
    static Observable z_dntk() { return {Kind::ZDntk, 0, 1}; }
    static Observable ddntk1_mean() { return {Kind::Ddntk1Mean, 0, 1}; }
    static Observable ddntk2_mean() { return {Kind::Ddntk2Mean, 0, 1}; }
    static Observable hodiff(int m, Parity parity) {
        return {parity == Parity::Even ? Kind::HodiffEven : Kind::HodiffOdd, 0, m};
    }
};

struct EnsembleOptions {
    int threads = 0;  // 0 = hardware concurrency
    double max_exclusion_fraction = 0.10;
    /// Average over all diagonal components instead of the (0,...,0) one.
    bool component_mean = false;
};

struct EnsembleResult {
    double mean = 0.0;
    double stderror = 0.0;  // sample std / sqrt(M)
    int used = 0;
    int excluded = 0;
};

/// One instance's observable values, sharing the forward pass and kernel
/// stack across observables. Consumes `stream` for the parameter draw.
std::vector<double> evaluate_observables(std::span<const Observable> obs,
                                         const NetworkConfig& config,
                                         const ScalingStrategy& strategy, const Dataset& data,
                                         RngStream& stream, bool component_mean = false);

/// Monte Carlo expectation over M init draws with streams
/// (root_seed, stream_base + 0..M-1). Member evaluation may run on a thread
/// pool; aggregation is a fixed-order fold, so results are independent of
/// thread count. Non-finite member values are excluded and counted; more than
/// max_exclusion_fraction excluded is a hard error.
std::vector<EnsembleResult> ensemble_expectation(std::span<const Observable> obs,
                                                 const NetworkConfig& config,
                                                 const ScalingStrategy& strategy,
                                                 const Dataset& data, int M,
                                                 std::uint64_t root_seed,
                                                 std::uint64_t stream_base = 0,
                                                 const EnsembleOptions& options = {});

EnsembleResult ensemble_expectation(const Observable& obs, const NetworkConfig& config,
                                    const ScalingStrategy& strategy, const Dataset& data,
                                    int M, std::uint64_t root_seed,
                                    const EnsembleOptions& options = {});

struct SweepRow {
    double s = 0.0;
    int n = 0, L = 0, M = 0;
    std::string observable;
    double mean = 0.0, stderror = 0.0;
    bool flagged = false;  // |mean| consistent with zero at 2 sigma
};

struct SweepFit {
    std::string observable;
    double slope = 0.0, slope_stderr = 0.0, intercept = 0.0;
    int points = 0;
    bool valid = false;
};

struct SweepResult {
    std::vector<SweepRow> rows;
    std::vector<SweepFit> fits;  // log|mean| vs log n (or log L for depth sweeps)
};

struct SweepOptions {
    Activation activation = Activation(ActivationKind::Tanh);
    int n0 = 16;
    int nL = 1;
    double eta0 = 1.0;
    int threads = 0;
    bool component_mean = false;
};

/// Ensemble means at each width (all hidden widths = n) under the
/// meta-family strategy for s, with log-log exponent fits per observable.
/// lam presets: 1 for width sweeps.
SweepResult width_sweep(std::span<const Observable> obs, double s, int L,
                        std::span<const int> widths, int M, std::uint64_t root_seed,
                        const SweepOptions& options = {});

/// Depth sweep at fixed width; lam preset 1/L so the layer-additive NTK stays
/// order one as L grows.
SweepResult depth_sweep(std::span<const Observable> obs, double s, int n,
                        std::span<const int> depths, int M, std::uint64_t root_seed,
                        const SweepOptions& options = {});

/// Higher-order differential sweep on one-hidden-layer closed forms.
/// Expected slope: -m(1-s) for even parity, -(m(1-s)+s) for odd.
SweepResult hodiff_sweep(int m, Parity parity, double s, std::span<const int> widths, int M,
                         std::uint64_t root_seed, const SweepOptions& options = {});

} // namespace ntklab
