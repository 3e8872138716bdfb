#pragma once

#include <span>
#include <vector>

#include "ntklab/activation.hpp"
#include "ntklab/rng.hpp"
#include "ntklab/scaling.hpp"

namespace ntklab {

/// Widths n_0..n_L plus the order-one hyperparameters attached to each layer.
struct NetworkConfig {
    std::vector<int> widths;       // n_0 .. n_L
    Activation activation;
    std::vector<double> Cb;        // length L
    std::vector<double> Cw;        // length L
    std::vector<double> lam_b;     // length L
    std::vector<double> lam_w;     // length L
    double eta0 = 1.0;

    int depth() const { return static_cast<int>(widths.size()) - 1; }
    /// The typical width n == n_{L-1} entering all n^{p}, n^{q}, n^{r} powers.
    int typical_width() const { return widths[widths.size() - 2]; }

    void validate() const;

    /// Uniform config: all hidden widths n, hyperparameters Cb/Cw from the
    /// activation's critical preset, lambdas constant.
    static NetworkConfig make(int n0, int hidden, int nL, int L, Activation act,
                              double lam = 1.0, double eta0 = 1.0);
};

struct NetworkParams {
    // biases[l]: n_{l+1} entries; weights[l]: n_{l+1} x n_l row-major (l = 0..L-1).
    std::vector<std::vector<double>> biases;
    std::vector<std::vector<double>> weights;

    std::size_t parameter_count() const;
};

struct Dataset {
    std::size_t input_dim = 0;
    std::size_t label_dim = 0;
    std::size_t count = 0;
    std::vector<double> inputs;  // count x input_dim row-major
    std::vector<double> labels;  // count x label_dim row-major, may be empty

    bool has_labels() const { return !labels.empty(); }
    std::span<const double> input(std::size_t d) const {
        return {inputs.data() + d * input_dim, input_dim};
    }
    std::span<const double> label(std::size_t d) const {
        return {labels.data() + d * label_dim, label_dim};
    }
};

/// All preactivations of one forward pass; z[l] holds z^{(l+1)} as
/// n_{l+1} x |D| row-major (neuron-major). Output f is z.back().
struct ForwardTrace {
    std::vector<std::vector<double>> z;

    std::span<const double> layer(int l) const { return z[l - 1]; }
    const std::vector<double>& outputs() const { return z.back(); }
};

/// Gaussian initialization with Var b = Cb/n^{p_l} and
/// Var W = Cw/(n^{p_l} n_{l-1}), n = n_{L-1}. Deterministic per stream.
NetworkParams init_params(const NetworkConfig& config, const ScalingStrategy& strategy,
                          RngStream& stream);

ForwardTrace forward(const NetworkParams& params, const NetworkConfig& config,
                     const Dataset& data);

/// Random inputs normalized so (1/n0) sum_j x_j^2 = 1 per sample.
Dataset make_unit_norm_dataset(std::size_t count, std::size_t n0, RngStream& stream);

} // namespace ntklab
