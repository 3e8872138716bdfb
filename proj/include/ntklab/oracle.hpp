#pragma once

#include <optional>
#include <span>
#include <vector>

#include "ntklab/kernels.hpp"
#include "ntklab/network.hpp"
#include "ntklab/tensor.hpp"

namespace ntklab {

/// Flat handle on one model parameter; col is -1 for biases.
struct ParameterIndex {
    int layer = 1;  // 1..L
    enum class Kind { Bias, Weight } kind = Kind::Bias;
    int row = 0;
    int col = -1;
};

/// Layer-major enumeration: layer 1 biases, layer 1 weights (row-major), ...
std::vector<ParameterIndex> enumerate_parameters(const NetworkConfig& config);

/// Diagonal learning-rate tensor entry for this parameter:
/// lam_b/n^{q_l} for biases, lam_w/(n^{q_l} n_{l-1}) for weights.
double lambda_rate(const NetworkConfig& config, const ScalingStrategy& strategy,
                   const ParameterIndex& idx);

/// result[k-1][i*D + d] = d^k/dt^k f_{i;d}(theta + t*direction)|_{t=0}, k = 1..order.
/// Exact via jet propagation; order <= 5.
std::vector<std::vector<double>> directional_derivatives(const NetworkParams& params,
                                                         const NetworkConfig& config,
                                                         const Dataset& data,
                                                         std::span<const double> direction,
                                                         int order);

/// Symmetric mixed partial d^k f / d theta_{a_1} ... d theta_{a_k} for every
/// output (i, d), via the polarization identity over directional derivatives.
std::vector<double> mixed_partial(const NetworkParams& params, const NetworkConfig& config,
                                  const Dataset& data,
                                  std::span<const ParameterIndex> indices);

struct DefinitionKernels {
    Tensor H;  // [nL, nL, D, D]
    std::optional<Tensor> dH;
    std::optional<Tensor> ddI;
    std::optional<Tensor> ddII;
};

/// Output-layer kernels assembled directly from their definitions by explicit
/// summation over parameter tuples. Deliberately brute-force; refuses to run
/// past `param_cap` parameters (use the forward recursions instead).
DefinitionKernels kernels_from_definition(const NetworkParams& params,
                                          const NetworkConfig& config,
                                          const ScalingStrategy& strategy, const Dataset& data,
                                          KernelOrderFlags flags, std::size_t param_cap = 500);

/// Closed form for the type-I (k-1)-th-order NTK differential of a
/// one-hidden-layer network (L == 2), 2 <= k <= 5. Result axes:
/// [i_0..i_k, d_0..d_k], each neural extent n_L and sample extent |D|.
Tensor onehidden_typeI(const NetworkParams& params, const NetworkConfig& config,
                       const ScalingStrategy& strategy, const Dataset& data, int k);

} // namespace ntklab
