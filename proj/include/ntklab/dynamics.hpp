#pragma once

#include <vector>

#include "ntklab/kernels.hpp"
#include "ntklab/network.hpp"

namespace ntklab {

/// Mean-squared-error loss over a mini-batch: L = 1/2 sum_{batch} (f - y)^2.
struct LossModel {
    std::vector<std::size_t> batch;  // sample indices in A_t
};

/// dL/df at every (output neuron j, sample alpha): f - y on batch samples,
/// zero elsewhere. `f` is nL x D neuron-major.
std::vector<double> loss_gradient(const std::vector<double>& f, const NetworkConfig& config,
                                  const Dataset& data, const LossModel& loss);

double mse_loss(const std::vector<double>& f, const NetworkConfig& config, const Dataset& data,
                const LossModel& loss);

/// One exact gradient-descent step with learning rates eta*lam_b/n^{q_l} and
/// eta*lam_w/(n^{q_l} n_{l-1}), eta = n^r eta0. Reverse accumulation.
NetworkParams gd_step(const NetworkParams& params, const NetworkConfig& config,
                      const ScalingStrategy& strategy, const Dataset& data,
                      const LossModel& loss);

/// df_{i;d}/dtheta_mu for every output; rows indexed i*D+d, columns in
/// enumerate_parameters order.
std::vector<std::vector<double>> output_gradients(const NetworkParams& params,
                                                  const NetworkConfig& config,
                                                  const Dataset& data);

/// Taylor-expanded output update truncated at order 1..3:
/// f - eta H g + 1/2 eta^2 dH g g - 1/6 eta^3 ddI g g g. Returns nL x D.
std::vector<double> taylor_predict_outputs(const KernelStack& kernels,
                                           const ForwardTrace& trace, const NetworkConfig& config,
                                           const Dataset& data, const LossModel& loss,
                                           double eta, int order);

/// Taylor-expanded NTK update truncated at order 1..2: the symmetrized dNTK
/// term, then the symmetrized ddI plus ddII terms. Returns [nL, nL, D, D].
Tensor taylor_predict_ntk(const KernelStack& kernels, const ForwardTrace& trace,
                          const NetworkConfig& config, const Dataset& data,
                          const LossModel& loss, double eta, int order);

} // namespace ntklab
