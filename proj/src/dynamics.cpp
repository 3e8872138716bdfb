#include "ntklab/dynamics.hpp"

#include <cmath>
#include <stdexcept>

namespace ntklab {

namespace {

void check_batch(const Dataset& data, const LossModel& loss) {
    if (!data.has_labels()) {
        throw std::invalid_argument("loss needs labels for all batch samples");
    }
    for (std::size_t a : loss.batch) {
        if (a >= data.count) {
            throw std::invalid_argument("batch sample index out of range");
        }
    }
}

// dL/dz backward pass; returns per-layer deltas (n_l x D).
std::vector<std::vector<double>> backprop_deltas(const NetworkParams& params,
                                                 const NetworkConfig& config,
                                                 const ForwardTrace& trace,
                                                 const std::vector<double>& out_grad) {
    const int L = config.depth();
    const std::size_t D = trace.z[0].size() / static_cast<std::size_t>(config.widths[1]);

    std::vector<std::vector<double>> delta(L);
    delta[L - 1] = out_grad;
    for (int l = L - 1; l >= 1; --l) {
        const auto n_l = static_cast<std::size_t>(config.widths[l]);
        const auto n_up = static_cast<std::size_t>(config.widths[l + 1]);
        const auto& W_up = params.weights[l];  // n_{l+1} x n_l
        const auto& z_l = trace.z[l - 1];
        auto& dl = delta[l - 1];
        dl.assign(n_l * D, 0.0);
        for (std::size_t i = 0; i < n_up; ++i) {
            const double* wrow = W_up.data() + i * n_l;
            const double* up = delta[l].data() + i * D;
            for (std::size_t j = 0; j < n_l; ++j) {
                const double w = wrow[j];
                double* row = dl.data() + j * D;
                for (std::size_t d = 0; d < D; ++d) row[d] += w * up[d];
            }
        }
        for (std::size_t j = 0; j < n_l; ++j) {
            for (std::size_t d = 0; d < D; ++d) {
                dl[j * D + d] *= config.activation.d1(z_l[j * D + d]);
            }
        }
    }
    return delta;
}

} // namespace

std::vector<double> loss_gradient(const std::vector<double>& f, const NetworkConfig& config,
                                  const Dataset& data, const LossModel& loss) {
    check_batch(data, loss);
    const auto nL = static_cast<std::size_t>(config.widths[config.depth()]);
    std::vector<double> g(nL * data.count, 0.0);
    for (std::size_t a : loss.batch) {
        const auto y = data.label(a);
        for (std::size_t j = 0; j < nL; ++j) {
            g[j * data.count + a] = f[j * data.count + a] - y[j];
        }
    }
    return g;
}

double mse_loss(const std::vector<double>& f, const NetworkConfig& config, const Dataset& data,
                const LossModel& loss) {
    check_batch(data, loss);
    const auto nL = static_cast<std::size_t>(config.widths[config.depth()]);
    double acc = 0.0;
    for (std::size_t a : loss.batch) {
        const auto y = data.label(a);
        for (std::size_t j = 0; j < nL; ++j) {
            const double r = f[j * data.count + a] - y[j];
            acc += r * r;
        }
    }
    return 0.5 * acc;
}

NetworkParams gd_step(const NetworkParams& params, const NetworkConfig& config,
                      const ScalingStrategy& strategy, const Dataset& data,
                      const LossModel& loss) {
    config.validate();
    strategy.validate();
    const int L = config.depth();
    const std::size_t D = data.count;
    const double n_typ = config.typical_width();
    const double eta = global_eta(config, strategy);

    const ForwardTrace trace = forward(params, config, data);
    const auto g = loss_gradient(trace.outputs(), config, data, loss);
    const auto delta = backprop_deltas(params, config, trace, g);

    NetworkParams next = params;
    for (int l = 1; l <= L; ++l) {
        const auto n_out = static_cast<std::size_t>(config.widths[l]);
        const auto n_in = static_cast<std::size_t>(config.widths[l - 1]);
        const double inv_nq = std::pow(n_typ, -strategy.q[l - 1]);
        const double rate_b = eta * config.lam_b[l - 1] * inv_nq;
        const double rate_w =
            eta * config.lam_w[l - 1] * inv_nq / static_cast<double>(n_in);
        const auto& dl = delta[l - 1];

        auto& b = next.biases[l - 1];
        for (std::size_t i = 0; i < n_out; ++i) {
            double acc = 0.0;
            for (std::size_t d = 0; d < D; ++d) acc += dl[i * D + d];
            b[i] -= rate_b * acc;
        }

        auto& W = next.weights[l - 1];
        for (std::size_t i = 0; i < n_out; ++i) {
            for (std::size_t j = 0; j < n_in; ++j) {
                double acc = 0.0;
                if (l == 1) {
                    for (std::size_t d = 0; d < D; ++d) {
                        acc += dl[i * D + d] * data.input(d)[j];
                    }
                } else {
                    const auto& z_prev = trace.z[l - 2];
                    for (std::size_t d = 0; d < D; ++d) {
                        acc += dl[i * D + d] * config.activation.value(z_prev[j * D + d]);
                    }
                }
                W[i * n_in + j] -= rate_w * acc;
            }
        }
    }
    return next;
}

std::vector<std::vector<double>> output_gradients(const NetworkParams& params,
                                                  const NetworkConfig& config,
                                                  const Dataset& data) {
    config.validate();
    const int L = config.depth();
    const std::size_t D = data.count;
    const auto nL = static_cast<std::size_t>(config.widths[L]);
    const ForwardTrace trace = forward(params, config, data);

    std::size_t P = 0;
    for (int l = 1; l <= L; ++l) {
        P += static_cast<std::size_t>(config.widths[l]) *
                 static_cast<std::size_t>(config.widths[l - 1]) +
             static_cast<std::size_t>(config.widths[l]);
    }

    std::vector<std::vector<double>> result(nL * D, std::vector<double>(P, 0.0));
    std::vector<double> seed(nL * D);
    for (std::size_t i = 0; i < nL; ++i) {
        for (std::size_t d = 0; d < D; ++d) {
            std::fill(seed.begin(), seed.end(), 0.0);
            seed[i * D + d] = 1.0;
            const auto delta = backprop_deltas(params, config, trace, seed);

            auto& row = result[i * D + d];
            std::size_t off = 0;
            for (int l = 1; l <= L; ++l) {
                const auto n_out = static_cast<std::size_t>(config.widths[l]);
                const auto n_in = static_cast<std::size_t>(config.widths[l - 1]);
                const auto& dl = delta[l - 1];
                for (std::size_t ii = 0; ii < n_out; ++ii) row[off + ii] = dl[ii * D + d];
                off += n_out;
                for (std::size_t ii = 0; ii < n_out; ++ii) {
                    const double dv = dl[ii * D + d];
                    for (std::size_t j = 0; j < n_in; ++j) {
                        double a;
                        if (l == 1) {
                            a = data.input(d)[j];
                        } else {
                            a = config.activation.value(trace.z[l - 2][j * D + d]);
                        }
                        row[off + ii * n_in + j] = dv * a;
                    }
                }
                off += n_out * n_in;
            }
        }
    }
    return result;
}

std::vector<double> taylor_predict_outputs(const KernelStack& kernels,
                                           const ForwardTrace& trace, const NetworkConfig& config,
                                           const Dataset& data, const LossModel& loss,
                                           double eta, int order) {
    if (order < 1 || order > 3) {
        throw std::invalid_argument("output prediction supports truncation orders 1..3");
    }
    const auto& top = kernels.output();
    if (order >= 2 && !top.flags.dntk) {
        throw std::invalid_argument("truncation order 2 needs the dNTK in the stack");
    }
    if (order >= 3 && !top.flags.ddI) {
        throw std::invalid_argument("truncation order 3 needs the type-I ddNTK in the stack");
    }

    const auto nL = static_cast<std::size_t>(config.widths[config.depth()]);
    const std::size_t D = data.count;
    const auto g = loss_gradient(trace.outputs(), config, data, loss);

    std::vector<double> f = trace.outputs();

    for (std::size_t i = 0; i < nL; ++i) {
        for (std::size_t d = 0; d < D; ++d) {
            double acc = 0.0;
            for (std::size_t j = 0; j < nL; ++j) {
                for (std::size_t a = 0; a < D; ++a) {
                    const double gv = g[j * D + a];
                    if (gv == 0.0) continue;
                    acc += top.H.data()[((i * nL + j) * D + d) * D + a] * gv;
                }
            }
            f[i * D + d] -= eta * acc;
        }
    }

    if (order >= 2 && top.dH.has_value()) {
        const auto& dH = *top.dH;
        for (std::size_t i = 0; i < nL; ++i) {
            for (std::size_t d = 0; d < D; ++d) {
                double acc = 0.0;
                for (std::size_t j1 = 0; j1 < nL; ++j1)
                    for (std::size_t a1 = 0; a1 < D; ++a1) {
                        const double g1 = g[j1 * D + a1];
                        if (g1 == 0.0) continue;
                        for (std::size_t j2 = 0; j2 < nL; ++j2)
                            for (std::size_t a2 = 0; a2 < D; ++a2) {
                                const double g2 = g[j2 * D + a2];
                                if (g2 == 0.0) continue;
                                acc += dH.data()[((((i * nL + j1) * nL + j2) * D + d) * D + a1) *
                                                     D +
                                                 a2] *
                                       g1 * g2;
                            }
                    }
                f[i * D + d] += 0.5 * eta * eta * acc;
            }
        }
    }

    if (order >= 3 && top.ddI.has_value()) {
        const auto& ddI = *top.ddI;
        for (std::size_t i = 0; i < nL; ++i) {
            for (std::size_t d = 0; d < D; ++d) {
                double acc = 0.0;
                for (std::size_t j1 = 0; j1 < nL; ++j1)
                    for (std::size_t a1 = 0; a1 < D; ++a1) {
                        const double g1 = g[j1 * D + a1];
                        if (g1 == 0.0) continue;
                        for (std::size_t j2 = 0; j2 < nL; ++j2)
                            for (std::size_t a2 = 0; a2 < D; ++a2) {
                                const double g12 = g1 * g[j2 * D + a2];
                                if (g12 == 0.0) continue;
                                for (std::size_t j3 = 0; j3 < nL; ++j3)
                                    for (std::size_t a3 = 0; a3 < D; ++a3) {
                                        const double g3 = g[j3 * D + a3];
                                        if (g3 == 0.0) continue;
                                        acc += ddI.data()[((((((i * nL + j1) * nL + j2) * nL +
                                                              j3) *
                                                                 D +
                                                             d) *
                                                                D +
                                                            a1) *
                                                               D +
                                                           a2) *
                                                              D +
                                                          a3] *
                                               g12 * g3;
                                    }
                            }
                    }
                f[i * D + d] -= eta * eta * eta / 6.0 * acc;
            }
        }
    }
    return f;
}

Tensor taylor_predict_ntk(const KernelStack& kernels, const ForwardTrace& trace,
                          const NetworkConfig& config, const Dataset& data,
                          const LossModel& loss, double eta, int order) {
    if (order < 1 || order > 2) {
        throw std::invalid_argument("NTK prediction supports truncation orders 1..2");
    }
    const auto& top = kernels.output();
    if (!top.flags.dntk) {
        throw std::invalid_argument("NTK prediction needs the dNTK in the stack");
    }
    if (order >= 2 && !(top.flags.ddI && top.flags.ddII)) {
        throw std::invalid_argument("NTK prediction order 2 needs both ddNTKs in the stack");
    }

    const auto nL = static_cast<std::size_t>(config.widths[config.depth()]);
    const std::size_t D = data.count;
    const auto g = loss_gradient(trace.outputs(), config, data, loss);

    Tensor Hnew = top.H;
    auto dh_at = [&](std::size_t i0, std::size_t i1, std::size_t j, std::size_t d0,
                     std::size_t d1, std::size_t a) {
        return top.dH.has_value()
                   ? top.dH->data()[((((i0 * nL + i1) * nL + j) * D + d0) * D + d1) * D + a]
                   : 0.0;
    };

    for (std::size_t i0 = 0; i0 < nL; ++i0)
        for (std::size_t i1 = 0; i1 < nL; ++i1)
            for (std::size_t d0 = 0; d0 < D; ++d0)
                for (std::size_t d1 = 0; d1 < D; ++d1) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < nL; ++j)
                        for (std::size_t a = 0; a < D; ++a) {
                            const double gv = g[j * D + a];
                            if (gv == 0.0) continue;
                            acc += (dh_at(i0, i1, j, d0, d1, a) + dh_at(i1, i0, j, d1, d0, a)) *
                                   gv;
                        }
                    Hnew.data()[((i0 * nL + i1) * D + d0) * D + d1] -= eta * acc;
                }

    if (order >= 2) {
        auto dd_at = [&](const Tensor& T, std::size_t i0, std::size_t i1, std::size_t j2,
                         std::size_t j3, std::size_t d0, std::size_t d1, std::size_t a2,
                         std::size_t a3) {
            return T.data()[((((((i0 * nL + i1) * nL + j2) * nL + j3) * D + d0) * D + d1) * D +
                             a2) *
                                D +
                            a3];
        };
        for (std::size_t i0 = 0; i0 < nL; ++i0)
            for (std::size_t i1 = 0; i1 < nL; ++i1)
                for (std::size_t d0 = 0; d0 < D; ++d0)
                    for (std::size_t d1 = 0; d1 < D; ++d1) {
                        double accI = 0.0, accII = 0.0;
                        for (std::size_t j2 = 0; j2 < nL; ++j2)
                            for (std::size_t a2 = 0; a2 < D; ++a2) {
                                const double g2 = g[j2 * D + a2];
                                if (g2 == 0.0) continue;
                                for (std::size_t j3 = 0; j3 < nL; ++j3)
                                    for (std::size_t a3 = 0; a3 < D; ++a3) {
                                        const double g23 = g2 * g[j3 * D + a3];
                                        if (g23 == 0.0) continue;
                                        if (top.ddI.has_value()) {
                                            accI += (dd_at(*top.ddI, i0, i1, j2, j3, d0, d1, a2,
                                                           a3) +
                                                     dd_at(*top.ddI, i1, i0, j2, j3, d1, d0, a2,
                                                           a3)) *
                                                    g23;
                                        }
                                        if (top.ddII.has_value()) {
                                            accII += dd_at(*top.ddII, i0, i1, j2, j3, d0, d1,
                                                           a2, a3) *
                                                     g23;
                                        }
                                    }
                            }
                        Hnew.data()[((i0 * nL + i1) * D + d0) * D + d1] +=
                            0.5 * eta * eta * accI + eta * eta * accII;
                    }
    }
    return Hnew;
}

} // namespace ntklab
