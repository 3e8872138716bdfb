#include "ntklab/oracle.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "ntklab/jet.hpp"

namespace ntklab {

namespace {

double factorial(int k) {
    double f = 1.0;
    for (int i = 2; i <= k; ++i) f *= i;
    return f;
}

// acc += (w + v*eps) * a, the parameter jets being affine in eps
void add_affine_times(Jet& acc, const Jet& a, double w, double v) {
    const int K = acc.order();
    if (v == 0.0) {
        for (int k = 0; k <= K; ++k) acc.coeff(k) += w * a.coeff(k);
    } else {
        acc.coeff(0) += w * a.coeff(0);
        for (int k = 1; k <= K; ++k) acc.coeff(k) += w * a.coeff(k) + v * a.coeff(k - 1);
    }
}

// Jet forward pass with theta + t * direction, one jet per (neuron, sample).
std::vector<Jet> forward_jets(const NetworkParams& params, const NetworkConfig& config,
                              const Dataset& data, std::span<const double> direction,
                              int order) {
    const int L = config.depth();
    const std::size_t D = data.count;

    std::size_t off = 0;
    std::vector<Jet> prev;  // activations (or inputs), n_{l-1} x D
    prev.reserve(data.input_dim * D);
    for (std::size_t j = 0; j < data.input_dim; ++j) {
        for (std::size_t d = 0; d < D; ++d) {
            prev.push_back(Jet::constant(order, data.input(d)[j]));
        }
    }

    std::vector<Jet> z;
    for (int l = 1; l <= L; ++l) {
        const auto n_out = static_cast<std::size_t>(config.widths[l]);
        const auto n_in = static_cast<std::size_t>(config.widths[l - 1]);
        const auto& b = params.biases[l - 1];
        const auto& W = params.weights[l - 1];
        const std::size_t boff = off;
        const std::size_t woff = off + n_out;
        off = woff + n_out * n_in;

        z.assign(n_out * D, Jet(order));
        for (std::size_t i = 0; i < n_out; ++i) {
            Jet bi = Jet::constant(order, b[i]);
            bi.coeff(1) = direction[boff + i];
            for (std::size_t d = 0; d < D; ++d) z[i * D + d] = bi;
            for (std::size_t j = 0; j < n_in; ++j) {
                const double w = W[i * n_in + j];
                const double v = direction[woff + i * n_in + j];
                for (std::size_t d = 0; d < D; ++d) {
                    add_affine_times(z[i * D + d], prev[j * D + d], w, v);
                }
            }
        }
        if (l < L) {
            prev.assign(n_out * D, Jet(order));
            for (std::size_t k = 0; k < z.size(); ++k) {
                prev[k] = config.activation.apply(z[k]);
            }
        }
    }
    return z;
}

// Ranks for multiset-indexed caches of symmetric mixed partials.
std::size_t pair_rank(std::size_t a, std::size_t b) {
    // requires a <= b
    return b * (b + 1) / 2 + a;
}

std::size_t triple_rank(std::size_t a, std::size_t b, std::size_t c) {
    // requires a <= b <= c
    return c * (c + 1) * (c + 2) / 6 + b * (b + 1) / 2 + a;
}

} // namespace

std::vector<ParameterIndex> enumerate_parameters(const NetworkConfig& config) {
    config.validate();
    const int L = config.depth();
    std::vector<ParameterIndex> out;
    for (int l = 1; l <= L; ++l) {
        const int n_out = config.widths[l];
        const int n_in = config.widths[l - 1];
        for (int i = 0; i < n_out; ++i) {
            out.push_back({l, ParameterIndex::Kind::Bias, i, -1});
        }
        for (int i = 0; i < n_out; ++i) {
            for (int j = 0; j < n_in; ++j) {
                out.push_back({l, ParameterIndex::Kind::Weight, i, j});
            }
        }
    }
    return out;
}

double lambda_rate(const NetworkConfig& config, const ScalingStrategy& strategy,
                   const ParameterIndex& idx) {
    const double n = config.typical_width();
    const double inv_nq = std::pow(n, -strategy.q[idx.layer - 1]);
    if (idx.kind == ParameterIndex::Kind::Bias) {
        return inv_nq * config.lam_b[idx.layer - 1];
    }
    return inv_nq * config.lam_w[idx.layer - 1] /
           static_cast<double>(config.widths[idx.layer - 1]);
}

std::vector<std::vector<double>> directional_derivatives(const NetworkParams& params,
                                                         const NetworkConfig& config,
                                                         const Dataset& data,
                                                         std::span<const double> direction,
                                                         int order) {
    if (order < 1 || order > kMaxJetOrder) {
        throw std::invalid_argument("unsupported derivative order (must be 1..5)");
    }
    const auto P = enumerate_parameters(config).size();
    if (direction.size() != P) {
        throw std::invalid_argument("direction must have one entry per parameter");
    }
    const auto z = forward_jets(params, config, data, direction, order);

    std::vector<std::vector<double>> result(order);
    for (int k = 1; k <= order; ++k) {
        result[k - 1].resize(z.size());
        const double fact = factorial(k);
        for (std::size_t idx = 0; idx < z.size(); ++idx) {
            result[k - 1][idx] = fact * z[idx].coeff(k);
        }
    }
    return result;
}

std::vector<double> mixed_partial(const NetworkParams& params, const NetworkConfig& config,
                                  const Dataset& data,
                                  std::span<const ParameterIndex> indices) {
    const int k = static_cast<int>(indices.size());
    if (k < 1 || k > kMaxJetOrder) {
        throw std::invalid_argument("mixed_partial supports 1..5 indices");
    }
    const auto all = enumerate_parameters(config);
    const std::size_t P = all.size();

    // flat offsets of the requested indices
    std::vector<std::size_t> flat(indices.size());
    {
        std::size_t off = 0;
        std::vector<std::size_t> layer_base(config.depth() + 1, 0);
        for (int l = 1; l <= config.depth(); ++l) {
            layer_base[l] = off;
            off += static_cast<std::size_t>(config.widths[l]) *
                       static_cast<std::size_t>(config.widths[l - 1]) +
                   static_cast<std::size_t>(config.widths[l]);
        }
        for (std::size_t t = 0; t < indices.size(); ++t) {
            const auto& ix = indices[t];
            std::size_t f = layer_base[ix.layer];
            if (ix.kind == ParameterIndex::Kind::Bias) {
                f += static_cast<std::size_t>(ix.row);
            } else {
                f += static_cast<std::size_t>(config.widths[ix.layer]) +
                     static_cast<std::size_t>(ix.row) *
                         static_cast<std::size_t>(config.widths[ix.layer - 1]) +
                     static_cast<std::size_t>(ix.col);
            }
            flat[t] = f;
        }
    }

    const std::size_t out_size =
        static_cast<std::size_t>(config.widths[config.depth()]) * data.count;
    std::vector<double> acc(out_size, 0.0);
    std::vector<double> dir(P);

    // polarization over nonempty subsets T of the k slots
    for (unsigned mask = 1; mask < (1u << k); ++mask) {
        std::fill(dir.begin(), dir.end(), 0.0);
        int bits = 0;
        for (int t = 0; t < k; ++t) {
            if (mask & (1u << t)) {
                dir[flat[t]] += 1.0;
                ++bits;
            }
        }
        const double sign = ((k - bits) % 2 == 0) ? 1.0 : -1.0;
        const auto derivs = directional_derivatives(params, config, data, dir, k);
        const auto& dk = derivs[k - 1];
        for (std::size_t i = 0; i < out_size; ++i) acc[i] += sign * dk[i];
    }
    const double inv_fact = 1.0 / factorial(k);
    for (double& v : acc) v *= inv_fact;
    return acc;
}

DefinitionKernels kernels_from_definition(const NetworkParams& params,
                                          const NetworkConfig& config,
                                          const ScalingStrategy& strategy, const Dataset& data,
                                          KernelOrderFlags flags, std::size_t param_cap) {
    config.validate();
    strategy.validate();
    if (strategy.L != config.depth()) {
        throw std::invalid_argument("strategy depth does not match network depth");
    }
    const auto all = enumerate_parameters(config);
    const std::size_t P = all.size();
    if (P > param_cap) {
        throw resource_error("definition oracle: " + std::to_string(P) +
                             " parameters exceed cap " + std::to_string(param_cap) +
                             "; use the forward recursions for larger networks");
    }

    const std::size_t nL = static_cast<std::size_t>(config.widths[config.depth()]);
    const std::size_t D = data.count;
    const std::size_t X = nL * D;  // joint output index

    std::vector<double> lam(P);
    for (std::size_t mu = 0; mu < P; ++mu) lam[mu] = lambda_rate(config, strategy, all[mu]);

    // gradients G[mu][x]
    std::vector<std::vector<double>> G(P);
    {
        std::vector<double> dir(P, 0.0);
        for (std::size_t mu = 0; mu < P; ++mu) {
            dir[mu] = 1.0;
            G[mu] = directional_derivatives(params, config, data, dir, 1)[0];
            dir[mu] = 0.0;
        }
    }

    DefinitionKernels out;
    out.H = Tensor({nL, nL, D, D});
    for (std::size_t x0 = 0; x0 < X; ++x0) {
        for (std::size_t x1 = 0; x1 < X; ++x1) {
            double acc = 0.0;
            for (std::size_t mu = 0; mu < P; ++mu) acc += lam[mu] * G[mu][x0] * G[mu][x1];
            const std::size_t i0 = x0 / D, d0 = x0 % D, i1 = x1 / D, d1 = x1 % D;
            out.H.data()[((i0 * nL + i1) * D + d0) * D + d1] = acc;
        }
    }

    const bool need_T2 = flags.dntk || flags.ddII;
    std::vector<std::vector<double>> T2;  // pair-rank -> per-output values
    if (need_T2) {
        T2.resize(pair_rank(P - 1, P - 1) + 1);
        for (std::size_t b = 0; b < P; ++b) {
            for (std::size_t a = 0; a <= b; ++a) {
                const ParameterIndex pair[2] = {all[a], all[b]};
                T2[pair_rank(a, b)] = mixed_partial(params, config, data, pair);
            }
        }
    }
    auto t2 = [&](std::size_t a, std::size_t b) -> const std::vector<double>& {
        return a <= b ? T2[pair_rank(a, b)] : T2[pair_rank(b, a)];
    };

    // A[mu][x, y] = sum_nu lam[nu] T2[mu,nu][x] G[nu][y]
    std::vector<std::vector<double>> A;
    if (need_T2) {
        A.assign(P, std::vector<double>(X * X, 0.0));
        for (std::size_t mu = 0; mu < P; ++mu) {
            auto& Am = A[mu];
            for (std::size_t nu = 0; nu < P; ++nu) {
                const auto& t = t2(mu, nu);
                const double l = lam[nu];
                for (std::size_t x = 0; x < X; ++x) {
                    const double tv = l * t[x];
                    if (tv == 0.0) continue;
                    const auto& g = G[nu];
                    double* row = Am.data() + x * X;
                    for (std::size_t y = 0; y < X; ++y) row[y] += tv * g[y];
                }
            }
        }
    }

    if (flags.dntk) {
        out.dH.emplace(Tensor({nL, nL, nL, D, D, D}));
        auto& dH = *out.dH;
        for (std::size_t x0 = 0; x0 < X; ++x0) {
            for (std::size_t x1 = 0; x1 < X; ++x1) {
                for (std::size_t x2 = 0; x2 < X; ++x2) {
                    double acc = 0.0;
                    for (std::size_t mu = 0; mu < P; ++mu) {
                        acc += lam[mu] * G[mu][x1] * A[mu][x0 * X + x2];
                    }
                    const std::size_t i0 = x0 / D, d0 = x0 % D, i1 = x1 / D, d1 = x1 % D,
                                      i2 = x2 / D, d2 = x2 % D;
                    dH.data()[((((i0 * nL + i1) * nL + i2) * D + d0) * D + d1) * D + d2] = acc;
                }
            }
        }
    }

    if (flags.ddI) {
        // third mixed partials cached per sorted triple
        std::vector<std::vector<double>> T3(triple_rank(P - 1, P - 1, P - 1) + 1);
        for (std::size_t cc = 0; cc < P; ++cc) {
            for (std::size_t b = 0; b <= cc; ++b) {
                for (std::size_t a = 0; a <= b; ++a) {
                    const ParameterIndex trip[3] = {all[a], all[b], all[cc]};
                    T3[triple_rank(a, b, cc)] = mixed_partial(params, config, data, trip);
                }
            }
        }
        auto t3 = [&](std::size_t a, std::size_t b, std::size_t cc, std::size_t x) {
            std::size_t s0 = a, s1 = b, s2 = cc;
            if (s0 > s1) std::swap(s0, s1);
            if (s1 > s2) std::swap(s1, s2);
            if (s0 > s1) std::swap(s0, s1);
            return T3[triple_rank(s0, s1, s2)][x];
        };

        out.ddI.emplace(Tensor({nL, nL, nL, nL, D, D, D, D}));
        auto& ddI = *out.ddI;
        std::vector<double> Y(P * P * X), Z(P * X * X);
        for (std::size_t x0 = 0; x0 < X; ++x0) {
            // stage 3: Y[mu1, mu2, x3] = sum_mu3 lam3 T3(mu1,mu2,mu3)[x0] G[mu3][x3]
            std::fill(Y.begin(), Y.end(), 0.0);
            for (std::size_t m1 = 0; m1 < P; ++m1) {
                for (std::size_t m2 = 0; m2 < P; ++m2) {
                    double* yrow = Y.data() + (m1 * P + m2) * X;
                    for (std::size_t m3 = 0; m3 < P; ++m3) {
                        const double tv = lam[m3] * t3(m1, m2, m3, x0);
                        if (tv == 0.0) continue;
                        const auto& g = G[m3];
                        for (std::size_t y = 0; y < X; ++y) yrow[y] += tv * g[y];
                    }
                }
            }
            // stage 2: Z[mu1, x2, x3] = sum_mu2 lam2 G[mu2][x2] Y[mu1, mu2, x3]
            std::fill(Z.begin(), Z.end(), 0.0);
            for (std::size_t m1 = 0; m1 < P; ++m1) {
                double* zblk = Z.data() + m1 * X * X;
                for (std::size_t m2 = 0; m2 < P; ++m2) {
                    const auto& g = G[m2];
                    const double* yrow = Y.data() + (m1 * P + m2) * X;
                    for (std::size_t x2 = 0; x2 < X; ++x2) {
                        const double gv = lam[m2] * g[x2];
                        if (gv == 0.0) continue;
                        double* zrow = zblk + x2 * X;
                        for (std::size_t y = 0; y < X; ++y) zrow[y] += gv * yrow[y];
                    }
                }
            }
            // stage 1: out[x1, x2, x3] = sum_mu1 lam1 G[mu1][x1] Z[mu1, x2, x3]
            const std::size_t i0 = x0 / D, d0 = x0 % D;
            for (std::size_t x1 = 0; x1 < X; ++x1) {
                for (std::size_t x2 = 0; x2 < X; ++x2) {
                    for (std::size_t x3 = 0; x3 < X; ++x3) {
                        double acc = 0.0;
                        for (std::size_t m1 = 0; m1 < P; ++m1) {
                            acc += lam[m1] * G[m1][x1] * Z[m1 * X * X + x2 * X + x3];
                        }
                        const std::size_t i1 = x1 / D, d1 = x1 % D, i2 = x2 / D, d2 = x2 % D,
                                          i3 = x3 / D, d3 = x3 % D;
                        ddI.data()[((((((i0 * nL + i1) * nL + i2) * nL + i3) * D + d0) * D +
                                     d1) *
                                        D +
                                    d2) *
                                       D +
                                   d3] = acc;
                    }
                }
            }
        }
    }

    if (flags.ddII) {
        out.ddII.emplace(Tensor({nL, nL, nL, nL, D, D, D, D}));
        auto& ddII = *out.ddII;
        for (std::size_t x0 = 0; x0 < X; ++x0) {
            for (std::size_t x1 = 0; x1 < X; ++x1) {
                for (std::size_t x2 = 0; x2 < X; ++x2) {
                    for (std::size_t x3 = 0; x3 < X; ++x3) {
                        double acc = 0.0;
                        for (std::size_t mu = 0; mu < P; ++mu) {
                            acc += lam[mu] * A[mu][x0 * X + x2] * A[mu][x1 * X + x3];
                        }
                        const std::size_t i0 = x0 / D, d0 = x0 % D, i1 = x1 / D, d1 = x1 % D,
                                          i2 = x2 / D, d2 = x2 % D, i3 = x3 / D, d3 = x3 % D;
                        ddII.data()[((((((i0 * nL + i1) * nL + i2) * nL + i3) * D + d0) * D +
                                      d1) *
                                         D +
                                     d2) *
                                        D +
                                    d3] = acc;
                    }
                }
            }
        }
    }

    return out;
}

Tensor onehidden_typeI(const NetworkParams& params, const NetworkConfig& config,
                       const ScalingStrategy& strategy, const Dataset& data, int k) {
    config.validate();
    strategy.validate();
    if (config.depth() != 2) {
        throw std::invalid_argument(
            "type-I closed forms are for one-hidden-layer networks (L == 2)");
    }
    if (k < 2 || k > 5) {
        throw std::invalid_argument("type-I closed forms support 2 <= k <= 5");
    }
    const std::size_t n1 = static_cast<std::size_t>(config.widths[1]);
    const std::size_t n0 = static_cast<std::size_t>(config.widths[0]);
    const std::size_t nL = static_cast<std::size_t>(config.widths[2]);
    const std::size_t D = data.count;
    const int slots = k + 1;
    const double n_typ = config.typical_width();

    const ForwardTrace trace = forward(params, config, data);
    const auto z1 = trace.layer(1);  // n1 x D

    // mean first-layer NTK, diagonal in neural indices
    std::vector<double> H1(D * D);
    {
        const double inv_nq1 = std::pow(n_typ, -strategy.q[0]);
        for (std::size_t a = 0; a < D; ++a) {
            const auto xa = data.input(a);
            for (std::size_t b = 0; b < D; ++b) {
                const auto xb = data.input(b);
                double dot = 0.0;
                for (std::size_t j = 0; j < n0; ++j) dot += xa[j] * xb[j];
                H1[a * D + b] = inv_nq1 * (config.lam_b[0] +
                                           config.lam_w[0] * dot / static_cast<double>(n0));
            }
        }
    }

    // sigma derivative tables per (j, d): need orders 0, 1, k-1, k
    std::vector<std::array<double, 6>> sig(n1 * D);
    for (std::size_t j = 0; j < n1; ++j) {
        for (std::size_t d = 0; d < D; ++d) {
            config.activation.derivs(z1[j * D + d],
                                     std::span<double, 6>(sig[j * D + d].data(), 6));
        }
    }

    const double* W2 = params.weights[1].data();  // nL x n1
    const double alpha2 = std::pow(n_typ, -strategy.q[1]) * config.lam_w[1] /
                          static_cast<double>(n1);

    std::vector<std::size_t> shape(2 * static_cast<std::size_t>(slots));
    for (int t = 0; t < slots; ++t) shape[t] = nL;
    for (int t = 0; t < slots; ++t) shape[slots + t] = D;
    Tensor out(shape);

    std::vector<std::size_t> ivec(slots, 0), dvec(slots, 0);

    // iterate all (i-tuple, d-tuple) combinations
    bool more = true;
    while (more) {
        // sample-tuple factors
        double hprod_all = 1.0;
        for (int a = 1; a < slots; ++a) hprod_all *= H1[dvec[0] * D + dvec[a]];

        bool more_i = true;
        std::fill(ivec.begin(), ivec.end(), 0);
        while (more_i) {
            double value = 0.0;

            // first kind: one sigma^[k] leg and k sigma' legs on a shared neuron
            for (std::size_t j = 0; j < n1; ++j) {
                double wprod = 1.0;
                for (int t = 0; t < slots; ++t) wprod *= W2[ivec[t] * n1 + j];
                if (wprod == 0.0) continue;
                double sprod = sig[j * D + dvec[0]][static_cast<std::size_t>(k)];
                for (int a = 1; a < slots; ++a) sprod *= sig[j * D + dvec[a]][1];
                value += wprod * sprod * hprod_all;
            }

            // second kind: the lambda insertion pairs the d^k leg with one
            // first-derivative leg a, giving delta_{i0 ia}
            for (int a = 1; a < slots; ++a) {
                if (ivec[0] != ivec[a]) continue;
                double hprod = 1.0;
                for (int b = 1; b < slots; ++b) {
                    if (b != a) hprod *= H1[dvec[0] * D + dvec[b]];
                }
                double acc = 0.0;
                for (std::size_t j = 0; j < n1; ++j) {
                    double wprod = 1.0;
                    for (int b = 1; b < slots; ++b) {
                        if (b != a) wprod *= W2[ivec[b] * n1 + j];
                    }
                    if (wprod == 0.0) continue;
                    double sprod = sig[j * D + dvec[0]][static_cast<std::size_t>(k - 1)] *
                                   sig[j * D + dvec[a]][0];
                    for (int b = 1; b < slots; ++b) {
                        if (b != a) sprod *= sig[j * D + dvec[b]][1];
                    }
                    acc += wprod * sprod;
                }
                value += alpha2 * hprod * acc;
            }

            // write
            std::size_t flat = 0;
            for (int t = 0; t < slots; ++t) flat = flat * nL + ivec[t];
            for (int t = 0; t < slots; ++t) flat = flat * D + dvec[t];
            out[flat] = value;

            more_i = false;
            for (int t = slots; t-- > 0;) {
                if (++ivec[t] < nL) {
                    more_i = true;
                    break;
                }
                ivec[t] = 0;
            }
        }

        more = false;
        for (int t = slots; t-- > 0;) {
            if (++dvec[t] < D) {
                more = true;
                break;
            }
            dvec[t] = 0;
        }
    }
    return out;
}

} // namespace ntklab
