#include "ntklab/network.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace ntklab {

void NetworkConfig::validate() const {
    const int L = depth();
    if (L < 1) {
        throw std::invalid_argument("network needs at least one layer (widths n_0..n_L)");
    }
    for (int w : widths) {
        if (w < 1) throw std::invalid_argument("all widths must be >= 1");
    }
    const auto sL = static_cast<std::size_t>(L);
    if (Cb.size() != sL || Cw.size() != sL || lam_b.size() != sL || lam_w.size() != sL) {
        throw std::invalid_argument("hyperparameter arrays must have length L");
    }
    for (int l = 0; l < L; ++l) {
        if (Cb[l] < 0.0 || Cw[l] < 0.0 || lam_b[l] < 0.0 || lam_w[l] < 0.0) {
            throw std::invalid_argument("Cb, Cw, lam_b, lam_w must be >= 0");
        }
    }
    if (!(eta0 >= 0.0)) {
        throw std::invalid_argument("eta0 must be >= 0");
    }
}

NetworkConfig NetworkConfig::make(int n0, int hidden, int nL, int L, Activation act,
                                  double lam, double eta0) {
    NetworkConfig cfg;
    cfg.widths.resize(L + 1);
    cfg.widths[0] = n0;
    for (int l = 1; l < L; ++l) cfg.widths[l] = hidden;
    cfg.widths[L] = nL;
    cfg.activation = act;
    const auto preset = act.critical_preset();
    cfg.Cb.assign(L, preset.Cb);
    cfg.Cw.assign(L, preset.Cw);
    cfg.lam_b.assign(L, lam);
    cfg.lam_w.assign(L, lam);
    cfg.eta0 = eta0;
    cfg.validate();
    return cfg;
}

std::size_t NetworkParams::parameter_count() const {
    std::size_t n = 0;
    for (const auto& b : biases) n += b.size();
    for (const auto& w : weights) n += w.size();
    return n;
}

NetworkParams init_params(const NetworkConfig& config, const ScalingStrategy& strategy,
                          RngStream& stream) {
    config.validate();
    strategy.validate();
    const int L = config.depth();
    if (strategy.L != L) {
        throw std::invalid_argument("strategy depth does not match network depth");
    }
    const double n = config.typical_width();

    NetworkParams params;
    params.biases.resize(L);
    params.weights.resize(L);
    for (int l = 1; l <= L; ++l) {
        const auto fan_out = static_cast<std::size_t>(config.widths[l]);
        const auto fan_in = static_cast<std::size_t>(config.widths[l - 1]);
        const double np = std::pow(n, strategy.p[l - 1]);
        const double var_b = config.Cb[l - 1] / np;
        const double var_w = config.Cw[l - 1] / (np * static_cast<double>(fan_in));

        params.biases[l - 1].resize(fan_out);
        params.weights[l - 1].resize(fan_out * fan_in);
        stream.fill_gaussian(params.biases[l - 1], 0.0, var_b);
        stream.fill_gaussian(params.weights[l - 1], 0.0, var_w);
    }
    return params;
}

ForwardTrace forward(const NetworkParams& params, const NetworkConfig& config,
                     const Dataset& data) {
    config.validate();
    const int L = config.depth();
    if (data.input_dim != static_cast<std::size_t>(config.widths[0])) {
        throw shape_error("dataset input dimension does not match n_0");
    }
    if (data.count == 0) {
        throw std::invalid_argument("dataset is empty");
    }
    const std::size_t D = data.count;

    ForwardTrace trace;
    trace.z.resize(L);

    std::vector<double> act_prev;  // sigma(z^{(l)}) or inputs, n_l x D
    act_prev.resize(data.input_dim * D);
    for (std::size_t d = 0; d < D; ++d) {
        const auto x = data.input(d);
        for (std::size_t j = 0; j < data.input_dim; ++j) act_prev[j * D + d] = x[j];
    }

    for (int l = 1; l <= L; ++l) {
        const auto n_out = static_cast<std::size_t>(config.widths[l]);
        const auto n_in = static_cast<std::size_t>(config.widths[l - 1]);
        const auto& b = params.biases[l - 1];
        const auto& W = params.weights[l - 1];
        if (b.size() != n_out || W.size() != n_out * n_in) {
            throw shape_error("params shapes inconsistent with config at layer " +
                              std::to_string(l));
        }

        auto& z = trace.z[l - 1];
        z.assign(n_out * D, 0.0);
        for (std::size_t i = 0; i < n_out; ++i) {
            double* zrow = z.data() + i * D;
            for (std::size_t d = 0; d < D; ++d) zrow[d] = b[i];
            const double* wrow = W.data() + i * n_in;
            for (std::size_t j = 0; j < n_in; ++j) {
                const double w = wrow[j];
                const double* arow = act_prev.data() + j * D;
                for (std::size_t d = 0; d < D; ++d) zrow[d] += w * arow[d];
            }
        }
        for (double v : z) {
            if (!std::isfinite(v)) {
                throw numeric_error("non-finite preactivation at layer " + std::to_string(l));
            }
        }

        if (l < L) {
            act_prev.resize(n_out * D);
            for (std::size_t k = 0; k < z.size(); ++k) {
                act_prev[k] = config.activation.value(z[k]);
            }
        }
    }
    return trace;
}

Dataset make_unit_norm_dataset(std::size_t count, std::size_t n0, RngStream& stream) {
    Dataset data;
    data.input_dim = n0;
    data.count = count;
    data.inputs.resize(count * n0);
    for (std::size_t d = 0; d < count; ++d) {
        double* x = data.inputs.data() + d * n0;
        stream.fill_gaussian({x, n0}, 0.0, 1.0);
        double ss = 0.0;
        for (std::size_t j = 0; j < n0; ++j) ss += x[j] * x[j];
        const double scale = ss > 0.0 ? std::sqrt(static_cast<double>(n0) / ss) : 0.0;
        for (std::size_t j = 0; j < n0; ++j) x[j] *= scale;
    }
    return data;
}

} // namespace ntklab
