#pragma once

#include <optional>
#include <vector>

#include "ntklab/network.hpp"
#include "ntklab/tensor.hpp"

namespace ntklab {

enum class KernelOrder { NTK, DNTK, DDNTK };

struct KernelOrderFlags {
    bool dntk = false;
    bool ddI = false;
    bool ddII = false;

    static KernelOrderFlags for_order(KernelOrder order);
    bool covers(const KernelOrderFlags& o) const {
        return (!o.dntk || dntk) && (!o.ddI || ddI) && (!o.ddII || ddII);
    }
};

/// Per-layer kernel tensors. A nullopt tensor whose flag is set means
/// "identically zero" (first-layer dH/ddI/ddII); a tensor whose flag is unset
/// was never computed.
struct LayerKernels {
    std::size_t n = 0;  // neural extent of this layer
    std::size_t D = 0;
    KernelOrderFlags flags;

    Tensor H;                      // [n, n, D, D]
    std::optional<Tensor> dH;      // [n, n, n, D, D, D]
    std::optional<Tensor> ddI;     // [n, n, n, n, D, D, D, D]
    std::optional<Tensor> ddII;    // same shape as ddI

    bool dH_is_zero() const { return flags.dntk && !dH.has_value(); }
    bool ddI_is_zero() const { return flags.ddI && !ddI.has_value(); }
    bool ddII_is_zero() const { return flags.ddII && !ddII.has_value(); }
};

struct KernelStack {
    KernelOrderFlags flags;
    std::vector<LayerKernels> layers;  // layers[l-1] holds layer l

    int depth() const { return static_cast<int>(layers.size()); }
    const LayerKernels& layer(int ell) const { return layers[static_cast<std::size_t>(ell - 1)]; }
    const LayerKernels& output() const { return layers.back(); }
};

struct KernelOptions {
    std::size_t memory_budget_bytes = std::size_t{6} << 30;
    /// Recompute per sample tuple instead of materializing hidden-layer
    /// tensors across the whole dataset (time for memory).
    bool streaming = false;
    /// Keep dH/ddI/ddII for hidden layers in the result (the recursion always
    /// needs them transiently).
    bool keep_hidden_higher = true;
};

/// First-layer NTK, diagonal in neural indices:
/// H^(1)[i1,i2;d1,d2] = n^{-q_1} (lam_b + lam_w <x_{d1}, x_{d2}>/n_0) delta_{i1 i2}.
Tensor ntk_first_layer(const NetworkConfig& config, const ScalingStrategy& strategy,
                       const Dataset& data);

LayerKernels first_layer_kernels(const NetworkConfig& config, const ScalingStrategy& strategy,
                                 const Dataset& data, KernelOrderFlags flags);

/// One forward step of the kernel recursions from layer `ell` to `ell+1`
/// (ell in 1..L-1). Evaluates H first, then dH, then ddI/ddII.
LayerKernels kernel_step(const ForwardTrace& trace, const NetworkParams& params,
                         const NetworkConfig& config, const ScalingStrategy& strategy,
                         const LayerKernels& below, int ell, KernelOrderFlags flags);

/// Full stack through layer L.
KernelStack compute_kernels(const NetworkParams& params, const NetworkConfig& config,
                            const ScalingStrategy& strategy, const Dataset& data,
                            KernelOrder order, const KernelOptions& options = {});

/// Same with per-order granularity (e.g. ddI without ddII).
KernelStack compute_kernels(const NetworkParams& params, const NetworkConfig& config,
                            const ScalingStrategy& strategy, const Dataset& data,
                            KernelOrderFlags flags, const KernelOptions& options = {});

/// Bytes needed for the stack plus transient working set.
std::size_t estimate_kernel_memory(const NetworkConfig& config, std::size_t D,
                                   KernelOrderFlags flags, const KernelOptions& options);

/// Global learning rate eta = n^r eta_0 with n = n_{L-1}.
double global_eta(const NetworkConfig& config, const ScalingStrategy& strategy);

} // namespace ntklab
