#pragma once

#include <iosfwd>
#include <string>

#include "ntklab/kernels.hpp"
#include "ntklab/network.hpp"

namespace ntklab {

/// Flat binary layout (per layer: bias vector then row-major weights, 64-bit
/// little-endian floats) plus a `<path>.json` sidecar describing shapes.
void save_params(const NetworkParams& params, const NetworkConfig& config,
                 const std::string& path);
NetworkParams load_params(const NetworkConfig& config, const std::string& path);

/// Same binary + sidecar convention: per layer, H then any present
/// higher-order tensors, concatenated in order.
void save_kernel_stack(const KernelStack& stack, const std::string& path);

/// CSV, one sample per row: n0 inputs then label_dim labels (label_dim may be 0).
Dataset load_dataset_csv(const std::string& path, std::size_t n0, std::size_t label_dim);

/// One layer's tensors as CSV with explicit index columns.
void dump_layer_csv(const KernelStack& stack, int ell, std::ostream& os);

} // namespace ntklab
