#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <utility>
#include <vector>

#include "ntklab/common.hpp"

namespace ntklab {

/// Dense row-major tensor of 64-bit floats. Rank 0 is a scalar (size 1).
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape);
    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    static Tensor scalar(double value);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t extent(std::size_t axis) const;

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }

    double& operator[](std::size_t flat) { return data_[flat]; }
    double operator[](std::size_t flat) const { return data_[flat]; }

    std::size_t flat_index(std::span<const std::size_t> idx) const;
    double& at(std::initializer_list<std::size_t> idx);
    double at(std::initializer_list<std::size_t> idx) const;

    void fill(double v);
    bool all_finite() const;
    /// Throws numeric_error naming `context` if any entry is NaN/Inf.
    void require_finite(const std::string& context) const;

    double max_abs() const;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

/// Sum-of-products contraction over the given (a-axis, b-axis) pairs.
/// Result shape is a's unpaired axes followed by b's unpaired axes.
Tensor contract(const Tensor& a, const Tensor& b,
                std::span<const std::pair<std::size_t, std::size_t>> axes);

Tensor contract(const Tensor& a, const Tensor& b,
                std::initializer_list<std::pair<std::size_t, std::size_t>> axes);

} // namespace ntklab
