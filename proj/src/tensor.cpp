#include "ntklab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ntklab {

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           std::multiplies<>());
}

std::vector<std::size_t> row_major_strides(const std::vector<std::size_t>& shape) {
    std::vector<std::size_t> strides(shape.size(), 1);
    for (std::size_t i = shape.size(); i-- > 1;) {
        strides[i - 1] = strides[i] * shape[i];
    }
    return strides;
}

} // namespace

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_product(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_product(shape_) != data_.size()) {
        throw shape_error("tensor data length does not match shape product");
    }
}

Tensor Tensor::scalar(double value) {
    return Tensor({}, {value});
}

std::size_t Tensor::extent(std::size_t axis) const {
    if (axis >= shape_.size()) {
        throw shape_error("tensor axis out of range");
    }
    return shape_[axis];
}

std::size_t Tensor::flat_index(std::span<const std::size_t> idx) const {
    if (idx.size() != shape_.size()) {
        throw shape_error("tensor index rank mismatch");
    }
    std::size_t flat = 0;
    for (std::size_t k = 0; k < idx.size(); ++k) {
        if (idx[k] >= shape_[k]) {
            throw shape_error("tensor index out of bounds");
        }
        flat = flat * shape_[k] + idx[k];
    }
    return flat;
}

double& Tensor::at(std::initializer_list<std::size_t> idx) {
    return data_[flat_index(std::span<const std::size_t>(idx.begin(), idx.size()))];
}

double Tensor::at(std::initializer_list<std::size_t> idx) const {
    return data_[flat_index(std::span<const std::size_t>(idx.begin(), idx.size()))];
}

void Tensor::fill(double v) {
    std::fill(data_.begin(), data_.end(), v);
}

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](double v) { return std::isfinite(v); });
}

void Tensor::require_finite(const std::string& context) const {
    if (!all_finite()) {
        throw numeric_error("non-finite tensor entries in " + context);
    }
}

double Tensor::max_abs() const {
    double m = 0.0;
    for (double v : data_) {
        m = std::max(m, std::abs(v));
    }
    return m;
}

Tensor contract(const Tensor& a, const Tensor& b,
                std::span<const std::pair<std::size_t, std::size_t>> axes) {
    const auto& sa = a.shape();
    const auto& sb = b.shape();

    std::vector<bool> paired_a(sa.size(), false), paired_b(sb.size(), false);
    std::vector<std::size_t> sum_extents;
    sum_extents.reserve(axes.size());
    for (const auto& [ia, ib] : axes) {
        if (ia >= sa.size() || ib >= sb.size()) {
            throw shape_error("contraction axis out of range");
        }
        if (paired_a[ia] || paired_b[ib]) {
            throw shape_error("contraction axis paired twice");
        }
        if (sa[ia] != sb[ib]) {
            throw shape_error("contracted axes have unequal lengths");
        }
        paired_a[ia] = true;
        paired_b[ib] = true;
        sum_extents.push_back(sa[ia]);
    }

    std::vector<std::size_t> free_a, free_b, out_shape;
    for (std::size_t i = 0; i < sa.size(); ++i) {
        if (!paired_a[i]) {
            free_a.push_back(i);
            out_shape.push_back(sa[i]);
        }
    }
    for (std::size_t i = 0; i < sb.size(); ++i) {
        if (!paired_b[i]) {
            free_b.push_back(i);
            out_shape.push_back(sb[i]);
        }
    }

    const auto stra = row_major_strides(sa);
    const auto strb = row_major_strides(sb);

    Tensor out(out_shape);
    const std::size_t n_free = out_shape.size();
    const std::size_t n_sum = axes.size();

    std::vector<std::size_t> free_idx(n_free, 0), sum_idx(n_sum, 0);
    const std::size_t out_size = out.size();

    for (std::size_t flat = 0; flat < out_size; ++flat) {
        std::size_t base_a = 0, base_b = 0;
        for (std::size_t k = 0; k < n_free; ++k) {
            if (k < free_a.size()) {
                base_a += free_idx[k] * stra[free_a[k]];
            } else {
                base_b += free_idx[k] * strb[free_b[k - free_a.size()]];
            }
        }

        double acc = 0.0;
        std::fill(sum_idx.begin(), sum_idx.end(), 0);
        bool more = true;
        while (more) {
            std::size_t off_a = base_a, off_b = base_b;
            for (std::size_t k = 0; k < n_sum; ++k) {
                off_a += sum_idx[k] * stra[axes[k].first];
                off_b += sum_idx[k] * strb[axes[k].second];
            }
            acc += a[off_a] * b[off_b];

            more = false;
            for (std::size_t k = n_sum; k-- > 0;) {
                if (++sum_idx[k] < sum_extents[k]) {
                    more = true;
                    break;
                }
                sum_idx[k] = 0;
            }
        }
        out[flat] = acc;

        std::size_t k = n_free;
        while (k-- > 0) {
            if (++free_idx[k] < out_shape[k]) break;
            free_idx[k] = 0;
        }
    }
    return out;
}

Tensor contract(const Tensor& a, const Tensor& b,
                std::initializer_list<std::pair<std::size_t, std::size_t>> axes) {
    return contract(
        a, b, std::span<const std::pair<std::size_t, std::size_t>>(axes.begin(), axes.size()));
}

} // namespace ntklab
