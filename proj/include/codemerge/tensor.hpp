// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "codemerge/errors.hpp"

namespace codemerge {

/// Dense row-major tensor of 32-bit floats. An empty dims list denotes a
/// scalar (one element). All values must be finite; NaN/Inf are rejected at
/// construction so merging arithmetic can never silently propagate them.
class Tensor {
public:
    /// Scalar zero.
    Tensor() : data_(1, 0.0f) {}

    Tensor(std::vector<std::uint64_t> dims, std::vector<float> data)
        : dims_(std::move(dims)), data_(std::move(data)) {
        std::uint64_t expected = 1;
        for (std::uint64_t d : dims_) {
            if (d == 0) {
                throw ParameterError("tensor dims must be positive");
            }
            if (expected > kMaxElements / d) {
                throw ParameterError("tensor too large");
            }
            expected *= d;
        }
        if (data_.size() != expected) {
            throw ParameterError("tensor data length " + std::to_string(data_.size()) +
                                 " does not match dims product " + std::to_string(expected));
        }
        for (float v : data_) {
            if (!std::isfinite(v)) {
                throw ParameterError("tensor values must be finite");
            }
        }
    }

    static Tensor scalar(float v) { return Tensor({}, {v}); }

    const std::vector<std::uint64_t>& dims() const { return dims_; }
    std::size_t rank() const { return dims_.size(); }
    std::uint64_t size() const { return data_.size(); }
    std::span<const float> data() const { return data_; }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.dims_ == b.dims_ && a.data_ == b.data_;
    }

private:
    static constexpr std::uint64_t kMaxElements = 1ull << 40;

    std::vector<std::uint64_t> dims_;
    std::vector<float> data_;
};

/// Bitwise tensor equality (distinguishes -0.0f from 0.0f).
inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (a.dims() != b.dims()) return false;
    return std::memcmp(a.data().data(), b.data().data(), a.data().size_bytes()) == 0;
}

/// Ordered name -> Tensor map with a step identifier. Iteration order is the
/// insertion order and is preserved through save/load. Immutable by
/// convention once populated; safe to share across threads.
class Checkpoint {
public:
    explicit Checkpoint(std::uint64_t step = 0) : step_(step) {}

    std::uint64_t step() const { return step_; }
    void set_step(std::uint64_t step) { step_ = step; }

    void add(std::string name, Tensor tensor) {
        if (name.empty()) {
            throw ParameterError("parameter name must be non-empty");
        }
        if (index_.count(name) != 0) {
            throw ParameterError("duplicate parameter name '" + name + "'");
        }
        index_.emplace(name, entries_.size());
        entries_.emplace_back(std::move(name), std::move(tensor));
    }

    bool contains(std::string_view name) const {
        return index_.count(std::string(name)) != 0;
    }

    const Tensor& at(std::string_view name) const {
        auto it = index_.find(std::string(name));
        if (it == index_.end()) {
            throw ParameterError("no parameter named '" + std::string(name) + "'");
        }
        return entries_[it->second].second;
    }

    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }

    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

    friend bool operator==(const Checkpoint& a, const Checkpoint& b) {
        return a.step_ == b.step_ && a.entries_ == b.entries_;
    }

private:
    std::uint64_t step_;
    std::vector<std::pair<std::string, Tensor>> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Bitwise checkpoint equality: step, names, order, and float bit patterns.
inline bool bitwise_equal(const Checkpoint& a, const Checkpoint& b) {
    if (a.step() != b.step() || a.size() != b.size()) return false;
    auto ita = a.begin();
    auto itb = b.begin();
    for (; ita != a.end(); ++ita, ++itb) {
        if (ita->first != itb->first) return false;
        if (!bitwise_equal(ita->second, itb->second)) return false;
    }
    return true;
}

/// Concatenation of all tensor values in insertion order.
inline std::vector<float> flatten(const Checkpoint& c) {
    std::vector<float> out;
    for (const auto& [name, tensor] : c) {
        auto d = tensor.data();
        out.insert(out.end(), d.begin(), d.end());
    }
    return out;
}

namespace detail {

/// Verifies `other` has exactly the names and shapes of `reference`; throws
/// StructuralError naming the first offending parameter.
inline void check_same_structure(const Checkpoint& reference, const Checkpoint& other) {
    if (reference.size() != other.size()) {
        throw StructuralError("checkpoints have different parameter counts (" +
                              std::to_string(reference.size()) + " vs " +
                              std::to_string(other.size()) + ")");
    }
    for (const auto& [name, tensor] : reference) {
        if (!other.contains(name)) {
            throw StructuralError("parameter '" + name + "' missing from checkpoint");
        }
        if (other.at(name).dims() != tensor.dims()) {
            throw StructuralError("parameter '" + name + "' has mismatched dims");
        }
    }
}

}  // namespace detail

/// Per-coordinate linear combination sum_k coeff_k * checkpoint_k. All inputs
/// must share names and shapes; the result keeps the first checkpoint's order
/// and takes the max input step. Accumulation is in double.
inline Checkpoint checkpoint_linear_combination(std::span<const Checkpoint> checkpoints,
                                                std::span<const double> coefficients) {
    if (checkpoints.empty()) {
        throw ParameterError("linear combination requires at least one term");
    }
    if (checkpoints.size() != coefficients.size()) {
        throw ParameterError("coefficient count does not match checkpoint count");
    }
    for (double c : coefficients) {
        if (!std::isfinite(c)) {
            throw ParameterError("coefficients must be finite");
        }
    }
    const Checkpoint& first = checkpoints.front();
    std::uint64_t step = first.step();
    for (const Checkpoint& c : checkpoints.subspan(1)) {
        detail::check_same_structure(first, c);
        step = std::max(step, c.step());
    }

    Checkpoint result(step);
    std::vector<double> acc;
    std::vector<float> out;
    for (const auto& [name, tensor] : first) {
        const std::size_t n = tensor.data().size();
        acc.assign(n, 0.0);
        for (std::size_t k = 0; k < checkpoints.size(); ++k) {
            const auto values = checkpoints[k].at(name).data();
            const double coeff = coefficients[k];
            for (std::size_t j = 0; j < n; ++j) {
                acc[j] += coeff * static_cast<double>(values[j]);
            }
        }
        out.resize(n);
        for (std::size_t j = 0; j < n; ++j) {
            out[j] = static_cast<float>(acc[j]);
        }
        result.add(name, Tensor(tensor.dims(), out));
    }
    return result;
}

}  // namespace codemerge
