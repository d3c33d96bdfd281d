#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "udar/errors.hpp"

namespace udar {

/// Dense row-major double array. Immutable by convention once an operation
/// has produced it; copies are plain value copies.
class Array {
public:
    Array() = default;

    explicit Array(std::vector<std::size_t> shape)
        : shape_(std::move(shape)), data_(count(shape_), 0.0) {}

    Array(std::vector<std::size_t> shape, std::vector<double> values)
        : shape_(std::move(shape)), data_(std::move(values)) {
        if (data_.size() != count(shape_)) {
            throw ContractViolation("Array: value count " + std::to_string(data_.size()) +
                                    " does not match shape " + shape_str());
        }
    }

    static Array scalar(double v) { return Array({1}, {v}); }

    static Array zeros(std::vector<std::size_t> shape) { return Array(std::move(shape)); }

    static Array full(std::vector<std::size_t> shape, double v) {
        Array a(std::move(shape));
        for (double& x : a.data_) x = v;
        return a;
    }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

    double& at(std::size_t i, std::size_t j, std::size_t k) {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    double at(std::size_t i, std::size_t j, std::size_t k) const {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }

    /// Pointer to the start of row (i, j, :) of a rank-3 array.
    double* row3(std::size_t i, std::size_t j) {
        return data_.data() + (i * shape_[1] + j) * shape_[2];
    }
    const double* row3(std::size_t i, std::size_t j) const {
        return data_.data() + (i * shape_[1] + j) * shape_[2];
    }

    bool same_shape(const Array& other) const { return shape_ == other.shape_; }

    bool is_scalar() const { return size() == 1; }

    /// Scalar payload; contract-checked.
    double scalar_value() const {
        if (!is_scalar()) throw ContractViolation("Array: expected scalar, shape " + shape_str());
        return data_[0];
    }

    bool all_finite() const {
        for (double v : data_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << "(";
        for (std::size_t i = 0; i < shape_.size(); ++i) {
            if (i) os << ", ";
            os << shape_[i];
        }
        os << ")";
        return os.str();
    }

    static std::size_t count(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (std::size_t d : shape) {
            if (d == 0) throw ContractViolation("Array: zero-length dimension");
            n *= d;
        }
        return shape.empty() ? 0 : n;
    }

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

inline void check_same_shape(const Array& a, const Array& b, const char* op) {
    if (!a.same_shape(b)) {
        throw ContractViolation(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                                b.shape_str());
    }
}

inline void check_finite(const Array& a, const char* op) {
    if (!a.all_finite()) {
        throw NumericDomainError(std::string(op) + ": non-finite input");
    }
}

}  // namespace udar
