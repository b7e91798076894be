#pragma once
// Dense f64 tensor, row-major. Shapes are small (<=4 dims in practice).

#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "mdp/errors.hpp"

namespace mdp {

class Tensor {
public:
    Tensor() = default;

    // Zero-filled tensor of the given shape.
    explicit Tensor(std::vector<size_t> shape)
        : shape_(std::move(shape)), data_(count(shape_), 0.0) {}

    Tensor(std::vector<size_t> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (count(shape_) != data_.size())
            throw UsageError("Tensor: shape/data size mismatch (" +
                             std::to_string(count(shape_)) + " vs " +
                             std::to_string(data_.size()) + ")");
        check_finite();
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    const std::vector<size_t>& shape() const { return shape_; }
    size_t size() const { return data_.size(); }
    size_t dim(size_t i) const { return shape_.at(i); }
    size_t ndim() const { return shape_.size(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double& operator[](size_t i) { return data_[i]; }
    double operator[](size_t i) const { return data_[i]; }

    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    void check_finite() const {
        for (double v : data_)
            if (!std::isfinite(v))
                throw NumericError("Tensor: non-finite value at construction");
    }

    static size_t count(const std::vector<size_t>& shape) {
        size_t n = 1;
        for (size_t d : shape) n *= d;
        return n;
    }

    static std::string shape_str(const std::vector<size_t>& s) {
        std::string out = "[";
        for (size_t i = 0; i < s.size(); ++i)
            out += (i ? "," : "") + std::to_string(s[i]);
        return out + "]";
    }

private:
    std::vector<size_t> shape_;
    std::vector<double> data_;
};

} // namespace mdp
