#include "matprobe/numerics/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>

#include "matprobe/error.hpp"

namespace matprobe::numerics {

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

}  // namespace

std::string shape_string(const std::vector<std::size_t>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

Tensor::Tensor(std::vector<std::size_t> shape, double fill) : shape_(std::move(shape)), values_(product(shape_), fill) {
    if (shape_.size() > 2) throw NumericError("tensors of rank > 2 are not supported");
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(values.begin(), values.end()) {
    if (shape_.size() > 2) throw NumericError("tensors of rank > 2 are not supported");
    if (values_.size() != product(shape_)) {
        throw NumericError("tensor value count " + std::to_string(values_.size()) + " does not match shape " +
                           shape_string(shape_));
    }
}

Tensor Tensor::vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor({rows, cols}, std::move(values));
}

std::size_t Tensor::rows() const {
    return shape_.size() == 2 ? shape_[0] : 1;
}

std::size_t Tensor::cols() const {
    if (shape_.empty()) return 1;
    return shape_.back();
}

double Tensor::item() const {
    if (values_.size() != 1) throw NumericError("item() on tensor of shape " + shape_string(shape_));
    return values_[0];
}

bool Tensor::all_finite() const {
    for (double v : values_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const {
    Tensor out(std::move(shape));
    if (out.size() != values_.size()) {
        throw NumericError("cannot reshape " + shape_string(shape_) + " to " + shape_string(out.shape_));
    }
    out.values_ = values_;
    return out;
}

void Tensor::fill(double v) {
    std::fill(values_.begin(), values_.end(), v);
}

Tensor& Tensor::operator+=(const Tensor& other) {
    if (other.values_.size() != values_.size()) {
        throw NumericError("cannot add tensor " + shape_string(other.shape_) + " into " + shape_string(shape_));
    }
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
    return *this;
}

}  // namespace matprobe::numerics
