#include "m2r2/numerics/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace m2r2 {

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

namespace {

void validate_shape(const Shape& shape) {
    if (shape.empty()) throw std::invalid_argument("tensor shape must be nonempty");
    for (auto d : shape) {
        if (d == 0) throw std::invalid_argument("tensor shape " + shape_string(shape) + " has a zero extent");
    }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
    validate_shape(shape_);
    data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
    validate_shape(shape_);
    if (data_.size() != shape_size(shape_)) {
        throw std::invalid_argument("tensor of shape " + shape_string(shape_) + " needs " +
                                    std::to_string(shape_size(shape_)) + " values, got " +
                                    std::to_string(data_.size()));
    }
}

Tensor Tensor::scalar(double value) { return Tensor({1}, std::vector<double>{value}); }

Tensor Tensor::vector(std::vector<double> values) {
    const auto n = values.size();
    return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor({rows, cols}, std::move(values));
}

Tensor Tensor::zeros_like(const Tensor& other) { return Tensor(other.shape(), 0.0); }

std::size_t Tensor::rows() const { return shape_.size() >= 2 ? shape_[0] : 1; }

std::size_t Tensor::cols() const { return shape_.size() >= 2 ? shape_[1] : (shape_.empty() ? 0 : shape_[0]); }

double Tensor::item() const {
    if (!is_scalar()) throw std::invalid_argument("item() on non-scalar tensor " + shape_string(shape_));
    return data_[0];
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size()) {
        throw std::invalid_argument("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    return Tensor(std::move(shape), data_);
}

std::vector<double> Tensor::row(std::size_t r) const {
    const auto c = cols();
    return {data_.begin() + static_cast<std::ptrdiff_t>(r * c), data_.begin() + static_cast<std::ptrdiff_t>((r + 1) * c)};
}

}  // namespace m2r2
