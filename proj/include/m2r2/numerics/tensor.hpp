#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace m2r2 {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

/// Dense row-major tensor of doubles. Scalars have shape {1}; vectors {n};
/// matrices {rows, cols}.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor scalar(double value);
    static Tensor vector(std::vector<double> values);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
    static Tensor zeros_like(const Tensor& other);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }
    bool is_scalar() const { return data_.size() == 1; }

    // Rank-1 tensors behave as a single row for rows()/cols().
    std::size_t rows() const;
    std::size_t cols() const;

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
    double item() const;

    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }
    const std::vector<double>& data() const { return data_; }

    void fill(double value);
    bool all_finite() const;
    Tensor reshaped(Shape shape) const;
    std::vector<double> row(std::size_t r) const;

    bool operator==(const Tensor& other) const = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

std::size_t shape_size(const Shape& shape);

}  // namespace m2r2
