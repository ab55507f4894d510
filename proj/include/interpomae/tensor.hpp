// Dense row-major double tensor used throughout the library.
#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace interpomae {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Row-major storage, 64-bit floats. Zero extents are permitted only so that
// operations like split_patches can return an empty part; network ops reject
// them via their own shape checks.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape);  // zero-filled
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double v);
    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, double v);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t numel() const { return data_.size(); }
    std::size_t dim(std::size_t axis) const;

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double operator[](std::size_t i) const { return data_[i]; }
    double& operator[](std::size_t i) { return data_[i]; }

    // 2-D / 3-D accessors (unchecked beyond debug asserts).
    double at(std::size_t i, std::size_t j) const;
    double& at(std::size_t i, std::size_t j);
    double at(std::size_t i, std::size_t j, std::size_t k) const;
    double& at(std::size_t i, std::size_t j, std::size_t k);

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;

private:
    Shape shape_;
    std::vector<double> data_;
};

// True iff shapes match and every element has the identical bit pattern
// (distinguishes -0.0 from 0.0; NaN payloads compare by bits).
bool bitwise_equal(const Tensor& a, const Tensor& b);

}  // namespace interpomae
