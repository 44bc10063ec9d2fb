#include "mnde/tensor.hpp"

#include "mnde/errors.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cmath>
#include <sstream>

namespace mnde {

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
    for (std::size_t d : shape_)
        if (d == 0) throw DimensionError("tensor dimension must be positive: " + shape_str(shape_));
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    for (std::size_t d : shape_)
        if (d == 0) throw DimensionError("tensor dimension must be positive: " + shape_str(shape_));
    if (shape_size(shape_) != data_.size())
        throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str(shape_));
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw DimensionError("ragged matrix literal");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
    return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= shape_.size())
        throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape_));
    return shape_[axis];
}

double& Tensor::at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
double Tensor::at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

double Tensor::item() const {
    if (data_.size() != 1) throw DimensionError("item() on non-scalar tensor " + shape_str(shape_));
    return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size())
        throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const noexcept {
    // an all-ones exponent marks inf and NaN; adding one exponent unit carries it into the sign bit
    constexpr std::uint64_t exponent = 0x7ff0000000000000ULL;
    constexpr std::uint64_t unit = 0x0010000000000000ULL;
    std::uint64_t acc = 0;
    for (double v : data_) acc |= (std::bit_cast<std::uint64_t>(v) & exponent) + unit;
    return (acc >> 63) == 0;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw DimensionError("max_abs_diff shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

} // namespace mnde
