#include "bmpc/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace bmpc {

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) {
            os << ", ";
        }
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size()) {
        throw std::invalid_argument("tensor: shape " + shape_string(shape_) + " does not match " +
                                    std::to_string(data_.size()) + " values");
    }
}

std::size_t Tensor::rows() const {
    if (shape_.empty()) {
        return 1;
    }
    return shape_[0];
}

std::size_t Tensor::cols() const {
    if (shape_.size() <= 1) {
        return 1;
    }
    return data_.size() / shape_[0];
}

double Tensor::item() const {
    if (data_.size() != 1) {
        throw std::logic_error("tensor: item() on tensor of shape " + shape_string(shape_));
    }
    return data_[0];
}

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const {
    if (shape_numel(shape) != data_.size()) {
        throw std::invalid_argument("tensor: cannot reshape " + shape_string(shape_) + " to " +
                                    shape_string(shape));
    }
    return Tensor(std::move(shape), data_);
}

void exp_inplace(double* p, std::size_t n) {
    using Block = Eigen::Array<double, 4, 1>;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        Block b = Eigen::Map<Block>(p + i);
        b = b.exp();
        Eigen::Map<Block>(p + i) = b;
    }
    if (i < n) {
        Block b = Block::Zero();
        std::copy(p + i, p + n, b.data());
        b = b.exp();
        std::copy(b.data(), b.data() + (n - i), p + i);
    }
}

}  // namespace bmpc
