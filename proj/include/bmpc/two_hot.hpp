#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "bmpc/tensor.hpp"

namespace bmpc {

double symlog(double x);
double symexp(double x);

// Discrete regression support: `bins` centers spaced uniformly over
// [v_min, v_max] in symlog space. Real values are symlog-transformed, clamped
// and split between the two neighbouring centers.
class TwoHot {
public:
    TwoHot(std::size_t bins, double v_min, double v_max);

    std::size_t bins() const { return centers_.size(); }
    double v_min() const { return v_min_; }
    double v_max() const { return v_max_; }
    double bin_width() const { return width_; }
    // Center of bin i in transformed (symlog) space.
    double center(std::size_t i) const { return centers_.at(i); }
    const std::vector<double>& centers() const { return centers_; }

    std::vector<double> encode(double value) const;
    // Encodes each value into one row of an [N, bins] probability matrix.
    Tensor encode_batch(std::span<const double> values) const;

    // Expectation of the centers under p, in transformed space.
    double decode_transformed(std::span<const double> probs) const;
    // Real-valued decode: symexp of the transformed expectation.
    double decode(std::span<const double> probs) const;
    // Softmax of each logits row, then decode.
    std::vector<double> decode_logits(const Tensor& logits) const;

private:
    double v_min_;
    double v_max_;
    double width_;
    std::vector<double> centers_;
};

}  // namespace bmpc
