#include "bmpc/two_hot.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace bmpc {

double symlog(double x) { return std::copysign(std::log1p(std::fabs(x)), x); }

double symexp(double x) { return std::copysign(std::expm1(std::fabs(x)), x); }

TwoHot::TwoHot(std::size_t bins, double v_min, double v_max)
    : v_min_(v_min), v_max_(v_max), width_(0.0) {
    if (bins < 2) {
        throw std::invalid_argument("two-hot: need at least 2 bins");
    }
    if (!(v_min < v_max)) {
        throw std::invalid_argument("two-hot: v_min must be below v_max");
    }
    width_ = (v_max - v_min) / static_cast<double>(bins - 1);
    centers_.resize(bins);
    for (std::size_t i = 0; i < bins; ++i) {
        centers_[i] = v_min + width_ * static_cast<double>(i);
    }
    centers_.back() = v_max;
}

std::vector<double> TwoHot::encode(double value) const {
    if (std::isnan(value)) {
        throw std::invalid_argument("two-hot: cannot encode NaN");
    }
    const double x = std::clamp(symlog(value), v_min_, v_max_);
    std::vector<double> p(bins(), 0.0);
    double pos = (x - v_min_) / width_;
    const double nearest = std::round(pos);
    if (std::fabs(pos - nearest) < 1e-9) {
        pos = nearest;
    }
    const auto lower = static_cast<std::size_t>(std::floor(pos));
    if (lower >= bins() - 1) {
        p.back() = 1.0;
        return p;
    }
    const double frac = pos - static_cast<double>(lower);
    p[lower] = 1.0 - frac;
    if (frac > 0.0) {
        p[lower + 1] = frac;
    }
    return p;
}

Tensor TwoHot::encode_batch(std::span<const double> values) const {
    Tensor out = Tensor::matrix(values.size(), bins());
    for (std::size_t r = 0; r < values.size(); ++r) {
        const auto p = encode(values[r]);
        std::copy(p.begin(), p.end(), out.row(r).begin());
    }
    return out;
}

double TwoHot::decode_transformed(std::span<const double> probs) const {
    if (probs.size() != bins()) {
        throw std::invalid_argument("two-hot: decode expects " + std::to_string(bins()) +
                                    " probabilities, got " + std::to_string(probs.size()));
    }
    double x = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        x += probs[i] * centers_[i];
    }
    return x;
}

double TwoHot::decode(std::span<const double> probs) const {
    return symexp(decode_transformed(probs));
}

std::vector<double> TwoHot::decode_logits(const Tensor& logits) const {
    const std::size_t n = logits.rows();
    const std::size_t d = logits.cols();
    if (d != bins()) {
        throw std::invalid_argument("two-hot: logits have " + std::to_string(d) +
                                    " columns, expected " + std::to_string(bins()));
    }
    std::vector<double> out(n);
    std::vector<double> p(d);
    for (std::size_t r = 0; r < n; ++r) {
        const auto row = logits.row(r);
        const double m = *std::max_element(row.begin(), row.end());
        for (std::size_t c = 0; c < d; ++c) {
            p[c] = row[c] - m;
        }
        exp_inplace(p.data(), d);
        double z = 0.0;
        double x = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            z += p[c];
            x += p[c] * centers_[c];
        }
        out[r] = symexp(x / z);
    }
    return out;
}

}  // namespace bmpc
