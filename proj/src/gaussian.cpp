#include "bmpc/gaussian.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace bmpc {

double kl_diag_gaussian(const DiagGaussian& p, const DiagGaussian& q) {
    if (p.dim() != q.dim() || p.log_std.size() != p.dim() || q.log_std.size() != q.dim()) {
        throw std::invalid_argument("kl_diag_gaussian: dimension mismatch " +
                                    std::to_string(p.dim()) + " vs " + std::to_string(q.dim()));
    }
    double kl = 0.0;
    for (std::size_t i = 0; i < p.dim(); ++i) {
        const double var_ratio = std::exp(2.0 * (p.log_std[i] - q.log_std[i]));
        const double dm = p.mean[i] - q.mean[i];
        kl += q.log_std[i] - p.log_std[i] +
              0.5 * (var_ratio + dm * dm * std::exp(-2.0 * q.log_std[i])) - 0.5;
    }
    return kl;
}

double entropy_diag_gaussian(const DiagGaussian& p) {
    const double c = 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e);
    double h = 0.0;
    for (double ls : p.log_std) {
        h += ls + c;
    }
    return h;
}

double log_prob_diag_gaussian(const DiagGaussian& p, const std::vector<double>& x) {
    if (x.size() != p.dim()) {
        throw std::invalid_argument("log_prob_diag_gaussian: dimension mismatch");
    }
    const double c = 0.5 * std::log(2.0 * std::numbers::pi);
    double lp = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double u = (x[i] - p.mean[i]) * std::exp(-p.log_std[i]);
        lp += -0.5 * u * u - p.log_std[i] - c;
    }
    return lp;
}

DiagGaussian uniform_action_moments(std::size_t dim) {
    return {std::vector<double>(dim, 0.0),
            std::vector<double>(dim, -0.5 * std::log(3.0))};
}

}  // namespace bmpc
