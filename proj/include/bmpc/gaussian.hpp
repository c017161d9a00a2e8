#pragma once

#include <cstddef>
#include <vector>

namespace bmpc {

// Diagonal Gaussian over an m-dimensional action. Used for the network
// policy, the planner's first-step output and the stored imitation targets.
struct DiagGaussian {
    std::vector<double> mean;
    std::vector<double> log_std;

    std::size_t dim() const { return mean.size(); }
    bool operator==(const DiagGaussian&) const = default;
};

// KL(p || q) in closed form, summed over dimensions.
double kl_diag_gaussian(const DiagGaussian& p, const DiagGaussian& q);

// Differential entropy sum_i (log_std_i + 0.5 * log(2 pi e)).
double entropy_diag_gaussian(const DiagGaussian& p);

// Log density of x under p.
double log_prob_diag_gaussian(const DiagGaussian& p, const std::vector<double>& x);

// Moment match of the uniform distribution on [-1, 1]^m: mean 0, std 1/sqrt(3).
DiagGaussian uniform_action_moments(std::size_t dim);

}  // namespace bmpc
