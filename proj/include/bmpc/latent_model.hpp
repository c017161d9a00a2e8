#pragma once

#include <cstddef>
#include <vector>

#include "bmpc/tensor.hpp"

namespace bmpc {

// Batched, gradient-free view of a latent model as consumed by the planner.
// Rows of every tensor are independent samples.
class LatentModel {
public:
    struct Transition {
        Tensor next;                 // [N, L]
        std::vector<double> reward;  // [N]
    };
    struct Prior {
        Tensor mean;     // [N, m]
        Tensor log_std;  // [N, m]
    };

    virtual ~LatentModel() = default;

    virtual std::size_t latent_dim() const = 0;
    virtual std::size_t action_dim() const = 0;
    virtual Transition transition(const Tensor& z, const Tensor& a) const = 0;
    virtual std::vector<double> value(const Tensor& z) const = 0;
    virtual Prior prior(const Tensor& z) const = 0;
};

}  // namespace bmpc
