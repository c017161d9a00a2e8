#pragma once

// Hand-built latent models with closed-form rewards, used to test the
// planner and reanalysis without any learning.

#include <cmath>
#include <functional>
#include <vector>

#include "bmpc/latent_model.hpp"

namespace bmpc::testing {

class ToyModel final : public LatentModel {
public:
    // reward(z_row, a_row) -> r; value(z_row) -> v. The latent carries a step
    // counter in column 0 so that rewards may depend on time.
    using RewardFn = std::function<double(double t, const double* a)>;
    using ValueFn = std::function<double(double t)>;

    ToyModel(std::size_t action_dim, RewardFn reward, ValueFn value = [](double) { return 0.0; })
        : m_(action_dim), reward_(std::move(reward)), value_(std::move(value)) {}

    std::vector<double> prior_mean;
    std::vector<double> prior_log_std;

    std::size_t latent_dim() const override { return 1; }
    std::size_t action_dim() const override { return m_; }

    Transition transition(const Tensor& z, const Tensor& a) const override {
        Transition out{Tensor::matrix(z.rows(), 1), std::vector<double>(z.rows())};
        for (std::size_t r = 0; r < z.rows(); ++r) {
            out.next[r] = z[r] + 1.0;
            out.reward[r] = reward_(z[r], a.data() + r * m_);
        }
        return out;
    }

    std::vector<double> value(const Tensor& z) const override {
        std::vector<double> v(z.rows());
        for (std::size_t r = 0; r < z.rows(); ++r) {
            v[r] = value_(z[r]);
        }
        return v;
    }

    Prior prior(const Tensor& z) const override {
        Prior p{Tensor::matrix(z.rows(), m_), Tensor::matrix(z.rows(), m_)};
        for (std::size_t r = 0; r < z.rows(); ++r) {
            for (std::size_t i = 0; i < m_; ++i) {
                p.mean.at(r, i) = prior_mean.empty() ? 0.0 : prior_mean[i];
                p.log_std.at(r, i) = prior_log_std.empty() ? 0.0 : prior_log_std[i];
            }
        }
        return p;
    }

private:
    std::size_t m_;
    RewardFn reward_;
    ValueFn value_;
};

inline Tensor origin() { return Tensor::matrix(1, 1, 0.0); }

}  // namespace bmpc::testing
