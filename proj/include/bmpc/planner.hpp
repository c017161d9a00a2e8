#pragma once

#include <atomic>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "bmpc/gaussian.hpp"
#include "bmpc/latent_model.hpp"

namespace bmpc {

struct PlannerConfig {
    std::size_t horizon = 3;
    std::size_t iterations = 6;
    std::size_t samples = 512;
    std::size_t policy_samples = 24;
    std::size_t elites = 64;
    double temperature = 0.5;
    double sigma_floor = 0.05;
    double sigma_init = 2.0;
    double discount = 0.99;

    void validate() const;
};

// Time-indexed diagonal Gaussian over an action sequence, stored row-major H x m.
struct PlanDistribution {
    std::size_t horizon = 0;
    std::size_t action_dim = 0;
    std::vector<double> mu;
    std::vector<double> sigma;

    static PlanDistribution initial(std::size_t horizon, std::size_t action_dim, double sigma);
    DiagGaussian step(std::size_t t) const;
    // Drops the first step and appends the prior's statistics at the latent
    // reached by rolling the remaining means forward from `z_next`.
    PlanDistribution shifted(const LatentModel& model, const Tensor& z_next) const;
    bool operator==(const PlanDistribution&) const = default;
};

struct PlanResult {
    PlanDistribution distribution;
    DiagGaussian first_step;
    // Elite-weighted mean sequence (the final mu), H x m.
    std::vector<double> selected;
    double selected_value = 0.0;
    // Estimated values of the prior-policy sequences from the first iteration.
    std::vector<double> prior_values;
    // Best elite score after each iteration.
    std::vector<double> best_scores;
};

// Discounted model return of one open-loop sequence from z0 ([1, L]):
// sum_h gamma^h R(z_h, a_h) + gamma^H V(z_H). Throws on a non-finite step.
double estimate_value(const LatentModel& model, const Tensor& z0, std::span<const double> actions,
                      std::size_t horizon, double discount);

// Batched form: z0 is [N, L], actions[t] is [N, m]. Non-finite rows come back as NaN.
std::vector<double> estimate_values(const LatentModel& model, const Tensor& z0,
                                    const std::vector<Tensor>& actions, double discount);

enum class ActMode { stochastic, deterministic };

// MPPI over a learned latent model, with a share of candidates drawn by
// rolling the model's prior policy forward.
class Planner {
public:
    explicit Planner(PlannerConfig config);
    Planner(const Planner& other) : config_(other.config_) {}

    const PlannerConfig& config() const { return config_; }
    PlanResult plan(const LatentModel& model, const Tensor& z0,
                    const std::optional<PlanDistribution>& warm_start, std::uint64_t seed) const;
    std::uint64_t calls() const { return calls_.load(); }

private:
    PlannerConfig config_;
    mutable std::atomic<std::uint64_t> calls_{0};
};

std::vector<double> act(const PlanResult& result, ActMode mode, std::mt19937_64& rng);

// Value gain of the selected sequence over the mean prior-policy sequence.
double delta_q(const PlanResult& result);

}  // namespace bmpc
