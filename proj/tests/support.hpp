#pragma once

// Shared helpers for the unit and acceptance tests: random configuration
// generators and a finite-difference gradient checker.

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "bmpc/autodiff.hpp"
#include "bmpc/learner.hpp"
#include "bmpc/parameter_set.hpp"
#include "bmpc/world_model.hpp"

namespace bmpc::testing {

inline Tensor random_tensor(std::vector<std::size_t> shape, std::mt19937_64& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> n(0.0, scale);
    for (auto& v : t.values()) {
        v = n(rng);
    }
    return t;
}

inline Tensor uniform_tensor(std::vector<std::size_t> shape, std::mt19937_64& rng, double lo, double hi) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> u(lo, hi);
    for (auto& v : t.values()) {
        v = u(rng);
    }
    return t;
}

struct GradCheckResult {
    double worst = 0.0;
    std::string worst_name;
    double analytic = 0.0;
    double numeric = 0.0;
    std::size_t checked = 0;
};

// Relative error with a small absolute floor so that two vanishing
// derivatives do not produce 0/0.
inline double relative_error(double a, double n, double floor = 1e-7) {
    return std::fabs(a - n) / std::max({std::fabs(a), std::fabs(n), floor});
}

// Compares the directional derivative along a random unit direction per
// tensor with a central difference of step eps. `loss` must rebuild the
// graph from the current parameter values every call.
inline GradCheckResult grad_check(const std::vector<ad::Var>& params,
                                  const std::function<ad::Var()>& loss, std::mt19937_64& rng,
                                  double eps = 1e-5, double floor = 1e-7) {
    for (auto p : params) {
        p.zero_grad();
    }
    ad::backward(loss());
    GradCheckResult out;
    std::normal_distribution<double> n(0.0, 1.0);
    for (auto p : params) {
        auto& value = p.mutable_value();
        std::vector<double> dir(value.size());
        double norm = 0.0;
        for (auto& d : dir) {
            d = n(rng);
            norm += d * d;
        }
        norm = std::sqrt(norm);
        double analytic = 0.0;
        const Tensor& g = p.grad();
        for (std::size_t i = 0; i < dir.size(); ++i) {
            dir[i] /= norm;
            analytic += dir[i] * g[i];
        }
        const Tensor saved = value;
        for (std::size_t i = 0; i < dir.size(); ++i) {
            value[i] = saved[i] + eps * dir[i];
        }
        double plus = 0.0;
        double minus = 0.0;
        {
            ad::NoGradGuard guard;
            plus = loss().item();
            for (std::size_t i = 0; i < dir.size(); ++i) {
                value[i] = saved[i] - eps * dir[i];
            }
            minus = loss().item();
        }
        value = saved;
        const double numeric = (plus - minus) / (2.0 * eps);
        const double err = relative_error(analytic, numeric, floor);
        ++out.checked;
        if (err > out.worst) {
            out.worst = err;
            out.worst_name = p.name();
            out.analytic = analytic;
            out.numeric = numeric;
        }
    }
    for (auto p : params) {
        p.zero_grad();
    }
    return out;
}

// Random small model configuration.
inline ModelConfig random_model_config(std::mt19937_64& rng) {
    auto pick = [&](std::size_t lo, std::size_t hi) {
        return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
    };
    ModelConfig c;
    c.obs_dim = pick(1, 5);
    c.action_dim = pick(1, 3);
    c.simnorm_group = pick(2, 4);
    c.latent_dim = c.simnorm_group * pick(2, 4);
    c.hidden_dim = pick(4, 12);
    c.hidden_layers = pick(1, 2);
    c.bins = pick(5, 21);
    c.num_values = pick(1, 3);
    return c;
}

// Moves every parameter away from its structured initialization (zeroed
// output layers, unit gains) so that every path carries gradient.
inline void jitter(ParameterSet& params, std::mt19937_64& rng, double scale = 0.3) {
    std::normal_distribution<double> n(0.0, scale);
    for (auto p : params.params()) {
        for (auto& v : p.mutable_value().values()) {
            v += n(rng);
        }
    }
}

// Sets a head's final layer so that it outputs logits whose decoded value
// is `value` for every input: zero weights and log two-hot probabilities as
// the bias, with -200 standing in for log 0.
inline void pin_head(WorldModel& model, const std::string& prefix, double value, bool target = false) {
    const auto& c = model.config();
    const std::string last = prefix + "l" + std::to_string(c.hidden_layers) + ".";
    auto& params = target ? model.target_values() : model.params();
    params.get(last + "weight").node()->value.fill(0.0);
    auto& bias = params.get(last + "bias").node()->value;
    const auto probs = model.two_hot().encode(value);
    for (std::size_t i = 0; i < probs.size(); ++i) {
        bias[i] = probs[i] > 0.0 ? std::log(probs[i]) : -200.0;
    }
}

inline TrainingBatch random_batch(const ModelConfig& c, std::size_t size, std::size_t horizon,
                                  std::mt19937_64& rng) {
    TrainingBatch b;
    b.size = size;
    b.horizon = horizon;
    std::uniform_real_distribution<double> r(-2.0, 2.0);
    for (std::size_t t = 0; t <= horizon; ++t) {
        b.obs.push_back(random_tensor({size, c.obs_dim}, rng));
        b.next_obs.push_back(random_tensor({size, c.obs_dim}, rng));
        b.action.push_back(uniform_tensor({size, c.action_dim}, rng, -1.0, 1.0));
        b.pi_mean.push_back(uniform_tensor({size, c.action_dim}, rng, -0.9, 0.9));
        b.pi_log_std.push_back(uniform_tensor({size, c.action_dim}, rng, -2.0, 1.0));
        std::vector<double> rew(size);
        for (auto& v : rew) {
            v = r(rng);
        }
        b.reward.push_back(std::move(rew));
    }
    for (std::size_t i = 0; i < size; ++i) {
        b.refs.push_back({i, 0});
    }
    return b;
}

}  // namespace bmpc::testing
