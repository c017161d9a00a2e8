#include "bmpc/planner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

namespace bmpc {
namespace {

Tensor repeat_rows(const Tensor& z0, std::size_t n) {
    if (z0.rows() != 1) {
        throw std::invalid_argument("planner: expected a single latent row, got " +
                                    shape_string(z0.shape()));
    }
    const std::size_t l = z0.cols();
    Tensor out = Tensor::matrix(n, l);
    for (std::size_t r = 0; r < n; ++r) {
        std::copy_n(z0.data(), l, out.data() + r * l);
    }
    return out;
}

std::vector<double> rollout(const LatentModel& model, const Tensor& z0,
                            const std::vector<Tensor>& actions, double discount, bool throw_on_nan) {
    const std::size_t n = z0.rows();
    std::vector<double> total(n, 0.0);
    std::vector<bool> bad(n, false);
    Tensor z = z0;
    double g = 1.0;
    for (std::size_t t = 0; t < actions.size(); ++t) {
        auto step = model.transition(z, actions[t]);
        for (std::size_t i = 0; i < n; ++i) {
            if (!std::isfinite(step.reward[i])) {
                if (throw_on_nan) {
                    throw std::runtime_error("estimate_value: non-finite reward at step " +
                                             std::to_string(t));
                }
                bad[i] = true;
            }
            total[i] += g * step.reward[i];
        }
        if (throw_on_nan && !step.next.all_finite()) {
            throw std::runtime_error("estimate_value: non-finite latent after step " +
                                     std::to_string(t));
        }
        z = std::move(step.next);
        g *= discount;
    }
    const auto v = model.value(z);
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(v[i])) {
            if (throw_on_nan) {
                throw std::runtime_error("estimate_value: non-finite terminal value at step " +
                                         std::to_string(actions.size()));
            }
            bad[i] = true;
        }
        total[i] += g * v[i];
        if (bad[i] || !std::isfinite(total[i])) {
            total[i] = std::numeric_limits<double>::quiet_NaN();
        }
    }
    return total;
}

}  // namespace

void PlannerConfig::validate() const {
    if (horizon < 1) {
        throw std::invalid_argument("planner config: horizon must be at least 1");
    }
    if (elites < 1 || elites > samples + policy_samples) {
        throw std::invalid_argument("planner config: elites must lie in [1, samples + policy_samples]");
    }
    if (!(temperature > 0.0)) {
        throw std::invalid_argument("planner config: temperature must be positive");
    }
    if (!(sigma_floor > 0.0) || !(sigma_init >= sigma_floor)) {
        throw std::invalid_argument("planner config: need 0 < sigma_floor <= sigma_init");
    }
    if (!(discount >= 0.0 && discount <= 1.0)) {
        throw std::invalid_argument("planner config: discount must lie in [0, 1]");
    }
}

PlanDistribution PlanDistribution::initial(std::size_t horizon, std::size_t action_dim,
                                           double sigma) {
    return {horizon, action_dim, std::vector<double>(horizon * action_dim, 0.0),
            std::vector<double>(horizon * action_dim, sigma)};
}

DiagGaussian PlanDistribution::step(std::size_t t) const {
    DiagGaussian g;
    g.mean.assign(mu.begin() + static_cast<std::ptrdiff_t>(t * action_dim),
                  mu.begin() + static_cast<std::ptrdiff_t>((t + 1) * action_dim));
    g.log_std.resize(action_dim);
    for (std::size_t i = 0; i < action_dim; ++i) {
        g.log_std[i] = std::log(sigma[t * action_dim + i]);
    }
    return g;
}

PlanDistribution PlanDistribution::shifted(const LatentModel& model, const Tensor& z_next) const {
    const std::size_t m = action_dim;
    PlanDistribution out = *this;
    std::copy(mu.begin() + static_cast<std::ptrdiff_t>(m), mu.end(), out.mu.begin());
    std::copy(sigma.begin() + static_cast<std::ptrdiff_t>(m), sigma.end(), out.sigma.begin());
    Tensor z = z_next;
    for (std::size_t t = 0; t + 1 < horizon; ++t) {
        Tensor a({1, m}, std::vector<double>(out.mu.begin() + static_cast<std::ptrdiff_t>(t * m),
                                             out.mu.begin() + static_cast<std::ptrdiff_t>((t + 1) * m)));
        z = model.transition(z, a).next;
    }
    const auto prior = model.prior(z);
    for (std::size_t i = 0; i < m; ++i) {
        out.mu[(horizon - 1) * m + i] = prior.mean[i];
        out.sigma[(horizon - 1) * m + i] = std::exp(prior.log_std[i]);
    }
    return out;
}

double estimate_value(const LatentModel& model, const Tensor& z0, std::span<const double> actions,
                      std::size_t horizon, double discount) {
    const std::size_t m = model.action_dim();
    if (actions.size() != horizon * m) {
        throw std::invalid_argument("estimate_value: expected " + std::to_string(horizon * m) +
                                    " action values, got " + std::to_string(actions.size()));
    }
    for (double a : actions) {
        if (!(std::fabs(a) <= 1.0 + 1e-12)) {
            throw std::invalid_argument("estimate_value: action outside [-1, 1]");
        }
    }
    std::vector<Tensor> seq;
    for (std::size_t t = 0; t < horizon; ++t) {
        seq.emplace_back(std::vector<std::size_t>{1, m},
                         std::vector<double>(actions.begin() + static_cast<std::ptrdiff_t>(t * m),
                                             actions.begin() + static_cast<std::ptrdiff_t>((t + 1) * m)));
    }
    return rollout(model, z0, seq, discount, true).front();
}

std::vector<double> estimate_values(const LatentModel& model, const Tensor& z0,
                                    const std::vector<Tensor>& actions, double discount) {
    return rollout(model, z0, actions, discount, false);
}

Planner::Planner(PlannerConfig config) : config_(config) { config_.validate(); }

PlanResult Planner::plan(const LatentModel& model, const Tensor& z0,
                         const std::optional<PlanDistribution>& warm_start,
                         std::uint64_t seed) const {
    ++calls_;
    const auto& c = config_;
    const std::size_t h = c.horizon;
    const std::size_t m = model.action_dim();
    if (!z0.all_finite()) {
        throw std::invalid_argument("plan: non-finite latent");
    }
    if (warm_start && (warm_start->horizon != h || warm_start->action_dim != m)) {
        throw std::invalid_argument("plan: warm start shape does not match planner horizon");
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    PlanDistribution dist = warm_start ? *warm_start : PlanDistribution::initial(h, m, c.sigma_init);
    std::vector<double> sampling_sigma = dist.sigma;
    if (warm_start && c.iterations > 0) {
        std::fill(sampling_sigma.begin(), sampling_sigma.end(), c.sigma_init);
    }

    const std::size_t np = c.policy_samples;
    const std::size_t n = np + 2 + c.samples;
    const Tensor z_all = repeat_rows(z0, n);
    const Tensor z_prior = repeat_rows(z0, np);

    auto sample_prior = [&](std::vector<Tensor>& actions) {
        if (np == 0) {
            return;
        }
        Tensor z = z_prior;
        for (std::size_t t = 0; t < h; ++t) {
            const auto prior = model.prior(z);
            Tensor a = Tensor::matrix(np, m);
            for (std::size_t i = 0; i < np * m; ++i) {
                a[i] = std::clamp(prior.mean[i] + std::exp(prior.log_std[i]) * normal(rng), -1.0, 1.0);
            }
            for (std::size_t r = 0; r < np; ++r) {
                std::copy_n(a.data() + r * m, m, actions[t].data() + r * m);
            }
            if (t + 1 < h) {
                z = model.transition(z, a).next;
            }
        }
    };

    PlanResult result;
    std::vector<double> best_seq = dist.mu;
    double best_score = -std::numeric_limits<double>::infinity();

    if (c.iterations == 0) {
        std::vector<Tensor> actions(h, Tensor::matrix(np, m));
        sample_prior(actions);
        if (np > 0) {
            result.prior_values = estimate_values(model, z_prior, actions, c.discount);
        }
    }

    for (std::size_t iter = 0; iter < c.iterations; ++iter) {
        std::vector<Tensor> actions(h, Tensor::matrix(n, m));
        sample_prior(actions);
        for (std::size_t t = 0; t < h; ++t) {
            Tensor& a = actions[t];
            for (std::size_t i = 0; i < m; ++i) {
                a.at(np, i) = std::clamp(dist.mu[t * m + i], -1.0, 1.0);
                a.at(np + 1, i) = best_seq[t * m + i];
            }
        }
        for (std::size_t r = np + 2; r < n; ++r) {
            for (std::size_t t = 0; t < h; ++t) {
                for (std::size_t i = 0; i < m; ++i) {
                    const double s = dist.mu[t * m + i] + sampling_sigma[t * m + i] * normal(rng);
                    actions[t].at(r, i) = std::clamp(s, -1.0, 1.0);
                }
            }
        }

        auto values = estimate_values(model, z_all, actions, c.discount);
        if (iter == 0) {
            result.prior_values.assign(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(np));
        }
        std::size_t finite = 0;
        for (auto& v : values) {
            if (std::isnan(v)) {
                v = -std::numeric_limits<double>::infinity();
            } else {
                ++finite;
            }
        }
        if (finite == 0) {
            throw std::runtime_error("plan: every candidate sequence scored NaN");
        }

        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        const std::size_t k = std::min(c.elites, finite);
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                          [&](std::size_t a, std::size_t b) {
                              return values[a] > values[b] || (values[a] == values[b] && a < b);
                          });
        const double smax = values[order[0]];
        const double smin = values[order[k - 1]];
        const double denom = (smax - smin + 1e-9) * c.temperature;
        std::vector<double> w(k);
        double wsum = 0.0;
        for (std::size_t e = 0; e < k; ++e) {
            w[e] = std::exp((values[order[e]] - smax) / denom);
            wsum += w[e];
        }

        if (smax > best_score) {
            best_score = smax;
            for (std::size_t t = 0; t < h; ++t) {
                for (std::size_t i = 0; i < m; ++i) {
                    best_seq[t * m + i] = actions[t].at(order[0], i);
                }
            }
        }
        // The best-so-far sequence is always a candidate, so this never decreases.
        result.best_scores.push_back(smax);

        for (std::size_t t = 0; t < h; ++t) {
            for (std::size_t i = 0; i < m; ++i) {
                double mu = 0.0;
                for (std::size_t e = 0; e < k; ++e) {
                    mu += w[e] * actions[t].at(order[e], i);
                }
                mu /= wsum;
                double var = 0.0;
                for (std::size_t e = 0; e < k; ++e) {
                    const double d = actions[t].at(order[e], i) - mu;
                    var += w[e] * d * d;
                }
                var /= wsum;
                dist.mu[t * m + i] = std::clamp(mu, -1.0, 1.0);
                dist.sigma[t * m + i] = std::max(std::sqrt(var), c.sigma_floor);
            }
        }
        sampling_sigma = dist.sigma;
    }

    result.distribution = dist;
    result.first_step = dist.step(0);
    result.selected = dist.mu;
    result.selected_value = estimate_value(model, z0, dist.mu, h, c.discount);
    return result;
}

std::vector<double> act(const PlanResult& result, ActMode mode, std::mt19937_64& rng) {
    const auto& g = result.first_step;
    std::vector<double> a = g.mean;
    if (mode == ActMode::stochastic) {
        std::normal_distribution<double> normal(0.0, 1.0);
        for (std::size_t i = 0; i < a.size(); ++i) {
            a[i] = std::clamp(g.mean[i] + std::exp(g.log_std[i]) * normal(rng), -1.0, 1.0);
        }
    }
    return a;
}

double delta_q(const PlanResult& result) {
    if (result.prior_values.empty()) {
        throw std::invalid_argument("delta_q: plan carries no prior-sequence values");
    }
    double mean = 0.0;
    for (double v : result.prior_values) {
        mean += v;
    }
    mean /= static_cast<double>(result.prior_values.size());
    return result.selected_value - mean;
}

}  // namespace bmpc
