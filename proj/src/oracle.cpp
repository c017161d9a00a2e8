#include "bmpc/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace bmpc {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct Lerp {
    std::size_t i0, i1, j0, j1;
    double fi, fj;
};

}  // namespace

PendulumOracle::PendulumOracle(const PendulumSwingup& env, const OracleOptions& options)
    : params_(env.params()),
      repeat_(env.spec().action_repeat),
      decisions_(env.spec().agent_steps()),
      grid_(options.grid) {
    if (grid_ < 3 || options.actions < 2) {
        throw std::invalid_argument("pendulum oracle: need grid >= 3 and actions >= 2");
    }
    for (std::size_t k = 0; k < options.actions; ++k) {
        actions_.push_back(-1.0 + 2.0 * static_cast<double>(k) /
                                      static_cast<double>(options.actions - 1));
    }
    const std::size_t g = grid_;
    const std::size_t states = g * g;
    const std::size_t na = actions_.size();

    // Transitions are time invariant: tabulate them once.
    std::vector<Lerp> next(states * na);
    std::vector<double> rewards(states * na);
    const double wmax = params_.max_speed;
    for (std::size_t i = 0; i < g; ++i) {
        for (std::size_t j = 0; j < g; ++j) {
            for (std::size_t k = 0; k < na; ++k) {
                double th = -std::numbers::pi + kTwoPi * static_cast<double>(i) / static_cast<double>(g);
                double om = -wmax + 2.0 * wmax * static_cast<double>(j) / static_cast<double>(g - 1);
                double r = 0.0;
                for (std::size_t rep = 0; rep < repeat_; ++rep) {
                    PendulumSwingup::integrate(params_, th, om, actions_[k]);
                    r += PendulumSwingup::reward(params_, th, actions_[k]);
                }
                const double u = (th + std::numbers::pi) / kTwoPi * static_cast<double>(g);
                const double uf = std::floor(u);
                const double v = std::clamp((om + wmax) / (2.0 * wmax) * static_cast<double>(g - 1),
                                            0.0, static_cast<double>(g - 1));
                const auto j0 = std::min(static_cast<std::size_t>(v), g - 2);
                const auto i0 = static_cast<std::size_t>(static_cast<long long>(uf) % static_cast<long long>(g));
                const std::size_t idx = (i * g + j) * na + k;
                next[idx] = {i0, (i0 + 1) % g, j0, j0 + 1, u - uf, v - static_cast<double>(j0)};
                rewards[idx] = r;
            }
        }
    }

    values_.assign(decisions_ + 1, std::vector<double>(states, 0.0));
    for (std::size_t t = decisions_; t-- > 0;) {
        const auto& nv = values_[t + 1];
        auto& cv = values_[t];
        for (std::size_t s = 0; s < states; ++s) {
            double best = -std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < na; ++k) {
                const auto& l = next[s * na + k];
                const double v = (1 - l.fi) * ((1 - l.fj) * nv[l.i0 * g + l.j0] + l.fj * nv[l.i0 * g + l.j1]) +
                                 l.fi * ((1 - l.fj) * nv[l.i1 * g + l.j0] + l.fj * nv[l.i1 * g + l.j1]);
                best = std::max(best, rewards[s * na + k] + v);
            }
            cv[s] = best;
        }
    }
}

double PendulumOracle::interpolate(const std::vector<double>& table, double theta,
                                   double omega) const {
    const std::size_t g = grid_;
    const double wmax = params_.max_speed;
    const double u = (std::remainder(theta, kTwoPi) + std::numbers::pi) / kTwoPi * static_cast<double>(g);
    const double uf = std::floor(u);
    const double fi = u - uf;
    const auto i0 = static_cast<std::size_t>(static_cast<long long>(uf) % static_cast<long long>(g));
    const std::size_t i1 = (i0 + 1) % g;
    const double v = std::clamp((omega + wmax) / (2.0 * wmax) * static_cast<double>(g - 1), 0.0,
                                static_cast<double>(g - 1));
    const auto j0 = std::min(static_cast<std::size_t>(v), g - 2);
    const double fj = v - static_cast<double>(j0);
    return (1 - fi) * ((1 - fj) * table[i0 * g + j0] + fj * table[i0 * g + j0 + 1]) +
           fi * ((1 - fj) * table[i1 * g + j0] + fj * table[i1 * g + j0 + 1]);
}

double PendulumOracle::table_value(double theta, double omega) const {
    return interpolate(values_.front(), theta, omega);
}

double PendulumOracle::best_action(std::size_t decision, double theta, double omega) const {
    const auto& nv = values_.at(std::min(decision + 1, decisions_));
    double best_a = 0.0;
    double best = -std::numeric_limits<double>::infinity();
    for (double a : actions_) {
        double th = theta;
        double om = omega;
        double r = 0.0;
        for (std::size_t rep = 0; rep < repeat_; ++rep) {
            PendulumSwingup::integrate(params_, th, om, a);
            r += PendulumSwingup::reward(params_, th, a);
        }
        const double q = r + interpolate(nv, th, om);
        if (q > best) {
            best = q;
            best_a = a;
        }
    }
    return best_a;
}

double PendulumOracle::episode_return(PendulumSwingup& env, std::uint64_t seed) const {
    env.reset(seed);
    double total = 0.0;
    std::size_t decision = 0;
    while (!env.done()) {
        const double a = best_action(decision++, env.theta(), env.omega());
        total += env.step(std::vector<double>{a}).reward;
    }
    return total;
}

std::array<double, 2> PointMassOracle::lqr_gain(const PointMassEasy::Params& p,
                                                double velocity_weight, double control_weight) {
    const double dt = p.dt;
    const double keep = 1.0 - dt * p.damping;
    // Semi-implicit Euler per axis: x' = A x + B u with x = (position, velocity).
    const double a00 = 1.0, a01 = dt * keep, a10 = 0.0, a11 = keep;
    const double b0 = dt * dt * p.force_scale, b1 = dt * p.force_scale;
    double p00 = 1.0, p01 = 0.0, p11 = velocity_weight;
    double k0 = 0.0, k1 = 0.0;
    for (int it = 0; it < 10000; ++it) {
        // P B
        const double pb0 = p00 * b0 + p01 * b1;
        const double pb1 = p01 * b0 + p11 * b1;
        const double s = control_weight + b0 * pb0 + b1 * pb1;
        // B^T P A
        const double bpa0 = pb0 * a00 + pb1 * a10;
        const double bpa1 = pb0 * a01 + pb1 * a11;
        k0 = bpa0 / s;
        k1 = bpa1 / s;
        // A^T P A
        const double pa00 = p00 * a00 + p01 * a10, pa01 = p00 * a01 + p01 * a11;
        const double pa10 = p01 * a00 + p11 * a10, pa11 = p01 * a01 + p11 * a11;
        const double apa00 = a00 * pa00 + a10 * pa10;
        const double apa01 = a00 * pa01 + a10 * pa11;
        const double apa11 = a01 * pa01 + a11 * pa11;
        const double n00 = 1.0 + apa00 - bpa0 * k0;
        const double n01 = apa01 - bpa0 * k1;
        const double n11 = velocity_weight + apa11 - bpa1 * k1;
        const double diff = std::fabs(n00 - p00) + std::fabs(n01 - p01) + std::fabs(n11 - p11);
        p00 = n00;
        p01 = n01;
        p11 = n11;
        if (diff < 1e-12 * (1.0 + std::fabs(p00))) {
            break;
        }
    }
    return {k0, k1};
}

PointMassOracle::PointMassOracle(const PointMassEasy& env,
                                 std::span<const std::uint64_t> calibration_seeds) {
    double best = -std::numeric_limits<double>::infinity();
    std::array<double, 2> best_gain{};
    PointMassEasy probe(env.params());
    for (double qv : {0.0, 0.01, 0.1, 1.0}) {
        for (int e = -6; e <= 1; ++e) {
            for (double mant : {1.0, 3.0}) {
                const double r = mant * std::pow(10.0, e);
                gain_ = lqr_gain(env.params(), qv, r);
                double total = 0.0;
                for (auto seed : calibration_seeds) {
                    total += episode_return(probe, seed);
                }
                if (total > best) {
                    best = total;
                    best_gain = gain_;
                }
            }
        }
    }
    gain_ = best_gain;
}

std::vector<double> PointMassOracle::action(std::span<const double> obs) const {
    return {std::clamp(-gain_[0] * obs[0] - gain_[1] * obs[2], -1.0, 1.0),
            std::clamp(-gain_[0] * obs[1] - gain_[1] * obs[3], -1.0, 1.0)};
}

double PointMassOracle::episode_return(PointMassEasy& env, std::uint64_t seed) const {
    return rollout_return(env, seed, [&](const std::vector<double>& obs) { return action(obs); });
}

double oracle_return(const std::string& env_name, const OracleOptions& options,
                     std::span<const std::uint64_t> reset_seeds) {
    if (reset_seeds.empty()) {
        throw std::invalid_argument("oracle_return: need at least one reset seed");
    }
    double total = 0.0;
    if (env_name == "pendulum_swingup") {
        PendulumSwingup env;
        PendulumOracle oracle(env, options);
        for (auto s : reset_seeds) {
            total += oracle.episode_return(env, s);
        }
    } else if (env_name == "pointmass_easy") {
        PointMassEasy env;
        PointMassOracle oracle(env, reset_seeds);
        for (auto s : reset_seeds) {
            total += oracle.episode_return(env, s);
        }
    } else {
        throw std::invalid_argument("oracle_return: unknown environment '" + env_name + "'");
    }
    return total / static_cast<double>(reset_seeds.size());
}

}  // namespace bmpc
