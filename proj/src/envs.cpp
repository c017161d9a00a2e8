#include "bmpc/envs.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace bmpc {

StepResult Env::step(std::span<const double> action) {
    if (!active_ || done()) {
        throw std::logic_error(spec().name + ": step called on a finished or unreset episode");
    }
    if (action.size() != spec().action_dim) {
        throw std::invalid_argument(spec().name + ": action has " + std::to_string(action.size()) +
                                    " components, expected " + std::to_string(spec().action_dim));
    }
    std::vector<double> clamped(action.begin(), action.end());
    for (auto& a : clamped) {
        if (std::isnan(a)) {
            throw std::invalid_argument(spec().name + ": NaN action");
        }
        a = std::clamp(a, -1.0, 1.0);
    }
    StepResult out;
    for (std::size_t i = 0; i < spec().action_repeat && !done(); ++i) {
        out.reward += physics_step(clamped);
        ++steps_;
    }
    out.observation = observation();
    out.done = done();
    if (out.done) {
        active_ = false;
    }
    return out;
}

PendulumSwingup::PendulumSwingup() : PendulumSwingup(Params{}) {}

PendulumSwingup::PendulumSwingup(Params params)
    : params_(params),
      spec_{"pendulum_swingup", 3, 1, 200, 2, -params.action_cost, 1.0} {}

std::vector<double> PendulumSwingup::reset(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-params_.reset_noise, params_.reset_noise);
    theta_ = std::remainder(std::numbers::pi + u(rng), 2.0 * std::numbers::pi);
    omega_ = u(rng);
    start_episode();
    return observation();
}

std::vector<double> PendulumSwingup::observation() const {
    return {std::cos(theta_), std::sin(theta_), omega_};
}

void PendulumSwingup::set_state(double theta, double omega) {
    theta_ = theta;
    omega_ = omega;
    start_episode();
}

double PendulumSwingup::energy() const {
    return params_.g_over_l * (1.0 + std::cos(theta_)) + 0.5 * omega_ * omega_;
}

void PendulumSwingup::integrate(const Params& p, double& theta, double& omega, double action) {
    const double h = p.dt / static_cast<double>(p.substeps);
    for (std::size_t i = 0; i < p.substeps; ++i) {
        omega += h * (p.g_over_l * std::sin(theta) + p.torque_scale * action);
        omega = std::clamp(omega, -p.max_speed, p.max_speed);
        theta += h * omega;
    }
    theta = std::remainder(theta, 2.0 * std::numbers::pi);
}

double PendulumSwingup::reward(const Params& p, double theta, double action) {
    return 0.5 * (1.0 + std::cos(theta)) - p.action_cost * action * action;
}

double PendulumSwingup::physics_step(std::span<const double> action) {
    integrate(params_, theta_, omega_, action[0]);
    return reward(params_, theta_, action[0]);
}

PointMassEasy::PointMassEasy() : PointMassEasy(Params{}) {}

PointMassEasy::PointMassEasy(Params params)
    : params_(params), spec_{"pointmass_easy", 4, 2, 100, 1, 0.0, 1.0} {}

std::vector<double> PointMassEasy::reset(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-params_.reset_range, params_.reset_range);
    pos_[0] = u(rng);
    pos_[1] = u(rng);
    vel_[0] = 0.0;
    vel_[1] = 0.0;
    start_episode();
    return observation();
}

std::vector<double> PointMassEasy::observation() const {
    return {pos_[0], pos_[1], vel_[0], vel_[1]};
}

void PointMassEasy::set_state(std::span<const double> position, std::span<const double> velocity) {
    for (int i = 0; i < 2; ++i) {
        pos_[i] = position[i];
        vel_[i] = velocity[i];
    }
    start_episode();
}

double PointMassEasy::physics_step(std::span<const double> action) {
    const auto& p = params_;
    for (int i = 0; i < 2; ++i) {
        vel_[i] += p.dt * (p.force_scale * action[i] - p.damping * vel_[i]);
        pos_[i] += p.dt * vel_[i];
        if (std::fabs(pos_[i]) > p.arena) {
            pos_[i] = std::copysign(p.arena, pos_[i]);
            vel_[i] = 0.0;
        }
    }
    return std::exp(-std::hypot(pos_[0], pos_[1]));
}

std::unique_ptr<Env> make_env(const std::string& name) {
    if (name == "pendulum_swingup") {
        return std::make_unique<PendulumSwingup>();
    }
    if (name == "pointmass_easy") {
        return std::make_unique<PointMassEasy>();
    }
    throw std::invalid_argument("unknown environment '" + name +
                                "' (expected pendulum_swingup or pointmass_easy)");
}

std::vector<std::string> env_names() { return {"pendulum_swingup", "pointmass_easy"}; }

}  // namespace bmpc
