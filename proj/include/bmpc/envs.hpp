#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace bmpc {

struct EnvSpec {
    std::string name;
    std::size_t obs_dim = 0;
    std::size_t action_dim = 0;
    // Episode length in environment (physics) steps; each agent step consumes
    // `action_repeat` of them.
    std::size_t episode_length = 0;
    std::size_t action_repeat = 1;
    // Bounds on the reward of a single environment step.
    double reward_min = 0.0;
    double reward_max = 0.0;

    std::size_t agent_steps() const { return episode_length / action_repeat; }
};

struct StepResult {
    std::vector<double> observation;
    double reward = 0.0;
    bool done = false;
};

// Fixed-horizon continuous-control task with actions in [-1, 1]^m.
class Env {
public:
    virtual ~Env() = default;

    virtual const EnvSpec& spec() const = 0;
    virtual std::vector<double> reset(std::uint64_t seed) = 0;
    // One agent step: `action_repeat` physics steps with the clamped action,
    // rewards summed.
    StepResult step(std::span<const double> action);
    virtual std::vector<double> observation() const = 0;
    virtual std::unique_ptr<Env> clone() const = 0;

    std::size_t step_count() const { return steps_; }
    bool done() const { return steps_ >= spec().episode_length; }

protected:
    virtual double physics_step(std::span<const double> action) = 0;
    void start_episode() {
        steps_ = 0;
        active_ = true;
    }

private:
    std::size_t steps_ = 0;
    bool active_ = false;
};

// Torque-limited pendulum. theta = 0 is upright, theta = pi hangs down.
// theta'' = (g/l) sin(theta) + torque_scale * a, semi-implicit Euler.
class PendulumSwingup final : public Env {
public:
    struct Params {
        double g_over_l = 10.0;
        double torque_scale = 5.0;
        double dt = 0.05;
        std::size_t substeps = 10;
        double max_speed = 10.0;
        double reset_noise = 0.1;
        double action_cost = 0.01;
    };

    PendulumSwingup();
    explicit PendulumSwingup(Params params);

    const EnvSpec& spec() const override { return spec_; }
    std::vector<double> reset(std::uint64_t seed) override;
    std::vector<double> observation() const override;
    std::unique_ptr<Env> clone() const override { return std::make_unique<PendulumSwingup>(*this); }

    const Params& params() const { return params_; }
    double theta() const { return theta_; }
    double omega() const { return omega_; }
    void set_state(double theta, double omega);
    // g/l (1 + cos theta) + omega^2 / 2; zero at the hanging rest state.
    double energy() const;

    // Deterministic physics shared with the dynamic-programming oracle.
    static void integrate(const Params& p, double& theta, double& omega, double action);
    static double reward(const Params& p, double theta, double action);

protected:
    double physics_step(std::span<const double> action) override;

private:
    Params params_;
    EnvSpec spec_;
    double theta_ = 0.0;
    double omega_ = 0.0;
};

// Damped 2-D double integrator that must reach the origin.
class PointMassEasy final : public Env {
public:
    struct Params {
        double force_scale = 2.0;
        double damping = 0.5;
        double dt = 0.05;
        double arena = 1.5;
        double reset_range = 1.0;
    };

    PointMassEasy();
    explicit PointMassEasy(Params params);

    const EnvSpec& spec() const override { return spec_; }
    std::vector<double> reset(std::uint64_t seed) override;
    std::vector<double> observation() const override;
    std::unique_ptr<Env> clone() const override { return std::make_unique<PointMassEasy>(*this); }

    const Params& params() const { return params_; }
    void set_state(std::span<const double> position, std::span<const double> velocity);

protected:
    double physics_step(std::span<const double> action) override;

private:
    Params params_;
    EnvSpec spec_;
    double pos_[2] = {0.0, 0.0};
    double vel_[2] = {0.0, 0.0};
};

// Builds `pendulum_swingup` or `pointmass_easy`.
std::unique_ptr<Env> make_env(const std::string& name);
std::vector<std::string> env_names();

// Near-optimal undiscounted episode return, averaged over the given reset seeds.
// Pendulum: finite-horizon value iteration on a (grid x grid) state lattice
// with `actions` discrete torques, executed greedily on the true dynamics.
// Point mass: best saturated linear-quadratic regulator over a family of
// cost weightings.
struct OracleOptions {
    std::size_t grid = 201;
    std::size_t actions = 21;
};
double oracle_return(const std::string& env_name, const OracleOptions& options,
                     std::span<const std::uint64_t> reset_seeds);

// Episode return of a policy given as a function of the observation.
template <typename Policy>
double rollout_return(Env& env, std::uint64_t seed, Policy&& policy) {
    auto obs = env.reset(seed);
    double total = 0.0;
    while (!env.done()) {
        const auto a = policy(obs);
        auto r = env.step(a);
        total += r.reward;
        obs = std::move(r.observation);
    }
    return total;
}

}  // namespace bmpc
