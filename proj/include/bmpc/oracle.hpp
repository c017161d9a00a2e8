#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "bmpc/envs.hpp"

namespace bmpc {

// Finite-horizon value iteration for the pendulum on a periodic-angle x
// clamped-velocity lattice with bilinear interpolation. One table per
// remaining decision count.
class PendulumOracle {
public:
    PendulumOracle(const PendulumSwingup& env, const OracleOptions& options);

    // Greedy one-step lookahead on the true dynamics against the tables.
    double best_action(std::size_t decision, double theta, double omega) const;
    double episode_return(PendulumSwingup& env, std::uint64_t seed) const;
    // Tabulated optimal return-to-go at the start of the episode.
    double table_value(double theta, double omega) const;

private:
    double interpolate(const std::vector<double>& table, double theta, double omega) const;

    PendulumSwingup::Params params_;
    std::size_t repeat_;
    std::size_t decisions_;
    std::size_t grid_;
    std::vector<double> actions_;
    // values_[t] holds the optimal return over decisions t..end.
    std::vector<std::vector<double>> values_;
};

// Saturated discrete LQR per axis; the gain is chosen from a family of cost
// weightings by the mean return it achieves on the calibration seeds.
class PointMassOracle {
public:
    PointMassOracle(const PointMassEasy& env, std::span<const std::uint64_t> calibration_seeds);

    std::array<double, 2> gain() const { return gain_; }
    std::vector<double> action(std::span<const double> observation) const;
    double episode_return(PointMassEasy& env, std::uint64_t seed) const;

    static std::array<double, 2> lqr_gain(const PointMassEasy::Params& p, double velocity_weight,
                                          double control_weight);

private:
    std::array<double, 2> gain_{};
};

}  // namespace bmpc
