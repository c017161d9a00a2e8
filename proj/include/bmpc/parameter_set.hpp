#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "bmpc/autodiff.hpp"

namespace bmpc {

// Named learnable arrays in insertion order, each paired with its gradient.
class ParameterSet {
public:
    ad::Var add(std::string name, Tensor value);
    const ad::Var& get(const std::string& name) const;
    bool contains(const std::string& name) const;

    std::size_t size() const { return params_.size(); }
    std::size_t numel() const;
    const std::vector<ad::Var>& params() const { return params_; }
    std::vector<std::string> names() const;

    void zero_grad();
    double grad_norm() const;
    // Deep copy of the values; the copy has its own nodes and zero gradients.
    ParameterSet clone() const;
    // Copies values from `other`, which must have identical names and shapes.
    void assign(const ParameterSet& other);
    // Restricts to the named subset, sharing nodes with this set.
    ParameterSet subset(const std::string& prefix) const;

    // Versioned binary framing: magic, version, count, then per parameter
    // (name length, name, rank, extents, f64 payload); CRC-32 trailer.
    void write(std::ostream& out) const;
    static ParameterSet read(std::istream& in);

private:
    std::vector<ad::Var> params_;
};

// Adam with global-norm gradient clipping applied inside step().
class AdamOptimizer {
public:
    struct Options {
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
        double max_grad_norm = 20.0;
    };

    explicit AdamOptimizer(const ParameterSet& params);
    AdamOptimizer(const ParameterSet& params, Options options);

    // Returns the pre-clip global gradient norm. Gradients are left untouched.
    double step(double lr);
    std::int64_t step_count() const { return steps_; }

    // Moments as "adam.m/<name>" and "adam.v/<name>" plus "adam.steps".
    ParameterSet state() const;
    // Restores a state() snapshot taken over identically named parameters.
    void load_state(const ParameterSet& state);

private:
    struct Moments {
        std::vector<double> first;
        std::vector<double> second;
    };
    std::vector<ad::Var> params_;
    std::vector<Moments> moments_;
    Options options_;
    std::int64_t steps_ = 0;
};

// Exponential moving average of `online` into `target` over matching names:
// target <- (1 - rate) * target + rate * online.
void ema_update(const ParameterSet& online, const ParameterSet& target, double rate);

}  // namespace bmpc
