#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "bmpc/autodiff.hpp"
#include "bmpc/gaussian.hpp"
#include "bmpc/latent_model.hpp"
#include "bmpc/parameter_set.hpp"
#include "bmpc/two_hot.hpp"

namespace bmpc {

struct ModelConfig {
    std::size_t obs_dim = 0;
    std::size_t action_dim = 0;
    std::size_t latent_dim = 64;
    std::size_t hidden_dim = 128;
    std::size_t hidden_layers = 2;
    // Latent is normalized with a softmax over groups of this many entries.
    std::size_t simnorm_group = 8;
    std::size_t bins = 101;
    double v_min = -10.0;
    double v_max = 10.0;
    double log_std_min = -3.0;
    double log_std_max = 1.0;
    std::size_t num_values = 2;

    void validate() const;
    std::map<std::string, std::string> to_kv() const;
    static ModelConfig from_kv(const std::map<std::string, std::string>& kv);
};

struct PolicyHead {
    ad::Var mean;     // [N, m], in (-1, 1)
    ad::Var log_std;  // [N, m], in [log_std_min, log_std_max]
};

// Encoder h, latent dynamics d, reward head R, an ensemble of value heads V
// (with EMA targets), and the Gaussian policy head p. Every head is its own
// MLP on the latent, so the policy shares no parameters with the value heads.
class WorldModel final : public LatentModel {
public:
    WorldModel(ModelConfig config, std::uint64_t seed);

    const ModelConfig& config() const { return config_; }
    const TwoHot& two_hot() const { return two_hot_; }

    ParameterSet& params() { return params_; }
    const ParameterSet& params() const { return params_; }
    ParameterSet& target_values() { return target_values_; }
    const ParameterSet& target_values() const { return target_values_; }
    ParameterSet policy_params() const { return params_.subset("policy."); }
    ParameterSet value_params() const { return params_.subset("value."); }

    // Graph-building forward passes. Observations [N, n], latents [N, L], actions [N, m].
    ad::Var encode(const ad::Var& obs) const;
    ad::Var dynamics(const ad::Var& z, const ad::Var& a) const;
    ad::Var reward_logits(const ad::Var& z, const ad::Var& a) const;
    ad::Var value_logits(const ad::Var& z, std::size_t head, bool target = false) const;
    PolicyHead policy(const ad::Var& z) const;

    // Gradient-free conveniences.
    Tensor encode(const Tensor& obs) const;
    Tensor encode(const std::vector<double>& obs) const;
    Tensor dynamics(const Tensor& z, const Tensor& a) const;
    std::vector<double> reward(const Tensor& z, const Tensor& a) const;
    // Minimum over the ensemble of each head's decoded expectation.
    std::vector<double> value_scalar(const Tensor& z, bool target = false) const;
    std::vector<DiagGaussian> policy_distributions(const Tensor& z) const;

    // LatentModel
    std::size_t latent_dim() const override { return config_.latent_dim; }
    std::size_t action_dim() const override { return config_.action_dim; }
    Transition transition(const Tensor& z, const Tensor& a) const override;
    std::vector<double> value(const Tensor& z) const override { return value_scalar(z); }
    Prior prior(const Tensor& z) const override;

    // Independent deep copy (parameters and targets).
    WorldModel clone() const;
    // Copies values from another model of identical configuration.
    void assign(const WorldModel& other);

    // Checkpoint: key-value config header followed by the online and target
    // parameter sets in the versioned binary framing.
    void save(const std::filesystem::path& path) const;
    static WorldModel load(const std::filesystem::path& path);

private:
    struct Mlp {
        std::string prefix;
        std::vector<std::size_t> dims;
        bool simnorm_output = false;
    };

    WorldModel(ModelConfig config, ParameterSet params, ParameterSet targets);
    void build_layout();
    void init_params(std::uint64_t seed);
    ad::Var run_mlp(const Mlp& mlp, const ad::Var& x, const ParameterSet& params,
                    const std::string& prefix) const;
    ad::Var simnorm(const ad::Var& x) const;
    void check_actions(const Tensor& a) const;

    ModelConfig config_;
    TwoHot two_hot_;
    ParameterSet params_;
    ParameterSet target_values_;
    Mlp encoder_;
    Mlp dynamics_;
    Mlp reward_;
    std::vector<Mlp> values_;
    Mlp policy_;
};

}  // namespace bmpc
