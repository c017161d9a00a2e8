#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "bmpc/autodiff.hpp"
#include "bmpc/parameter_set.hpp"
#include "bmpc/replay.hpp"
#include "bmpc/world_model.hpp"

namespace bmpc {

struct LearnerConfig {
    std::size_t batch_size = 256;
    // Segments hold horizon + 1 transitions.
    std::size_t horizon = 3;
    double rho = 0.5;
    std::size_t td_steps = 1;
    double entropy_coef = 1e-4;
    double kl_scale_decay = 0.99;
    double target_rate = 0.01;
    double lr = 3e-4;
    double discount = 0.99;
    double max_grad_norm = 20.0;
    // When false the policy head is never trained (control runs).
    bool train_policy = true;

    void validate() const;
};

// Time-major tensors of a sampled segment batch; index t runs over 0..horizon.
struct TrainingBatch {
    std::size_t size = 0;
    std::size_t horizon = 0;
    std::vector<Tensor> obs;       // [B, n]
    std::vector<Tensor> action;    // [B, m]
    std::vector<Tensor> next_obs;  // [B, n]
    std::vector<std::vector<double>> reward;
    std::vector<Tensor> pi_mean;     // [B, m]
    std::vector<Tensor> pi_log_std;  // [B, m]
    std::vector<SegmentRef> refs;

    static TrainingBatch from_segments(const SegmentBatch& segments);
};

// Running scale of the imitation KL: an EMA of the 95th - 5th percentile spread.
struct KLScale {
    double value = 1.0;
    bool initialized = false;
};

// Linear-interpolation percentile, q in [0, 100].
double percentile(std::vector<double> values, double q);
KLScale update_kl_scale(KLScale scale, const std::vector<double>& kl_values, double decay);

// Latent rollout through the dynamics: z_0 = h(s_0), z_{t+1} = d(z_t, a_t).
// Returns horizon + 2 latents, all attached to the graph.
std::vector<ad::Var> latent_rollout(const WorldModel& model, const TrainingBatch& batch);

// Squared-norm consistency ||z_pred - z_target||^2 per row, averaged over rows.
ad::Var consistency_loss(const ad::Var& z_pred, const Tensor& z_target);

// sum_t rho^t (consistency_t + reward CE_t), averaged over the batch.
ad::Var model_loss(const WorldModel& model, const TrainingBatch& batch,
                   const std::vector<ad::Var>& zs, const LearnerConfig& config);

// N-step targets from fresh encodings of the stored states, following the
// policy mean and bootstrapping from the minimum over target value heads.
std::vector<std::vector<double>> td_targets(const WorldModel& model, const TrainingBatch& batch,
                                            const LearnerConfig& config);

// sum_t rho^t sum_heads CE(V_i(z_t), two-hot(target_t)), averaged over the batch.
ad::Var value_loss(const WorldModel& model, const TrainingBatch& batch,
                   const std::vector<ad::Var>& zs, const LearnerConfig& config);

struct PolicyTerms {
    std::vector<ad::Var> kl;       // [B] per t: KL(stored expert || network policy)
    std::vector<ad::Var> entropy;  // [B] per t
};

// Policy terms on detached latents; only the policy head receives gradients.
PolicyTerms policy_terms(const WorldModel& model, const std::vector<ad::Var>& zs,
                         const std::vector<Tensor>& expert_mean,
                         const std::vector<Tensor>& expert_log_std);
// sum_t rho^t mean_b( KL / max(1, S) - beta * H ).
ad::Var combine_policy_loss(const PolicyTerms& terms, double scale, double rho, double entropy_coef);
std::vector<double> kl_values(const PolicyTerms& terms);

// Imitation loss against the targets stored in the batch.
ad::Var policy_loss(const WorldModel& model, const TrainingBatch& batch,
                    const std::vector<ad::Var>& zs, double scale, const LearnerConfig& config);

// Same loss with targets obtained by re-planning every state now, using the
// reanalyze seed of each record.
ad::Var exact_policy_loss(const WorldModel& model, const TrainingBatch& batch,
                          const std::vector<ad::Var>& zs, const Reanalyzer& reanalyzer,
                          std::uint64_t seed, double scale, const LearnerConfig& config);

struct UpdateMetrics {
    std::int64_t step = 0;
    double model_loss = 0.0;
    double value_loss = 0.0;
    double policy_loss = 0.0;
    double kl_mean = 0.0;
    double entropy_mean = 0.0;
    double kl_scale = 1.0;
    double grad_norm = 0.0;
};

// One gradient step on model, value and policy, then the target EMA.
class Learner {
public:
    Learner(WorldModel& model, LearnerConfig config);

    UpdateMetrics update(const TrainingBatch& batch);

    const LearnerConfig& config() const { return config_; }
    const KLScale& kl_scale() const { return kl_scale_; }
    std::int64_t update_step() const { return step_; }

    // Optimiser moments, KL scale and step count, so training can resume
    // from a checkpoint with the same update dynamics.
    void save_state(const std::filesystem::path& path) const;
    void load_state(const std::filesystem::path& path);

private:
    WorldModel& model_;
    LearnerConfig config_;
    AdamOptimizer optimizer_;
    ParameterSet value_online_;
    KLScale kl_scale_;
    std::int64_t step_ = 0;
};

}  // namespace bmpc
