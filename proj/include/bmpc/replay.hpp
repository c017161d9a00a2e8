#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <shared_mutex>
#include <thread>
#include <vector>

#include "bmpc/gaussian.hpp"
#include "bmpc/planner.hpp"
#include "bmpc/world_model.hpp"

namespace bmpc {

struct TransitionRecord {
    std::vector<double> obs;
    std::vector<double> action;
    double reward = 0.0;
    std::vector<double> next_obs;
    // Expert action distribution; written at collection, refreshed by reanalyze.
    DiagGaussian pi;
    std::int64_t pi_version = 0;
    std::uint64_t episode = 0;
    std::size_t step = 0;
};

struct SegmentRef {
    std::uint64_t episode = 0;
    std::size_t start = 0;
    bool operator==(const SegmentRef&) const = default;
};

struct SegmentBatch {
    std::size_t horizon = 0;
    std::vector<SegmentRef> refs;
    // rows[i] holds horizon + 1 consecutive records of one episode.
    std::vector<std::vector<TransitionRecord>> rows;
};

// Episode-structured FIFO buffer. Sampling and pi updates may run on
// different threads; each pi update is atomic with respect to sampling.
class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity_transitions);

    void push_episode(std::vector<TransitionRecord> records);
    SegmentBatch sample_segments(std::size_t count, std::size_t horizon, std::mt19937_64& rng) const;
    SegmentBatch gather(const std::vector<SegmentRef>& refs, std::size_t horizon) const;
    // Returns false when the record has been evicted.
    bool update_pi(std::uint64_t episode, std::size_t step, const DiagGaussian& pi,
                   std::int64_t version);

    std::size_t size() const;
    std::size_t episode_count() const;
    std::size_t capacity() const { return capacity_; }
    std::vector<std::uint64_t> episode_ids() const;
    std::size_t valid_starts(std::size_t horizon) const;
    // Counts of (current_step - pi_version) over all records in the bins
    // [0, e_0), [e_0, e_1), ..., [e_last, inf).
    std::vector<std::size_t> freshness_histogram(std::int64_t current_step,
                                                 const std::vector<std::int64_t>& edges) const;

private:
    struct Episode {
        std::uint64_t id;
        std::vector<TransitionRecord> records;
    };
    const Episode* find(std::uint64_t id) const;

    std::size_t capacity_;
    std::size_t size_ = 0;
    std::deque<Episode> episodes_;
    mutable std::shared_mutex mutex_;
};

struct ReanalyzeConfig {
    // Reanalyze every `interval` updates; 0 disables it.
    std::size_t interval = 10;
    // Segments re-planned per reanalyze.
    std::size_t batch = 20;
    double log_std_min = -2.0;
    double log_std_max = 1.0;
    std::size_t horizon = 3;

    void validate() const;
};

// Affine map of a policy log-std from [from_min, from_max] onto [to_min, to_max].
// With the default bounds this is log_std * 0.75 + 0.25.
double remap_log_std(double log_std, double from_min = -3.0, double from_max = 1.0,
                     double to_min = -2.0, double to_max = 1.0);

// Prior with widened log-std bounds, used when re-planning.
class WidenedPrior final : public LatentModel {
public:
    WidenedPrior(const WorldModel& base, double log_std_min, double log_std_max)
        : base_(base), min_(log_std_min), max_(log_std_max) {}

    std::size_t latent_dim() const override { return base_.latent_dim(); }
    std::size_t action_dim() const override { return base_.action_dim(); }
    Transition transition(const Tensor& z, const Tensor& a) const override {
        return base_.transition(z, a);
    }
    std::vector<double> value(const Tensor& z) const override { return base_.value(z); }
    Prior prior(const Tensor& z) const override;

private:
    const WorldModel& base_;
    double min_;
    double max_;
};

struct ReanalyzeStats {
    std::size_t ticks = 0;
    std::size_t segments = 0;
    std::size_t states = 0;
    std::size_t failures = 0;
    std::size_t evicted = 0;
};

class Reanalyzer {
public:
    Reanalyzer(ReanalyzeConfig config, PlannerConfig planner);

    const ReanalyzeConfig& config() const { return config_; }
    const Planner& planner() const { return planner_; }
    bool due(std::int64_t update_step) const;

    // Fresh expert target for one observation: plan from its encoding with the
    // widened prior and no warm start, return the first-step distribution.
    DiagGaussian replan(const WorldModel& model, const std::vector<double>& obs,
                        std::uint64_t seed) const;
    // Keyed on the record, so a state shared by overlapping segments gets one target.
    static std::uint64_t plan_seed(std::uint64_t tick_seed, std::uint64_t episode, std::size_t step);

    // Re-plans every state of the first `batch` segments and writes the targets back.
    ReanalyzeStats tick(ReplayBuffer& buffer, const WorldModel& model,
                        const std::vector<SegmentRef>& refs, std::size_t horizon,
                        std::int64_t update_step, std::uint64_t seed) const;

private:
    ReanalyzeConfig config_;
    Planner planner_;
};

// Background reanalyze: the trainer submits jobs with a parameter snapshot and
// continues; the worker re-plans and writes targets into the shared buffer.
class ReanalyzeWorker {
public:
    ReanalyzeWorker(const Reanalyzer& reanalyzer, ReplayBuffer& buffer);
    ~ReanalyzeWorker();
    ReanalyzeWorker(const ReanalyzeWorker&) = delete;
    ReanalyzeWorker& operator=(const ReanalyzeWorker&) = delete;

    void submit(std::shared_ptr<const WorldModel> snapshot, std::vector<SegmentRef> refs,
                std::size_t horizon, std::int64_t update_step, std::uint64_t seed);
    // Blocks until every submitted job has been processed.
    void drain();
    ReanalyzeStats stats() const;

private:
    struct Job {
        std::shared_ptr<const WorldModel> snapshot;
        std::vector<SegmentRef> refs;
        std::size_t horizon;
        std::int64_t update_step;
        std::uint64_t seed;
    };
    void run();

    const Reanalyzer& reanalyzer_;
    ReplayBuffer& buffer_;
    mutable std::mutex mutex_;
    std::condition_variable wake_;
    std::condition_variable idle_;
    std::deque<Job> jobs_;
    bool busy_ = false;
    bool stop_ = false;
    ReanalyzeStats stats_;
    std::thread thread_;
};

}  // namespace bmpc
