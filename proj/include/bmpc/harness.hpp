#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bmpc/envs.hpp"
#include "bmpc/learner.hpp"
#include "bmpc/planner.hpp"
#include "bmpc/replay.hpp"
#include "bmpc/world_model.hpp"

namespace bmpc {

struct RunConfig {
    std::string env = "pendulum_swingup";
    std::size_t total_env_steps = 30000;
    // Environment steps acted with uniform random actions before any update.
    std::size_t seed_steps = 1000;
    // Gradient updates per agent step collected.
    double utd = 1.0;
    // Environment steps between evaluations; 0 evaluates only at the end.
    std::size_t eval_interval = 5000;
    std::size_t eval_episodes = 10;
    std::uint64_t eval_seed = 1000003;
    std::size_t buffer_capacity = 1000000;
    // Run the reanalyze worker on its own thread with parameter snapshots.
    bool concurrent = false;
    std::uint64_t seed = 1;
    std::string out = "runs/default";

    ModelConfig model;
    PlannerConfig planner;
    LearnerConfig learner;
    ReanalyzeConfig reanalyze;

    void validate() const;
    // Flat key=value view; sub-configs use "model.", "planner.", "learner."
    // and "reanalyze." prefixes.
    std::map<std::string, std::string> to_kv() const;
    void set(const std::string& key, const std::string& value);
    // "key=value" form used by --set.
    void apply_override(const std::string& assignment);
    static std::vector<std::string> keys();
};

// Reads a flat key=value file ('#' comments, blank lines ignored) onto `base`.
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {});
std::string format_run_config(const RunConfig& config);

// Appends one JSON object per line and flushes after every event.
class MetricsWriter {
public:
    explicit MetricsWriter(const std::filesystem::path& path);
    void emit(const std::string& kind, std::size_t step, nlohmann::json payload = nlohmann::json::object());
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
    std::ofstream out_;
};

enum class EvalPolicy { mpc, network, both };
EvalPolicy parse_eval_policy(const std::string& name);

struct ReturnStats {
    std::vector<double> returns;
    double mean = 0.0;
    double stdev = 0.0;
};
ReturnStats summarize_returns(std::vector<double> returns);

struct DeltaQSummary {
    std::size_t count = 0;
    double mean = 0.0;
    double median = 0.0;
    double p5 = 0.0;
    double p95 = 0.0;
    double positive_fraction = 0.0;
};
DeltaQSummary summarize_delta_q(const std::vector<double>& samples);

struct EvalReport {
    std::size_t step = 0;
    std::size_t episodes = 0;
    bool has_mpc = false;
    bool has_network = false;
    ReturnStats mpc;
    ReturnStats network;
    // One entry per planner call in mpc mode.
    std::vector<double> delta_q;
    DeltaQSummary delta_q_summary;
    // mean(mpc) - mean(network) when both were run.
    double gap = 0.0;
    std::uint64_t planner_calls_network = 0;

    nlohmann::json to_json() const;
};

struct EvalOptions {
    std::size_t episodes = 10;
    std::uint64_t seed = 1000003;
    EvalPolicy policy = EvalPolicy::both;
    PlannerConfig planner;
};

// Deterministic acting for both policies; reset seeds are seed + episode index.
EvalReport evaluate(const WorldModel& model, const std::string& env_name, const EvalOptions& options);
EvalReport evaluate(const std::filesystem::path& checkpoint, const std::string& env_name,
                    const EvalOptions& options);

struct TrainSummary {
    std::size_t env_steps = 0;
    std::int64_t updates = 0;
    std::size_t sampled_segments = 0;
    std::size_t reanalyzed_segments = 0;
    std::size_t reanalyze_ticks = 0;
    std::size_t reanalyze_failures = 0;
    std::uint64_t collection_plans = 0;
    std::vector<EvalReport> evals;
    std::filesystem::path checkpoint;
    std::filesystem::path learner_state;
    std::filesystem::path metrics;

    double reanalyze_ratio() const {
        return sampled_segments == 0 ? 0.0
                                     : static_cast<double>(reanalyzed_segments) /
                                           static_cast<double>(sampled_segments);
    }
};

// Collect with the planner, update, reanalyze, evaluate; writes metrics.jsonl,
// config.txt, checkpoint.bin and learner_state.bin under config.out.
TrainSummary train(const RunConfig& config);

// Prints mean / median / p5 / p95 of the mpc-mode value gain per eval event.
std::string delta_q_table(const std::filesystem::path& metrics);

}  // namespace bmpc
