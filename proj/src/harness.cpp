#include "bmpc/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>
#include <iomanip>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>

namespace bmpc {
namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

double to_double(const std::string& key, const std::string& v) {
    if (v == "inf") {
        return std::numeric_limits<double>::infinity();
    }
    std::size_t used = 0;
    double out = 0.0;
    try {
        out = std::stod(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != v.size() || v.empty()) {
        throw std::invalid_argument("config: '" + key + "' expects a number, got '" + v + "'");
    }
    return out;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto* end = v.data() + v.size();
    const auto [ptr, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || ptr != end || v.empty()) {
        throw std::invalid_argument("config: '" + key + "' expects a non-negative integer, got '" + v + "'");
    }
    return out;
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") {
        return true;
    }
    if (v == "false" || v == "0" || v == "no") {
        return false;
    }
    throw std::invalid_argument("config: '" + key + "' expects true or false, got '" + v + "'");
}

struct Field {
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&, const std::string&)> set;
};

template <typename T>
Field size_field(T RunConfig::*member) {
    return {[member](const RunConfig& c) { return std::to_string(c.*member); },
            [member](RunConfig& c, const std::string& k, const std::string& v) {
                c.*member = static_cast<T>(to_uint(k, v));
            }};
}

template <typename Sub, typename T>
Field sub_field(Sub RunConfig::*sub, T Sub::*member) {
    return {[sub, member](const RunConfig& c) {
                if constexpr (std::is_same_v<T, double>) {
                    return fmt(c.*sub.*member);
                } else if constexpr (std::is_same_v<T, bool>) {
                    return std::string((c.*sub).*member ? "true" : "false");
                } else {
                    return std::to_string((c.*sub).*member);
                }
            },
            [sub, member](RunConfig& c, const std::string& k, const std::string& v) {
                if constexpr (std::is_same_v<T, double>) {
                    (c.*sub).*member = to_double(k, v);
                } else if constexpr (std::is_same_v<T, bool>) {
                    (c.*sub).*member = to_bool(k, v);
                } else {
                    (c.*sub).*member = static_cast<T>(to_uint(k, v));
                }
            }};
}

const std::map<std::string, Field>& fields() {
    static const std::map<std::string, Field> table = [] {
        std::map<std::string, Field> f;
        f["env"] = {[](const RunConfig& c) { return c.env; },
                    [](RunConfig& c, const std::string&, const std::string& v) { c.env = v; }};
        f["out"] = {[](const RunConfig& c) { return c.out; },
                    [](RunConfig& c, const std::string&, const std::string& v) { c.out = v; }};
        f["total_env_steps"] = size_field(&RunConfig::total_env_steps);
        f["seed_steps"] = size_field(&RunConfig::seed_steps);
        f["utd"] = {[](const RunConfig& c) { return fmt(c.utd); },
                    [](RunConfig& c, const std::string& k, const std::string& v) { c.utd = to_double(k, v); }};
        f["eval_interval"] = size_field(&RunConfig::eval_interval);
        f["eval_episodes"] = size_field(&RunConfig::eval_episodes);
        f["eval_seed"] = size_field(&RunConfig::eval_seed);
        f["buffer_capacity"] = size_field(&RunConfig::buffer_capacity);
        f["seed"] = size_field(&RunConfig::seed);
        f["concurrent"] = {[](const RunConfig& c) { return std::string(c.concurrent ? "true" : "false"); },
                           [](RunConfig& c, const std::string& k, const std::string& v) {
                               c.concurrent = to_bool(k, v);
                           }};

        f["model.latent_dim"] = sub_field(&RunConfig::model, &ModelConfig::latent_dim);
        f["model.hidden_dim"] = sub_field(&RunConfig::model, &ModelConfig::hidden_dim);
        f["model.hidden_layers"] = sub_field(&RunConfig::model, &ModelConfig::hidden_layers);
        f["model.simnorm_group"] = sub_field(&RunConfig::model, &ModelConfig::simnorm_group);
        f["model.bins"] = sub_field(&RunConfig::model, &ModelConfig::bins);
        f["model.v_min"] = sub_field(&RunConfig::model, &ModelConfig::v_min);
        f["model.v_max"] = sub_field(&RunConfig::model, &ModelConfig::v_max);
        f["model.log_std_min"] = sub_field(&RunConfig::model, &ModelConfig::log_std_min);
        f["model.log_std_max"] = sub_field(&RunConfig::model, &ModelConfig::log_std_max);
        f["model.num_values"] = sub_field(&RunConfig::model, &ModelConfig::num_values);

        f["planner.horizon"] = sub_field(&RunConfig::planner, &PlannerConfig::horizon);
        f["planner.iterations"] = sub_field(&RunConfig::planner, &PlannerConfig::iterations);
        f["planner.samples"] = sub_field(&RunConfig::planner, &PlannerConfig::samples);
        f["planner.policy_samples"] = sub_field(&RunConfig::planner, &PlannerConfig::policy_samples);
        f["planner.elites"] = sub_field(&RunConfig::planner, &PlannerConfig::elites);
        f["planner.temperature"] = sub_field(&RunConfig::planner, &PlannerConfig::temperature);
        f["planner.sigma_floor"] = sub_field(&RunConfig::planner, &PlannerConfig::sigma_floor);
        f["planner.sigma_init"] = sub_field(&RunConfig::planner, &PlannerConfig::sigma_init);
        f["planner.discount"] = sub_field(&RunConfig::planner, &PlannerConfig::discount);

        f["learner.batch_size"] = sub_field(&RunConfig::learner, &LearnerConfig::batch_size);
        f["learner.horizon"] = sub_field(&RunConfig::learner, &LearnerConfig::horizon);
        f["learner.rho"] = sub_field(&RunConfig::learner, &LearnerConfig::rho);
        f["learner.td_steps"] = sub_field(&RunConfig::learner, &LearnerConfig::td_steps);
        f["learner.entropy_coef"] = sub_field(&RunConfig::learner, &LearnerConfig::entropy_coef);
        f["learner.kl_scale_decay"] = sub_field(&RunConfig::learner, &LearnerConfig::kl_scale_decay);
        f["learner.target_rate"] = sub_field(&RunConfig::learner, &LearnerConfig::target_rate);
        f["learner.lr"] = sub_field(&RunConfig::learner, &LearnerConfig::lr);
        f["learner.discount"] = sub_field(&RunConfig::learner, &LearnerConfig::discount);
        f["learner.max_grad_norm"] = sub_field(&RunConfig::learner, &LearnerConfig::max_grad_norm);
        f["learner.train_policy"] = sub_field(&RunConfig::learner, &LearnerConfig::train_policy);

        // "inf" disables reanalyze.
        f["reanalyze.interval"] = {
            [](const RunConfig& c) { return std::to_string(c.reanalyze.interval); },
            [](RunConfig& c, const std::string& k, const std::string& v) {
                c.reanalyze.interval = v == "inf" ? 0 : to_uint(k, v);
            }};
        f["reanalyze.batch"] = sub_field(&RunConfig::reanalyze, &ReanalyzeConfig::batch);
        f["reanalyze.log_std_min"] = sub_field(&RunConfig::reanalyze, &ReanalyzeConfig::log_std_min);
        f["reanalyze.log_std_max"] = sub_field(&RunConfig::reanalyze, &ReanalyzeConfig::log_std_max);
        f["reanalyze.horizon"] = sub_field(&RunConfig::reanalyze, &ReanalyzeConfig::horizon);
        return f;
    }();
    return table;
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0) {
    std::uint64_t z = a ^ (0x9e3779b97f4a7c15ull * (b + 1)) ^ (0xc2b2ae3d27d4eb4full * (c + 1));
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

ModelConfig model_for_env(ModelConfig model, const EnvSpec& spec) {
    model.obs_dim = spec.obs_dim;
    model.action_dim = spec.action_dim;
    return model;
}

}  // namespace

void RunConfig::validate() const {
    make_env(env);
    if (!(utd >= 0.0) || !std::isfinite(utd)) {
        throw std::invalid_argument("run config: utd must be a finite non-negative number");
    }
    if (eval_episodes == 0) {
        throw std::invalid_argument("run config: eval_episodes must be positive");
    }
    if (buffer_capacity == 0) {
        throw std::invalid_argument("run config: buffer_capacity must be positive");
    }
    const auto spec = make_env(env)->spec();
    model_for_env(model, spec).validate();
    planner.validate();
    learner.validate();
    reanalyze.validate();
}

std::map<std::string, std::string> RunConfig::to_kv() const {
    std::map<std::string, std::string> kv;
    for (const auto& [k, f] : fields()) {
        kv[k] = f.get(*this);
    }
    return kv;
}

void RunConfig::set(const std::string& key, const std::string& value) {
    const auto it = fields().find(key);
    if (it == fields().end()) {
        throw std::invalid_argument("config: unknown key '" + key + "'");
    }
    it->second.set(*this, key, value);
}

void RunConfig::apply_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) {
        throw std::invalid_argument("config: override '" + assignment + "' is not key=value");
    }
    set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

std::vector<std::string> RunConfig::keys() {
    std::vector<std::string> out;
    for (const auto& [k, f] : fields()) {
        out.push_back(k);
    }
    return out;
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("config: cannot open " + path.string());
    }
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) {
            line.resize(hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        try {
            base.apply_override(line);
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return base;
}

std::string format_run_config(const RunConfig& config) {
    std::ostringstream os;
    for (const auto& [k, v] : config.to_kv()) {
        os << k << " = " << v << '\n';
    }
    return os.str();
}

MetricsWriter::MetricsWriter(const std::filesystem::path& path) : path_(path) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    out_.open(path, std::ios::out | std::ios::trunc);
    if (!out_) {
        throw std::runtime_error("metrics: cannot open " + path.string());
    }
}

void MetricsWriter::emit(const std::string& kind, std::size_t step, nlohmann::json payload) {
    nlohmann::json event = {{"kind", kind}, {"step", step}};
    for (auto& [k, v] : payload.items()) {
        event[k] = v;
    }
    out_ << event.dump() << '\n';
    out_.flush();
    if (!out_) {
        throw std::runtime_error("metrics: write to " + path_.string() + " failed");
    }
}

EvalPolicy parse_eval_policy(const std::string& name) {
    if (name == "mpc") {
        return EvalPolicy::mpc;
    }
    if (name == "network") {
        return EvalPolicy::network;
    }
    if (name == "both") {
        return EvalPolicy::both;
    }
    throw std::invalid_argument("unknown eval policy '" + name + "' (expected mpc, network or both)");
}

ReturnStats summarize_returns(std::vector<double> returns) {
    ReturnStats s;
    s.returns = std::move(returns);
    if (s.returns.empty()) {
        return s;
    }
    for (double r : s.returns) {
        s.mean += r;
    }
    s.mean /= static_cast<double>(s.returns.size());
    double var = 0.0;
    for (double r : s.returns) {
        var += (r - s.mean) * (r - s.mean);
    }
    s.stdev = std::sqrt(var / static_cast<double>(s.returns.size()));
    return s;
}

DeltaQSummary summarize_delta_q(const std::vector<double>& samples) {
    DeltaQSummary s;
    s.count = samples.size();
    if (samples.empty()) {
        return s;
    }
    double pos = 0.0;
    for (double v : samples) {
        s.mean += v;
        pos += v > 0.0 ? 1.0 : 0.0;
    }
    s.mean /= static_cast<double>(samples.size());
    s.positive_fraction = pos / static_cast<double>(samples.size());
    s.median = percentile(samples, 50.0);
    s.p5 = percentile(samples, 5.0);
    s.p95 = percentile(samples, 95.0);
    return s;
}

nlohmann::json EvalReport::to_json() const {
    nlohmann::json j;
    j["episodes"] = episodes;
    if (has_mpc) {
        j["mpc"] = {{"mean", mpc.mean}, {"stdev", mpc.stdev}, {"returns", mpc.returns}};
        j["delta_q"] = {{"count", delta_q_summary.count},
                        {"mean", delta_q_summary.mean},
                        {"median", delta_q_summary.median},
                        {"p5", delta_q_summary.p5},
                        {"p95", delta_q_summary.p95},
                        {"positive_fraction", delta_q_summary.positive_fraction},
                        {"samples", delta_q}};
    }
    if (has_network) {
        j["network"] = {{"mean", network.mean}, {"stdev", network.stdev}, {"returns", network.returns}};
        j["network_planner_calls"] = planner_calls_network;
    }
    if (has_mpc && has_network) {
        j["gap"] = gap;
    }
    return j;
}

EvalReport evaluate(const WorldModel& model, const std::string& env_name, const EvalOptions& options) {
    auto env = make_env(env_name);
    const auto& spec = env->spec();
    if (model.config().obs_dim != spec.obs_dim || model.config().action_dim != spec.action_dim) {
        throw std::invalid_argument("evaluate: model expects obs/action dims " +
                                    std::to_string(model.config().obs_dim) + "/" +
                                    std::to_string(model.config().action_dim) + " but " + env_name +
                                    " has " + std::to_string(spec.obs_dim) + "/" +
                                    std::to_string(spec.action_dim));
    }
    if (options.episodes == 0) {
        throw std::invalid_argument("evaluate: episodes must be positive");
    }
    EvalReport report;
    report.episodes = options.episodes;
    const Planner planner(options.planner);

    if (options.policy != EvalPolicy::network) {
        report.has_mpc = true;
        std::vector<double> returns;
        for (std::size_t ep = 0; ep < options.episodes; ++ep) {
            auto obs = env->reset(options.seed + ep);
            std::optional<PlanDistribution> warm;
            double total = 0.0;
            for (std::size_t t = 0; !env->done(); ++t) {
                const auto z = model.encode(obs);
                const auto res = planner.plan(model, z, warm, mix_seed(options.seed, ep, t));
                if (!res.prior_values.empty()) {
                    report.delta_q.push_back(delta_q(res));
                }
                const auto step = env->step(res.first_step.mean);
                total += step.reward;
                obs = step.observation;
                if (!env->done()) {
                    warm = res.distribution.shifted(model, model.encode(obs));
                }
            }
            returns.push_back(total);
        }
        report.mpc = summarize_returns(std::move(returns));
        report.delta_q_summary = summarize_delta_q(report.delta_q);
    }

    if (options.policy != EvalPolicy::mpc) {
        report.has_network = true;
        const auto calls_before = planner.calls();
        std::vector<double> returns;
        for (std::size_t ep = 0; ep < options.episodes; ++ep) {
            auto obs = env->reset(options.seed + ep);
            double total = 0.0;
            while (!env->done()) {
                const auto pi = model.policy_distributions(model.encode(obs));
                const auto step = env->step(pi.front().mean);
                total += step.reward;
                obs = step.observation;
            }
            returns.push_back(total);
        }
        report.network = summarize_returns(std::move(returns));
        report.planner_calls_network = planner.calls() - calls_before;
    }
    if (report.has_mpc && report.has_network) {
        report.gap = report.mpc.mean - report.network.mean;
    }
    return report;
}

EvalReport evaluate(const std::filesystem::path& checkpoint, const std::string& env_name,
                    const EvalOptions& options) {
    const auto model = WorldModel::load(checkpoint);
    return evaluate(model, env_name, options);
}

TrainSummary train(const RunConfig& config) {
    config.validate();
    const std::filesystem::path out_dir(config.out);
    std::filesystem::create_directories(out_dir);
    {
        std::ofstream cfg(out_dir / "config.txt");
        cfg << format_run_config(config);
    }

    auto env = make_env(config.env);
    const auto spec = env->spec();
    const std::size_t m = spec.action_dim;
    const std::size_t horizon = config.learner.horizon;

    std::mt19937_64 rng(config.seed);
    WorldModel model(model_for_env(config.model, spec), rng());
    Learner learner(model, config.learner);
    ReplayBuffer buffer(config.buffer_capacity);
    const Planner planner(config.planner);
    const Reanalyzer reanalyzer(config.reanalyze, config.planner);
    std::unique_ptr<ReanalyzeWorker> worker;
    if (config.concurrent) {
        worker = std::make_unique<ReanalyzeWorker>(reanalyzer, buffer);
    }

    TrainSummary summary;
    summary.metrics = out_dir / "metrics.jsonl";
    summary.checkpoint = out_dir / "checkpoint.bin";
    summary.learner_state = out_dir / "learner_state.bin";
    MetricsWriter metrics(summary.metrics);

    EvalOptions eval_options;
    eval_options.episodes = config.eval_episodes;
    eval_options.seed = config.eval_seed;
    eval_options.policy = EvalPolicy::both;
    eval_options.planner = config.planner;

    ReanalyzeStats inline_stats;
    auto run_eval = [&](std::size_t step) {
        auto report = evaluate(model, config.env, eval_options);
        report.step = step;
        auto payload = report.to_json();
        payload["updates"] = learner.update_step();
        const auto hist = buffer.freshness_histogram(learner.update_step(), {1, 10, 100, 1000, 10000});
        payload["pi_age_histogram"] = {{"edges", {1, 10, 100, 1000, 10000}}, {"counts", hist}};
        metrics.emit("eval", step, payload);
        model.save(summary.checkpoint);
        learner.save_state(summary.learner_state);
        summary.evals.push_back(std::move(report));
    };

    std::uniform_real_distribution<double> uniform(-1.0, 1.0);
    std::size_t env_steps = 0;
    std::size_t next_eval = config.eval_interval > 0 ? config.eval_interval : 0;
    std::uint64_t episode = 0;

    while (env_steps < config.total_env_steps) {
        auto obs = env->reset(rng());
        std::vector<TransitionRecord> records;
        std::optional<PlanDistribution> warm;
        double ep_return = 0.0;
        std::size_t t = 0;
        while (!env->done()) {
            TransitionRecord rec;
            rec.obs = obs;
            rec.episode = episode;
            rec.step = t;
            std::optional<PlanResult> plan;
            if (env_steps < config.seed_steps) {
                rec.action.resize(m);
                for (auto& a : rec.action) {
                    a = uniform(rng);
                }
                rec.pi = uniform_action_moments(m);
                rec.pi_version = 0;
            } else {
                plan = planner.plan(model, model.encode(obs), warm, rng());
                rec.action = act(*plan, ActMode::stochastic, rng);
                rec.pi = plan->first_step;
                rec.pi_version = learner.update_step();
            }
            const auto step = env->step(rec.action);
            env_steps += spec.action_repeat;
            rec.reward = step.reward;
            rec.next_obs = step.observation;
            ep_return += step.reward;
            obs = step.observation;
            if (plan && !env->done()) {
                warm = plan->distribution.shifted(model, model.encode(obs));
            }
            records.push_back(std::move(rec));
            ++t;
        }
        const std::size_t agent_steps = records.size();
        buffer.push_episode(std::move(records));
        metrics.emit("episode", env_steps,
                     {{"episode", episode}, {"return", ep_return}, {"agent_steps", agent_steps}});
        ++episode;

        if (env_steps >= config.seed_steps) {
            const auto n_updates =
                static_cast<std::size_t>(std::llround(config.utd * static_cast<double>(agent_steps)));
            for (std::size_t u = 0; u < n_updates; ++u) {
                const auto segments = buffer.sample_segments(config.learner.batch_size, horizon, rng);
                summary.sampled_segments += segments.rows.size();
                const auto batch = TrainingBatch::from_segments(segments);
                UpdateMetrics um;
                try {
                    um = learner.update(batch);
                } catch (const std::exception& e) {
                    std::ofstream dump(out_dir / "failure_dump.json");
                    nlohmann::json j = {{"error", e.what()},
                                        {"env_steps", env_steps},
                                        {"update", learner.update_step() + 1},
                                        {"kl_scale", learner.kl_scale().value}};
                    nlohmann::json refs = nlohmann::json::array();
                    for (const auto& r : batch.refs) {
                        refs.push_back({r.episode, r.start});
                    }
                    j["batch_refs"] = refs;
                    dump << j.dump(2) << '\n';
                    model.save(out_dir / "failure_checkpoint.bin");
                    throw std::runtime_error(std::string("train: update failed (") + e.what() +
                                             "); state dumped to " + (out_dir / "failure_dump.json").string());
                }
                if (!std::isfinite(um.model_loss) || !std::isfinite(um.value_loss) ||
                    !std::isfinite(um.policy_loss)) {
                    std::ofstream dump(out_dir / "failure_dump.json");
                    dump << nlohmann::json{{"error", "non-finite loss"},
                                           {"env_steps", env_steps},
                                           {"update", um.step},
                                           {"model_loss", fmt(um.model_loss)},
                                           {"value_loss", fmt(um.value_loss)},
                                           {"policy_loss", fmt(um.policy_loss)}}
                                .dump(2)
                         << '\n';
                    throw std::runtime_error("train: non-finite loss at update " + std::to_string(um.step));
                }
                metrics.emit("update", env_steps,
                             {{"update", um.step},
                              {"model_loss", um.model_loss},
                              {"value_loss", um.value_loss},
                              {"policy_loss", um.policy_loss},
                              {"policy_kl", um.kl_mean},
                              {"policy_entropy", um.entropy_mean},
                              {"S", um.kl_scale},
                              {"grad_norm", um.grad_norm}});
                if (reanalyzer.due(um.step)) {
                    const auto tick_seed = rng();
                    const std::size_t count = std::min(config.reanalyze.batch, batch.refs.size());
                    std::vector<SegmentRef> refs(batch.refs.begin(),
                                                 batch.refs.begin() + static_cast<std::ptrdiff_t>(count));
                    if (worker) {
                        worker->submit(std::make_shared<const WorldModel>(model.clone()), std::move(refs),
                                       horizon, um.step, tick_seed);
                    } else {
                        const auto s = reanalyzer.tick(buffer, model, refs, horizon, um.step, tick_seed);
                        inline_stats.ticks += s.ticks;
                        inline_stats.segments += s.segments;
                        inline_stats.states += s.states;
                        inline_stats.failures += s.failures;
                        inline_stats.evicted += s.evicted;
                        metrics.emit("reanalyze", env_steps,
                                     {{"update", um.step},
                                      {"segments", s.segments},
                                      {"states", s.states},
                                      {"failures", s.failures}});
                    }
                }
            }
        }

        if (next_eval > 0 && env_steps >= next_eval && env_steps < config.total_env_steps) {
            if (worker) {
                worker->drain();
            }
            run_eval(env_steps);
            while (next_eval <= env_steps) {
                next_eval += config.eval_interval;
            }
        }
    }

    if (worker) {
        worker->drain();
        inline_stats = worker->stats();
    }
    summary.env_steps = env_steps;
    summary.updates = learner.update_step();
    summary.reanalyzed_segments = inline_stats.segments;
    summary.reanalyze_ticks = inline_stats.ticks;
    summary.reanalyze_failures = inline_stats.failures;
    summary.collection_plans = planner.calls();

    if (config.total_env_steps > 0) {
        run_eval(env_steps);
    } else {
        model.save(summary.checkpoint);
        learner.save_state(summary.learner_state);
    }
    if (config.total_env_steps > 0) {
        metrics.emit("summary", env_steps,
                     {{"updates", summary.updates},
                      {"sampled_segments", summary.sampled_segments},
                      {"reanalyzed_segments", summary.reanalyzed_segments},
                      {"reanalyze_ticks", summary.reanalyze_ticks},
                      {"reanalyze_failures", summary.reanalyze_failures},
                      {"reanalyze_ratio", summary.reanalyze_ratio()}});
    }
    return summary;
}

std::string delta_q_table(const std::filesystem::path& metrics) {
    std::ifstream in(metrics);
    if (!in) {
        throw std::runtime_error("diag: cannot open " + metrics.string());
    }
    std::ostringstream os;
    os << std::left << std::setw(10) << "step" << std::right << std::setw(8) << "count" << std::setw(12)
       << "mean" << std::setw(12) << "median" << std::setw(12) << "p5" << std::setw(12) << "p95"
       << std::setw(10) << "frac>0" << '\n';
    std::string line;
    std::size_t rows = 0;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) {
            continue;
        }
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw std::runtime_error("diag: " + metrics.string() + ":" + std::to_string(lineno) +
                                     " is not JSON: " + e.what());
        }
        if (j.value("kind", "") != "eval" || !j.contains("delta_q")) {
            continue;
        }
        const auto& d = j["delta_q"];
        os << std::left << std::setw(10) << j["step"].get<std::size_t>() << std::right << std::setw(8)
           << d["count"].get<std::size_t>() << std::fixed << std::setprecision(4) << std::setw(12)
           << d["mean"].get<double>() << std::setw(12) << d["median"].get<double>() << std::setw(12)
           << d["p5"].get<double>() << std::setw(12) << d["p95"].get<double>() << std::setw(10)
           << d["positive_fraction"].get<double>() << '\n';
        os.unsetf(std::ios::fixed);
        ++rows;
    }
    if (rows == 0) {
        os << "(no mpc eval events)\n";
    }
    return os.str();
}

}  // namespace bmpc
