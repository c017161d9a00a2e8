// Command-line front end: train, eval, plan, diag, oracle.
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "bmpc/harness.hpp"
#include "bmpc/oracle.hpp"

namespace {

bmpc::RunConfig resolve_config(const std::string& path, const std::vector<std::string>& overrides) {
    bmpc::RunConfig cfg;
    if (!path.empty()) {
        cfg = bmpc::load_run_config(path);
    }
    for (const auto& o : overrides) {
        cfg.apply_override(o);
    }
    return cfg;
}

std::vector<double> parse_numbers(const std::string& text) {
    std::istringstream in(text);
    std::vector<double> out;
    std::string tok;
    while (in >> tok) {
        std::size_t used = 0;
        out.push_back(std::stod(tok, &used));
        if (used != tok.size()) {
            throw std::invalid_argument("observation: '" + tok + "' is not a number");
        }
    }
    return out;
}

std::string join(const std::vector<double>& v) {
    std::ostringstream os;
    os.precision(10);
    for (std::size_t i = 0; i < v.size(); ++i) {
        os << (i ? " " : "") << v[i];
    }
    return os.str();
}

void print_returns(const char* label, const bmpc::ReturnStats& s) {
    std::cout << label << "_mean=" << s.mean << '\n'
              << label << "_stdev=" << s.stdev << '\n'
              << label << "_returns=" << join(s.returns) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bootstrapped MPC: train and inspect agents on the toy control tasks"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;

    auto* train = app.add_subcommand("train", "train an agent and write metrics + checkpoint");
    std::uint64_t seed = 1;
    std::string out_dir;
    train->add_option("--config", config_path, "flat key=value config file");
    train->add_option("--seed", seed, "run seed");
    train->add_option("--out", out_dir, "output directory");
    train->add_option("--set", overrides, "override a config key (key=value), repeatable");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string ckpt;
    std::string env_name;
    std::string policy = "both";
    std::size_t episodes = 10;
    std::uint64_t eval_seed = 1000003;
    eval->add_option("--ckpt", ckpt, "checkpoint file")->required();
    eval->add_option("--env", env_name, "environment name")->required();
    eval->add_option("--policy", policy, "mpc, network or both");
    eval->add_option("--episodes", episodes, "episodes per policy");
    eval->add_option("--seed", eval_seed, "evaluation seed");
    eval->add_option("--config", config_path, "config file supplying planner settings");
    eval->add_option("--set", overrides, "override a config key (key=value), repeatable");

    auto* plan = app.add_subcommand("plan", "plan once from an observation");
    std::string obs_text;
    std::string obs_file;
    std::uint64_t plan_seed = 0;
    plan->add_option("--ckpt", ckpt, "checkpoint file")->required();
    plan->add_option("--obs", obs_text, "observation, whitespace-separated");
    plan->add_option("--obs-file", obs_file, "file holding the observation");
    plan->add_option("--seed", plan_seed, "planner seed");
    plan->add_option("--config", config_path, "config file supplying planner settings");
    plan->add_option("--set", overrides, "override a config key (key=value), repeatable");

    auto* diag = app.add_subcommand("diag", "summarize value-gain statistics from a metrics stream");
    std::string metrics_path;
    diag->add_option("--metrics", metrics_path, "metrics.jsonl")->required();

    auto* oracle = app.add_subcommand("oracle", "near-optimal reference return of an environment");
    std::size_t oracle_episodes = 10;
    std::uint64_t oracle_seed = 1000003;
    oracle->add_option("--env", env_name, "environment name")->required();
    oracle->add_option("--episodes", oracle_episodes, "episodes");
    oracle->add_option("--seed", oracle_seed, "first reset seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) {
            auto cfg = resolve_config(config_path, overrides);
            if (train->count("--seed")) {
                cfg.seed = seed;
            }
            if (!out_dir.empty()) {
                cfg.out = out_dir;
            }
            const auto s = bmpc::train(cfg);
            std::cout << "env_steps=" << s.env_steps << '\n'
                      << "updates=" << s.updates << '\n'
                      << "reanalyze_ratio=" << s.reanalyze_ratio() << '\n'
                      << "checkpoint=" << s.checkpoint.string() << '\n'
                      << "metrics=" << s.metrics.string() << '\n';
            if (!s.evals.empty()) {
                print_returns("mpc", s.evals.back().mpc);
                print_returns("network", s.evals.back().network);
            }
        } else if (eval->parsed()) {
            const auto cfg = resolve_config(config_path, overrides);
            bmpc::EvalOptions opts;
            opts.episodes = episodes;
            opts.seed = eval_seed;
            opts.policy = bmpc::parse_eval_policy(policy);
            opts.planner = cfg.planner;
            const auto r = bmpc::evaluate(std::filesystem::path(ckpt), env_name, opts);
            if (r.has_mpc) {
                print_returns("mpc", r.mpc);
                std::cout << "delta_q_mean=" << r.delta_q_summary.mean << '\n'
                          << "delta_q_median=" << r.delta_q_summary.median << '\n';
            }
            if (r.has_network) {
                print_returns("network", r.network);
            }
            if (r.has_mpc && r.has_network) {
                std::cout << "gap=" << r.gap << '\n';
            }
        } else if (plan->parsed()) {
            const auto cfg = resolve_config(config_path, overrides);
            if (obs_text.empty() == obs_file.empty()) {
                throw std::invalid_argument("plan: give exactly one of --obs or --obs-file");
            }
            if (!obs_file.empty()) {
                std::ifstream in(obs_file);
                if (!in) {
                    throw std::runtime_error("plan: cannot open " + obs_file);
                }
                std::ostringstream ss;
                ss << in.rdbuf();
                obs_text = ss.str();
            }
            const auto obs = parse_numbers(obs_text);
            const auto model = bmpc::WorldModel::load(ckpt);
            if (obs.size() != model.config().obs_dim) {
                throw std::invalid_argument("plan: observation has " + std::to_string(obs.size()) +
                                            " entries, checkpoint expects " +
                                            std::to_string(model.config().obs_dim));
            }
            const bmpc::Planner planner(cfg.planner);
            const auto res = planner.plan(model, model.encode(obs), std::nullopt, plan_seed);
            std::vector<double> sigma;
            for (double ls : res.first_step.log_std) {
                sigma.push_back(std::exp(ls));
            }
            std::cout << "mu=" << join(res.distribution.mu) << '\n'
                      << "sigma=" << join(res.distribution.sigma) << '\n'
                      << "first_mu=" << join(res.first_step.mean) << '\n'
                      << "first_sigma=" << join(sigma) << '\n'
                      << "q=" << res.selected_value << '\n';
            if (!res.prior_values.empty()) {
                std::cout << "delta_q=" << bmpc::delta_q(res) << '\n';
            }
        } else if (diag->parsed()) {
            std::cout << bmpc::delta_q_table(metrics_path);
        } else if (oracle->parsed()) {
            std::vector<std::uint64_t> seeds;
            for (std::size_t i = 0; i < oracle_episodes; ++i) {
                seeds.push_back(oracle_seed + i);
            }
            std::cout << "oracle_return=" << bmpc::oracle_return(env_name, {}, seeds) << '\n';
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
