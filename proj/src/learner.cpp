#include "bmpc/learner.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace bmpc {
namespace {

Tensor stack_rows(const std::vector<const std::vector<double>*>& rows, std::size_t width) {
    Tensor t = Tensor::matrix(rows.size(), width);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r]->size() != width) {
            throw std::invalid_argument("training batch: ragged rows");
        }
        std::copy(rows[r]->begin(), rows[r]->end(), t.data() + r * width);
    }
    return t;
}

double rho_pow(double rho, std::size_t t) { return std::pow(rho, static_cast<double>(t)); }

}  // namespace

void LearnerConfig::validate() const {
    if (batch_size == 0) {
        throw std::invalid_argument("learner config: batch_size must be positive");
    }
    if (td_steps == 0) {
        throw std::invalid_argument("learner config: td_steps must be at least 1");
    }
    if (!(rho > 0.0 && rho <= 1.0)) {
        throw std::invalid_argument("learner config: rho must lie in (0, 1]");
    }
    if (!(discount >= 0.0 && discount <= 1.0)) {
        throw std::invalid_argument("learner config: discount must lie in [0, 1]");
    }
    if (!(kl_scale_decay >= 0.0 && kl_scale_decay < 1.0)) {
        throw std::invalid_argument("learner config: kl_scale_decay must lie in [0, 1)");
    }
    if (!(target_rate > 0.0 && target_rate <= 1.0)) {
        throw std::invalid_argument("learner config: target_rate must lie in (0, 1]");
    }
    if (!(lr > 0.0)) {
        throw std::invalid_argument("learner config: lr must be positive");
    }
}

TrainingBatch TrainingBatch::from_segments(const SegmentBatch& segments) {
    TrainingBatch b;
    b.size = segments.rows.size();
    b.horizon = segments.horizon;
    b.refs = segments.refs;
    if (b.size == 0) {
        throw std::invalid_argument("training batch: empty");
    }
    const auto& first = segments.rows.front().front();
    const std::size_t n = first.obs.size();
    const std::size_t m = first.action.size();
    for (std::size_t t = 0; t <= b.horizon; ++t) {
        std::vector<const std::vector<double>*> obs, act, next, mean, log_std;
        std::vector<double> reward;
        for (const auto& row : segments.rows) {
            if (row.size() != b.horizon + 1) {
                throw std::invalid_argument("training batch: segment length does not match horizon");
            }
            const auto& r = row[t];
            if (r.pi.mean.size() != m || r.pi.log_std.size() != m) {
                throw std::invalid_argument("training batch: record without an expert distribution");
            }
            obs.push_back(&r.obs);
            act.push_back(&r.action);
            next.push_back(&r.next_obs);
            mean.push_back(&r.pi.mean);
            log_std.push_back(&r.pi.log_std);
            reward.push_back(r.reward);
        }
        b.obs.push_back(stack_rows(obs, n));
        b.action.push_back(stack_rows(act, m));
        b.next_obs.push_back(stack_rows(next, n));
        b.pi_mean.push_back(stack_rows(mean, m));
        b.pi_log_std.push_back(stack_rows(log_std, m));
        b.reward.push_back(std::move(reward));
    }
    return b;
}

double percentile(std::vector<double> values, double q) {
    if (values.empty()) {
        throw std::invalid_argument("percentile: empty input");
    }
    std::sort(values.begin(), values.end());
    const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, values.size() - 1);
    const double f = pos - static_cast<double>(lo);
    return values[lo] + f * (values[hi] - values[lo]);
}

KLScale update_kl_scale(KLScale scale, const std::vector<double>& kl_values, double decay) {
    const double spread = percentile(kl_values, 95.0) - percentile(kl_values, 5.0);
    if (!std::isfinite(spread)) {
        throw std::runtime_error("update_kl_scale: non-finite KL values");
    }
    if (!scale.initialized) {
        return {spread, true};
    }
    return {decay * scale.value + (1.0 - decay) * spread, true};
}

std::vector<ad::Var> latent_rollout(const WorldModel& model, const TrainingBatch& batch) {
    std::vector<ad::Var> zs;
    zs.push_back(model.encode(ad::constant(batch.obs.front())));
    for (std::size_t t = 0; t <= batch.horizon; ++t) {
        zs.push_back(model.dynamics(zs.back(), ad::constant(batch.action[t])));
    }
    return zs;
}

ad::Var consistency_loss(const ad::Var& z_pred, const Tensor& z_target) {
    return ad::mean(ad::sum_cols(ad::square(ad::sub(z_pred, ad::constant(z_target)))));
}

ad::Var model_loss(const WorldModel& model, const TrainingBatch& batch,
                   const std::vector<ad::Var>& zs, const LearnerConfig& config) {
    ad::Var total;
    for (std::size_t t = 0; t <= batch.horizon; ++t) {
        Tensor target;
        {
            ad::NoGradGuard guard;
            target = model.encode(batch.next_obs[t]);
        }
        const auto reward_ce = ad::mean(ad::cross_entropy(
            model.reward_logits(zs[t], ad::constant(batch.action[t])),
            model.two_hot().encode_batch(batch.reward[t])));
        const auto term = ad::scale(ad::add(consistency_loss(zs[t + 1], target), reward_ce),
                                    rho_pow(config.rho, t));
        total = total ? ad::add(total, term) : term;
    }
    return total;
}

std::vector<std::vector<double>> td_targets(const WorldModel& model, const TrainingBatch& batch,
                                            const LearnerConfig& config) {
    ad::NoGradGuard guard;
    std::vector<std::vector<double>> targets;
    for (std::size_t t = 0; t <= batch.horizon; ++t) {
        Tensor z = model.encode(batch.obs[t]);
        std::vector<double> acc(batch.size, 0.0);
        for (std::size_t k = 0; k < config.td_steps; ++k) {
            const auto pi = model.policy(ad::constant(z));
            const Tensor a = pi.mean.value();
            const auto tr = model.transition(z, a);
            const double g = std::pow(config.discount, static_cast<double>(k));
            for (std::size_t i = 0; i < batch.size; ++i) {
                acc[i] += g * tr.reward[i];
            }
            z = tr.next;
        }
        const auto v = model.value_scalar(z, /*target=*/true);
        const double g = std::pow(config.discount, static_cast<double>(config.td_steps));
        for (std::size_t i = 0; i < batch.size; ++i) {
            acc[i] += g * v[i];
        }
        targets.push_back(std::move(acc));
    }
    return targets;
}

ad::Var value_loss(const WorldModel& model, const TrainingBatch& batch,
                   const std::vector<ad::Var>& zs, const LearnerConfig& config) {
    const auto targets = td_targets(model, batch, config);
    ad::Var total;
    for (std::size_t t = 0; t <= batch.horizon; ++t) {
        const Tensor probs = model.two_hot().encode_batch(targets[t]);
        for (std::size_t head = 0; head < model.config().num_values; ++head) {
            const auto ce = ad::mean(ad::cross_entropy(model.value_logits(zs[t], head), probs));
            const auto term = ad::scale(ce, rho_pow(config.rho, t));
            total = total ? ad::add(total, term) : term;
        }
    }
    return total;
}

PolicyTerms policy_terms(const WorldModel& model, const std::vector<ad::Var>& zs,
                         const std::vector<Tensor>& expert_mean,
                         const std::vector<Tensor>& expert_log_std) {
    PolicyTerms terms;
    const double half_log_2pie = 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e);
    for (std::size_t t = 0; t < expert_mean.size(); ++t) {
        const auto head = model.policy(ad::detach(zs[t]));
        const auto p_mean = ad::constant(expert_mean[t]);
        const auto p_log_std = ad::constant(expert_log_std[t]);
        // KL(p || q) = sum log sq - log sp + (sp^2 + (mp - mq)^2) / (2 sq^2) - 1/2
        const auto d_ls = ad::sub(head.log_std, p_log_std);
        const auto ratio = ad::exp(ad::scale(d_ls, -2.0));
        const auto mahal = ad::mul(ad::square(ad::sub(p_mean, head.mean)),
                                   ad::exp(ad::scale(head.log_std, -2.0)));
        const auto elem = ad::add_scalar(ad::add(d_ls, ad::scale(ad::add(ratio, mahal), 0.5)), -0.5);
        terms.kl.push_back(ad::sum_cols(elem));
        terms.entropy.push_back(ad::add_scalar(
            ad::sum_cols(head.log_std), half_log_2pie * static_cast<double>(head.log_std.cols())));
    }
    return terms;
}

ad::Var combine_policy_loss(const PolicyTerms& terms, double scale, double rho, double entropy_coef) {
    const double inv = 1.0 / std::max(1.0, scale);
    ad::Var total;
    for (std::size_t t = 0; t < terms.kl.size(); ++t) {
        const auto per_row = ad::sub(ad::scale(terms.kl[t], inv), ad::scale(terms.entropy[t], entropy_coef));
        const auto term = ad::scale(ad::mean(per_row), rho_pow(rho, t));
        total = total ? ad::add(total, term) : term;
    }
    return total;
}

std::vector<double> kl_values(const PolicyTerms& terms) {
    std::vector<double> out;
    for (const auto& kl : terms.kl) {
        const auto& v = kl.value().values();
        out.insert(out.end(), v.begin(), v.end());
    }
    return out;
}

ad::Var policy_loss(const WorldModel& model, const TrainingBatch& batch,
                    const std::vector<ad::Var>& zs, double scale, const LearnerConfig& config) {
    const auto terms = policy_terms(model, zs, batch.pi_mean, batch.pi_log_std);
    return combine_policy_loss(terms, scale, config.rho, config.entropy_coef);
}

ad::Var exact_policy_loss(const WorldModel& model, const TrainingBatch& batch,
                          const std::vector<ad::Var>& zs, const Reanalyzer& reanalyzer,
                          std::uint64_t seed, double scale, const LearnerConfig& config) {
    const std::size_t m = model.action_dim();
    std::vector<Tensor> mean, log_std;
    for (std::size_t t = 0; t <= batch.horizon; ++t) {
        Tensor mu = Tensor::matrix(batch.size, m);
        Tensor ls = Tensor::matrix(batch.size, m);
        for (std::size_t i = 0; i < batch.size; ++i) {
            const auto row = batch.obs[t].row(i);
            const auto pi = reanalyzer.replan(model, std::vector<double>(row.begin(), row.end()),
                                              Reanalyzer::plan_seed(seed, batch.refs[i].episode, batch.refs[i].start + t));
            std::copy(pi.mean.begin(), pi.mean.end(), mu.data() + i * m);
            std::copy(pi.log_std.begin(), pi.log_std.end(), ls.data() + i * m);
        }
        mean.push_back(std::move(mu));
        log_std.push_back(std::move(ls));
    }
    const auto terms = policy_terms(model, zs, mean, log_std);
    return combine_policy_loss(terms, scale, config.rho, config.entropy_coef);
}

Learner::Learner(WorldModel& model, LearnerConfig config)
    : model_(model),
      config_(config),
      optimizer_(model.params(), AdamOptimizer::Options{.max_grad_norm = config.max_grad_norm}),
      value_online_(model.value_params()) {
    config_.validate();
}

void Learner::save_state(const std::filesystem::path& path) const {
    auto state = optimizer_.state();
    Tensor meta(std::vector<std::size_t>{3});
    meta.values() = {static_cast<double>(step_), kl_scale_.value, kl_scale_.initialized ? 1.0 : 0.0};
    state.add("learner.meta", std::move(meta));
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("learner state: cannot open " + path.string() + " for writing");
    }
    state.write(out);
}

void Learner::load_state(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("learner state: cannot open " + path.string());
    }
    const auto state = ParameterSet::read(in);
    const auto meta = state.get("learner.meta").value().values();
    if (meta.size() != 3) {
        throw std::runtime_error("learner state: malformed meta record");
    }
    ParameterSet adam;
    for (const auto& p : state.params()) {
        if (p.name() != "learner.meta") {
            adam.add(p.name(), p.value());
        }
    }
    optimizer_.load_state(adam);
    step_ = static_cast<std::int64_t>(meta[0]);
    kl_scale_ = {meta[1], meta[2] != 0.0};
}

UpdateMetrics Learner::update(const TrainingBatch& batch) {
    if (batch.horizon != config_.horizon) {
        throw std::invalid_argument("learner: batch horizon " + std::to_string(batch.horizon) +
                                    " does not match configured horizon " +
                                    std::to_string(config_.horizon));
    }
    UpdateMetrics out;
    model_.params().zero_grad();

    const auto zs = latent_rollout(model_, batch);
    const auto m_loss = model_loss(model_, batch, zs, config_);
    const auto v_loss = value_loss(model_, batch, zs, config_);
    ad::backward(ad::add(m_loss, v_loss));
    out.model_loss = m_loss.item();
    out.value_loss = v_loss.item();

    if (config_.train_policy) {
        const auto terms = policy_terms(model_, zs, batch.pi_mean, batch.pi_log_std);
        const auto kls = kl_values(terms);
        kl_scale_ = update_kl_scale(kl_scale_, kls, config_.kl_scale_decay);
        const auto p_loss = combine_policy_loss(terms, kl_scale_.value, config_.rho, config_.entropy_coef);
        ad::backward(p_loss);
        out.policy_loss = p_loss.item();
        double kl_sum = 0.0;
        for (double k : kls) {
            kl_sum += k;
        }
        out.kl_mean = kl_sum / static_cast<double>(kls.size());
        double ent = 0.0;
        for (const auto& e : terms.entropy) {
            for (double v : e.value().values()) {
                ent += v;
            }
        }
        out.entropy_mean = ent / static_cast<double>(kls.size());
    }

    out.grad_norm = optimizer_.step(config_.lr);
    ema_update(value_online_, model_.target_values(), config_.target_rate);
    out.step = ++step_;
    out.kl_scale = kl_scale_.value;
    return out;
}

}  // namespace bmpc
