#include "bmpc/world_model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace bmpc {
namespace {

constexpr char kCheckpointMagic[8] = {'B', 'M', 'P', 'C', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

std::size_t parse_size(const std::map<std::string, std::string>& kv, const std::string& key,
                       std::size_t fallback) {
    const auto it = kv.find(key);
    return it == kv.end() ? fallback : static_cast<std::size_t>(std::stoull(it->second));
}

double parse_double(const std::map<std::string, std::string>& kv, const std::string& key,
                    double fallback) {
    const auto it = kv.find(key);
    return it == kv.end() ? fallback : std::stod(it->second);
}

std::string format_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace

void ModelConfig::validate() const {
    if (obs_dim == 0 || action_dim == 0) {
        throw std::invalid_argument("model config: obs_dim and action_dim must be positive");
    }
    if (latent_dim == 0 || hidden_dim == 0) {
        throw std::invalid_argument("model config: latent_dim and hidden_dim must be positive");
    }
    if (simnorm_group == 0 || latent_dim % simnorm_group != 0) {
        throw std::invalid_argument("model config: latent_dim must be a multiple of simnorm_group");
    }
    if (bins < 2) {
        throw std::invalid_argument("model config: bins must be at least 2");
    }
    if (!(v_min < v_max)) {
        throw std::invalid_argument("model config: v_min must be below v_max");
    }
    if (!(log_std_min < log_std_max)) {
        throw std::invalid_argument("model config: log_std_min must be below log_std_max");
    }
    if (num_values == 0) {
        throw std::invalid_argument("model config: need at least one value head");
    }
}

std::map<std::string, std::string> ModelConfig::to_kv() const {
    return {
        {"obs_dim", std::to_string(obs_dim)},
        {"action_dim", std::to_string(action_dim)},
        {"latent_dim", std::to_string(latent_dim)},
        {"hidden_dim", std::to_string(hidden_dim)},
        {"hidden_layers", std::to_string(hidden_layers)},
        {"simnorm_group", std::to_string(simnorm_group)},
        {"bins", std::to_string(bins)},
        {"v_min", format_double(v_min)},
        {"v_max", format_double(v_max)},
        {"log_std_min", format_double(log_std_min)},
        {"log_std_max", format_double(log_std_max)},
        {"num_values", std::to_string(num_values)},
    };
}

ModelConfig ModelConfig::from_kv(const std::map<std::string, std::string>& kv) {
    ModelConfig c;
    c.obs_dim = parse_size(kv, "obs_dim", c.obs_dim);
    c.action_dim = parse_size(kv, "action_dim", c.action_dim);
    c.latent_dim = parse_size(kv, "latent_dim", c.latent_dim);
    c.hidden_dim = parse_size(kv, "hidden_dim", c.hidden_dim);
    c.hidden_layers = parse_size(kv, "hidden_layers", c.hidden_layers);
    c.simnorm_group = parse_size(kv, "simnorm_group", c.simnorm_group);
    c.bins = parse_size(kv, "bins", c.bins);
    c.v_min = parse_double(kv, "v_min", c.v_min);
    c.v_max = parse_double(kv, "v_max", c.v_max);
    c.log_std_min = parse_double(kv, "log_std_min", c.log_std_min);
    c.log_std_max = parse_double(kv, "log_std_max", c.log_std_max);
    c.num_values = parse_size(kv, "num_values", c.num_values);
    return c;
}

WorldModel::WorldModel(ModelConfig config, std::uint64_t seed)
    : config_((config.validate(), config)),
      two_hot_(config_.bins, config_.v_min, config_.v_max) {
    build_layout();
    init_params(seed);
    target_values_ = value_params().clone();
}

WorldModel::WorldModel(ModelConfig config, ParameterSet params, ParameterSet targets)
    : config_((config.validate(), config)),
      two_hot_(config_.bins, config_.v_min, config_.v_max),
      params_(std::move(params)),
      target_values_(std::move(targets)) {
    build_layout();
}

void WorldModel::build_layout() {
    const auto& c = config_;
    auto dims = [&](std::size_t in, std::size_t out) {
        std::vector<std::size_t> d{in};
        for (std::size_t i = 0; i < c.hidden_layers; ++i) {
            d.push_back(c.hidden_dim);
        }
        d.push_back(out);
        return d;
    };
    encoder_ = {"encoder.", dims(c.obs_dim, c.latent_dim), true};
    dynamics_ = {"dynamics.", dims(c.latent_dim + c.action_dim, c.latent_dim), true};
    reward_ = {"reward.", dims(c.latent_dim + c.action_dim, c.bins), false};
    values_.clear();
    for (std::size_t i = 0; i < c.num_values; ++i) {
        values_.push_back({"value." + std::to_string(i) + ".", dims(c.latent_dim, c.bins), false});
    }
    policy_ = {"policy.", dims(c.latent_dim, 2 * c.action_dim), false};
}

void WorldModel::init_params(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto add_mlp = [&](const Mlp& mlp, bool zero_final) {
        const std::size_t layers = mlp.dims.size() - 1;
        for (std::size_t l = 0; l < layers; ++l) {
            const std::size_t in = mlp.dims[l];
            const std::size_t out = mlp.dims[l + 1];
            const std::string base = mlp.prefix + "l" + std::to_string(l) + ".";
            Tensor w = Tensor::matrix(in, out);
            const bool final = l + 1 == layers;
            if (!(final && zero_final)) {
                const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
                std::uniform_real_distribution<double> u(-bound, bound);
                for (auto& v : w.values()) {
                    v = u(rng);
                }
            }
            params_.add(base + "weight", std::move(w));
            params_.add(base + "bias", Tensor({out}, 0.0));
            if (!final) {
                params_.add(base + "ln_gain", Tensor({out}, 1.0));
                params_.add(base + "ln_bias", Tensor({out}, 0.0));
            }
        }
    };
    add_mlp(encoder_, false);
    add_mlp(dynamics_, false);
    add_mlp(reward_, true);
    for (const auto& v : values_) {
        add_mlp(v, true);
    }
    add_mlp(policy_, false);
}

ad::Var WorldModel::simnorm(const ad::Var& x) const {
    const std::size_t n = x.rows();
    const std::size_t l = x.cols();
    const std::size_t g = config_.simnorm_group;
    auto grouped = ad::reshape(x, {n * l / g, g});
    return ad::reshape(ad::softmax(grouped), {n, l});
}

ad::Var WorldModel::run_mlp(const Mlp& mlp, const ad::Var& x, const ParameterSet& params,
                            const std::string& prefix) const {
    if (x.cols() != mlp.dims.front()) {
        throw std::invalid_argument(mlp.prefix + " expects input width " +
                                    std::to_string(mlp.dims.front()) + ", got " +
                                    shape_string(x.shape()));
    }
    const std::size_t layers = mlp.dims.size() - 1;
    ad::Var h = x;
    for (std::size_t l = 0; l < layers; ++l) {
        const std::string base = prefix + "l" + std::to_string(l) + ".";
        h = ad::add_bias(ad::matmul(h, params.get(base + "weight")), params.get(base + "bias"));
        if (l + 1 < layers) {
            h = ad::silu(ad::layer_norm(h, params.get(base + "ln_gain"), params.get(base + "ln_bias")));
        }
    }
    return mlp.simnorm_output ? simnorm(h) : h;
}

void WorldModel::check_actions(const Tensor& a) const {
    if (a.cols() != config_.action_dim) {
        throw std::invalid_argument("world model: action width " + std::to_string(a.cols()) +
                                    " does not match action_dim " +
                                    std::to_string(config_.action_dim));
    }
    for (double v : a.values()) {
        if (!(std::fabs(v) <= 1.0 + 1e-12)) {
            throw std::invalid_argument("world model: action component " + std::to_string(v) +
                                        " outside [-1, 1]");
        }
    }
}

ad::Var WorldModel::encode(const ad::Var& obs) const {
    if (obs.value().rank() != 2 || obs.cols() != config_.obs_dim) {
        throw std::invalid_argument("encode: observation shape " + shape_string(obs.shape()) +
                                    " does not match obs_dim " + std::to_string(config_.obs_dim));
    }
    return run_mlp(encoder_, obs, params_, encoder_.prefix);
}

ad::Var WorldModel::dynamics(const ad::Var& z, const ad::Var& a) const {
    check_actions(a.value());
    return run_mlp(dynamics_, ad::concat_cols(z, a), params_, dynamics_.prefix);
}

ad::Var WorldModel::reward_logits(const ad::Var& z, const ad::Var& a) const {
    check_actions(a.value());
    return run_mlp(reward_, ad::concat_cols(z, a), params_, reward_.prefix);
}

ad::Var WorldModel::value_logits(const ad::Var& z, std::size_t head, bool target) const {
    const auto& mlp = values_.at(head);
    return run_mlp(mlp, z, target ? target_values_ : params_, mlp.prefix);
}

PolicyHead WorldModel::policy(const ad::Var& z) const {
    const std::size_t m = config_.action_dim;
    auto raw = run_mlp(policy_, z, params_, policy_.prefix);
    auto mean = ad::tanh(ad::slice_cols(raw, 0, m));
    const double half_range = 0.5 * (config_.log_std_max - config_.log_std_min);
    auto log_std = ad::add_scalar(ad::scale(ad::tanh(ad::slice_cols(raw, m, 2 * m)), half_range),
                                  config_.log_std_min + half_range);
    return {mean, log_std};
}

Tensor WorldModel::encode(const Tensor& obs) const {
    ad::NoGradGuard guard;
    return encode(ad::constant(obs)).value();
}

Tensor WorldModel::encode(const std::vector<double>& obs) const {
    return encode(Tensor({1, obs.size()}, obs));
}

Tensor WorldModel::dynamics(const Tensor& z, const Tensor& a) const {
    ad::NoGradGuard guard;
    return dynamics(ad::constant(z), ad::constant(a)).value();
}

std::vector<double> WorldModel::reward(const Tensor& z, const Tensor& a) const {
    ad::NoGradGuard guard;
    return two_hot_.decode_logits(reward_logits(ad::constant(z), ad::constant(a)).value());
}

std::vector<double> WorldModel::value_scalar(const Tensor& z, bool target) const {
    ad::NoGradGuard guard;
    const auto zc = ad::constant(z);
    std::vector<double> out;
    for (std::size_t h = 0; h < values_.size(); ++h) {
        const auto v = two_hot_.decode_logits(value_logits(zc, h, target).value());
        if (h == 0) {
            out = v;
        } else {
            for (std::size_t i = 0; i < out.size(); ++i) {
                out[i] = std::min(out[i], v[i]);
            }
        }
    }
    return out;
}

std::vector<DiagGaussian> WorldModel::policy_distributions(const Tensor& z) const {
    const auto p = prior(z);
    const std::size_t m = config_.action_dim;
    std::vector<DiagGaussian> out(z.rows());
    for (std::size_t r = 0; r < z.rows(); ++r) {
        out[r].mean.assign(p.mean.data() + r * m, p.mean.data() + (r + 1) * m);
        out[r].log_std.assign(p.log_std.data() + r * m, p.log_std.data() + (r + 1) * m);
    }
    return out;
}

LatentModel::Transition WorldModel::transition(const Tensor& z, const Tensor& a) const {
    ad::NoGradGuard guard;
    check_actions(a);
    const auto za = ad::concat_cols(ad::constant(z), ad::constant(a));
    Transition t;
    t.next = run_mlp(dynamics_, za, params_, dynamics_.prefix).value();
    t.reward = two_hot_.decode_logits(run_mlp(reward_, za, params_, reward_.prefix).value());
    return t;
}

LatentModel::Prior WorldModel::prior(const Tensor& z) const {
    ad::NoGradGuard guard;
    const auto head = policy(ad::constant(z));
    return {head.mean.value(), head.log_std.value()};
}

WorldModel WorldModel::clone() const {
    return WorldModel(config_, params_.clone(), target_values_.clone());
}

void WorldModel::assign(const WorldModel& other) {
    params_.assign(other.params_);
    target_values_.assign(other.target_values_);
}

void WorldModel::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("checkpoint: cannot open " + path.string() + " for writing");
    }
    std::ostringstream header;
    for (const auto& [k, v] : config_.to_kv()) {
        header << k << '=' << v << '\n';
    }
    const std::string text = header.str();
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    out.write(reinterpret_cast<const char*>(&kCheckpointVersion), sizeof(kCheckpointVersion));
    const auto len = static_cast<std::uint32_t>(text.size());
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    params_.write(out);
    target_values_.write(out);
    out.flush();
    if (!out) {
        throw std::runtime_error("checkpoint: write to " + path.string() + " failed");
    }
}

WorldModel WorldModel::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("checkpoint: cannot open " + path.string());
    }
    char magic[sizeof(kCheckpointMagic)];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
        throw std::runtime_error("checkpoint: " + path.string() + " is not a checkpoint");
    }
    std::uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    if (version != kCheckpointVersion) {
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    }
    std::uint32_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string text(len, '\0');
    in.read(text.data(), len);
    if (!in) {
        throw std::runtime_error("checkpoint: truncated header");
    }
    std::map<std::string, std::string> kv;
    std::istringstream lines(text);
    for (std::string line; std::getline(lines, line);) {
        const auto eq = line.find('=');
        if (eq != std::string::npos) {
            kv[line.substr(0, eq)] = line.substr(eq + 1);
        }
    }
    auto config = ModelConfig::from_kv(kv);
    auto params = ParameterSet::read(in);
    auto targets = ParameterSet::read(in);
    WorldModel model(config, std::move(params), std::move(targets));
    // Layout check: every expected parameter exists with the right shape.
    WorldModel reference(config, 0);
    auto check = [&](const ParameterSet& expected, const ParameterSet& got, const char* what) {
        if (expected.size() != got.size()) {
            throw std::runtime_error(std::string("checkpoint: ") + what + " holds " +
                                     std::to_string(got.size()) + " tensors, expected " +
                                     std::to_string(expected.size()));
        }
        for (const auto& p : expected.params()) {
            if (!got.contains(p.name())) {
                throw std::runtime_error("checkpoint: missing parameter '" + p.name() + "'");
            }
            const auto& q = got.get(p.name());
            if (q.shape() != p.shape()) {
                throw std::runtime_error("checkpoint: parameter '" + p.name() + "' has shape " +
                                         shape_string(q.shape()) + ", expected " +
                                         shape_string(p.shape()));
            }
        }
    };
    check(reference.params_, model.params_, "parameter set");
    check(reference.target_values_, model.target_values_, "target set");
    return model;
}

}  // namespace bmpc
