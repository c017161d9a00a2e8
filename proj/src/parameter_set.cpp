#include "bmpc/parameter_set.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace bmpc {
namespace {

constexpr char kMagic[8] = {'B', 'M', 'P', 'C', 'P', 'A', 'R', 'M'};
constexpr std::uint32_t kFormatVersion = 1;

class CrcWriter {
public:
    explicit CrcWriter(std::ostream& out) : out_(out) {}
    void bytes(const void* data, std::size_t n) {
        crc_ = crc32(crc_, static_cast<const Bytef*>(data), static_cast<uInt>(n));
        out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    }
    template <typename T>
    void pod(T v) {
        bytes(&v, sizeof(T));
    }
    std::uint32_t crc() const { return static_cast<std::uint32_t>(crc_); }

private:
    std::ostream& out_;
    uLong crc_ = crc32(0L, Z_NULL, 0);
};

class CrcReader {
public:
    explicit CrcReader(std::istream& in) : in_(in) {}
    void bytes(void* data, std::size_t n) {
        in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
        if (!in_ || static_cast<std::size_t>(in_.gcount()) != n) {
            throw std::runtime_error("parameter set: truncated stream");
        }
        crc_ = crc32(crc_, static_cast<const Bytef*>(data), static_cast<uInt>(n));
    }
    template <typename T>
    T pod() {
        T v{};
        bytes(&v, sizeof(T));
        return v;
    }
    std::uint32_t crc() const { return static_cast<std::uint32_t>(crc_); }

private:
    std::istream& in_;
    uLong crc_ = crc32(0L, Z_NULL, 0);
};

}  // namespace

ad::Var ParameterSet::add(std::string name, Tensor value) {
    if (contains(name)) {
        throw std::invalid_argument("parameter set: duplicate name '" + name + "'");
    }
    auto var = ad::parameter(std::move(value), std::move(name));
    params_.push_back(var);
    return var;
}

const ad::Var& ParameterSet::get(const std::string& name) const {
    for (const auto& p : params_) {
        if (p.name() == name) {
            return p;
        }
    }
    throw std::out_of_range("parameter set: no parameter named '" + name + "'");
}

bool ParameterSet::contains(const std::string& name) const {
    return std::any_of(params_.begin(), params_.end(),
                       [&](const ad::Var& p) { return p.name() == name; });
}

std::size_t ParameterSet::numel() const {
    std::size_t n = 0;
    for (const auto& p : params_) {
        n += p.value().size();
    }
    return n;
}

std::vector<std::string> ParameterSet::names() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (const auto& p : params_) {
        out.push_back(p.name());
    }
    return out;
}

void ParameterSet::zero_grad() {
    for (auto& p : params_) {
        p.zero_grad();
    }
}

double ParameterSet::grad_norm() const {
    double sq = 0.0;
    for (const auto& p : params_) {
        for (double g : p.grad().values()) {
            sq += g * g;
        }
    }
    return std::sqrt(sq);
}

ParameterSet ParameterSet::clone() const {
    ParameterSet out;
    for (const auto& p : params_) {
        out.add(p.name(), p.value());
    }
    return out;
}

void ParameterSet::assign(const ParameterSet& other) {
    if (other.size() != size()) {
        throw std::invalid_argument("parameter set: assign between sets of different size");
    }
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& dst = params_[i];
        const auto& src = other.params_[i];
        if (dst.name() != src.name() || dst.shape() != src.shape()) {
            throw std::invalid_argument("parameter set: assign mismatch at '" + dst.name() +
                                        "' " + shape_string(dst.shape()) + " vs '" +
                                        src.name() + "' " + shape_string(src.shape()));
        }
        dst.mutable_value() = src.value();
    }
}

ParameterSet ParameterSet::subset(const std::string& prefix) const {
    ParameterSet out;
    for (const auto& p : params_) {
        if (p.name().rfind(prefix, 0) == 0) {
            out.params_.push_back(p);
        }
    }
    return out;
}

void ParameterSet::write(std::ostream& out) const {
    CrcWriter w(out);
    w.bytes(kMagic, sizeof(kMagic));
    w.pod<std::uint32_t>(kFormatVersion);
    w.pod<std::uint64_t>(params_.size());
    for (const auto& p : params_) {
        w.pod<std::uint32_t>(static_cast<std::uint32_t>(p.name().size()));
        w.bytes(p.name().data(), p.name().size());
        w.pod<std::uint32_t>(static_cast<std::uint32_t>(p.shape().size()));
        for (auto e : p.shape()) {
            w.pod<std::uint64_t>(e);
        }
        w.bytes(p.value().data(), p.value().size() * sizeof(double));
    }
    const std::uint32_t crc = w.crc();
    out.write(reinterpret_cast<const char*>(&crc), sizeof(crc));
    if (!out) {
        throw std::runtime_error("parameter set: write failed");
    }
}

ParameterSet ParameterSet::read(std::istream& in) {
    CrcReader r(in);
    char magic[sizeof(kMagic)];
    r.bytes(magic, sizeof(magic));
    if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw std::runtime_error("parameter set: bad magic");
    }
    const auto version = r.pod<std::uint32_t>();
    if (version != kFormatVersion) {
        throw std::runtime_error("parameter set: unsupported format version " +
                                 std::to_string(version));
    }
    const auto count = r.pod<std::uint64_t>();
    ParameterSet out;
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto name_len = r.pod<std::uint32_t>();
        std::string name(name_len, '\0');
        r.bytes(name.data(), name_len);
        const auto rank = r.pod<std::uint32_t>();
        if (rank > 8) {
            throw std::runtime_error("parameter set: implausible rank for '" + name + "'");
        }
        std::vector<std::size_t> shape(rank);
        for (auto& e : shape) {
            e = static_cast<std::size_t>(r.pod<std::uint64_t>());
        }
        Tensor value(shape);
        r.bytes(value.data(), value.size() * sizeof(double));
        out.add(std::move(name), std::move(value));
    }
    const std::uint32_t expected = r.crc();
    std::uint32_t stored = 0;
    in.read(reinterpret_cast<char*>(&stored), sizeof(stored));
    if (!in) {
        throw std::runtime_error("parameter set: missing checksum trailer");
    }
    if (stored != expected) {
        throw std::runtime_error("parameter set: checksum mismatch");
    }
    return out;
}

AdamOptimizer::AdamOptimizer(const ParameterSet& params) : AdamOptimizer(params, Options{}) {}

AdamOptimizer::AdamOptimizer(const ParameterSet& params, Options options)
    : params_(params.params()), options_(options) {
    moments_.reserve(params_.size());
    for (const auto& p : params_) {
        moments_.push_back({std::vector<double>(p.value().size(), 0.0),
                            std::vector<double>(p.value().size(), 0.0)});
    }
}

ParameterSet AdamOptimizer::state() const {
    ParameterSet out;
    Tensor steps(std::vector<std::size_t>{1});
    steps.values()[0] = static_cast<double>(steps_);
    out.add("adam.steps", std::move(steps));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor m(params_[i].shape());
        Tensor v(params_[i].shape());
        m.values() = moments_[i].first;
        v.values() = moments_[i].second;
        out.add("adam.m/" + params_[i].name(), std::move(m));
        out.add("adam.v/" + params_[i].name(), std::move(v));
    }
    return out;
}

void AdamOptimizer::load_state(const ParameterSet& state) {
    if (state.size() != 1 + 2 * params_.size()) {
        throw std::invalid_argument("adam: state holds " + std::to_string(state.size()) +
                                    " arrays, expected " + std::to_string(1 + 2 * params_.size()));
    }
    std::vector<Moments> moments(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const auto& name = params_[i].name();
        const auto& m = state.get("adam.m/" + name);
        const auto& v = state.get("adam.v/" + name);
        if (m.shape() != params_[i].shape() || v.shape() != params_[i].shape()) {
            throw std::invalid_argument("adam: state shape mismatch for '" + name + "'");
        }
        moments[i] = {m.value().values(), v.value().values()};
    }
    moments_ = std::move(moments);
    steps_ = static_cast<std::int64_t>(state.get("adam.steps").value().values().at(0));
}

double AdamOptimizer::step(double lr) {
    double sq = 0.0;
    for (const auto& p : params_) {
        for (double g : p.grad().values()) {
            if (!std::isfinite(g)) {
                throw std::runtime_error("adam: non-finite gradient in parameter '" + p.name() +
                                         "'");
            }
            sq += g * g;
        }
    }
    const double norm = std::sqrt(sq);
    const double clip = (options_.max_grad_norm > 0.0 && norm > options_.max_grad_norm)
                            ? options_.max_grad_norm / (norm + 1e-6)
                            : 1.0;
    ++steps_;
    const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(steps_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i];
        const Tensor& g = p.grad();
        Tensor& v = p.mutable_value();
        auto& m = moments_[i];
        for (std::size_t j = 0; j < v.size(); ++j) {
            const double gj = g[j] * clip;
            m.first[j] = options_.beta1 * m.first[j] + (1.0 - options_.beta1) * gj;
            m.second[j] = options_.beta2 * m.second[j] + (1.0 - options_.beta2) * gj * gj;
            const double mhat = m.first[j] / bc1;
            const double vhat = m.second[j] / bc2;
            v[j] -= lr * mhat / (std::sqrt(vhat) + options_.eps);
        }
    }
    return norm;
}

void ema_update(const ParameterSet& online, const ParameterSet& target, double rate) {
    if (online.size() != target.size()) {
        throw std::invalid_argument("ema_update: parameter count mismatch");
    }
    for (std::size_t i = 0; i < online.size(); ++i) {
        const auto& src = online.params()[i];
        auto dst = target.params()[i];
        if (src.name() != dst.name() || src.shape() != dst.shape()) {
            throw std::invalid_argument("ema_update: mismatch at '" + dst.name() + "' " +
                                        shape_string(dst.shape()) + " vs '" + src.name() +
                                        "' " + shape_string(src.shape()));
        }
        Tensor& t = dst.mutable_value();
        for (std::size_t j = 0; j < t.size(); ++j) {
            t[j] = (1.0 - rate) * t[j] + rate * src.value()[j];
        }
    }
}

}  // namespace bmpc
