#include <doctest.h>

#include <cmath>
#include <sstream>

#include "bmpc/parameter_set.hpp"
#include "support.hpp"

using namespace bmpc;

namespace {

ParameterSet sample_set(std::mt19937_64& rng) {
    ParameterSet ps;
    ps.add("layer.weight", testing::random_tensor({3, 4}, rng));
    ps.add("layer.bias", testing::random_tensor({4}, rng));
    ps.add("scalar", Tensor::scalar(0.25));
    return ps;
}

}  // namespace

TEST_CASE("names are unique") {
    ParameterSet ps;
    ps.add("w", Tensor::scalar(1.0));
    CHECK_THROWS_AS(ps.add("w", Tensor::scalar(2.0)), std::invalid_argument);
    CHECK(ps.contains("w"));
    CHECK_FALSE(ps.contains("v"));
    CHECK_THROWS(ps.get("v"));
}

TEST_CASE("binary round trip is exact") {
    std::mt19937_64 rng(1);
    const auto ps = sample_set(rng);
    std::stringstream buf;
    ps.write(buf);
    const auto back = ParameterSet::read(buf);
    REQUIRE(back.names() == ps.names());
    for (std::size_t i = 0; i < ps.size(); ++i) {
        CHECK(back.params()[i].shape() == ps.params()[i].shape());
        CHECK(back.params()[i].value().values() == ps.params()[i].value().values());
    }
}

TEST_CASE("corrupted payload fails the checksum") {
    std::mt19937_64 rng(2);
    const auto ps = sample_set(rng);
    std::stringstream buf;
    ps.write(buf);
    std::string bytes = buf.str();
    bytes[bytes.size() / 2] ^= 0x40;
    std::stringstream bad(bytes);
    CHECK_THROWS_AS(ParameterSet::read(bad), std::runtime_error);

    std::stringstream truncated(buf.str().substr(0, buf.str().size() - 7));
    CHECK_THROWS_AS(ParameterSet::read(truncated), std::runtime_error);

    std::stringstream garbage("not a parameter file at all");
    CHECK_THROWS_AS(ParameterSet::read(garbage), std::runtime_error);
}

TEST_CASE("clone is independent and assign checks layout") {
    std::mt19937_64 rng(3);
    auto ps = sample_set(rng);
    auto copy = ps.clone();
    copy.get("scalar").node()->value[0] = 9.0;
    CHECK(ps.get("scalar").item() == 0.25);
    ps.assign(copy);
    CHECK(ps.get("scalar").item() == 9.0);

    ParameterSet other;
    other.add("layer.weight", Tensor::matrix(4, 3));
    CHECK_THROWS_AS(ps.assign(other), std::invalid_argument);
}

TEST_CASE("subset shares nodes") {
    std::mt19937_64 rng(4);
    auto ps = sample_set(rng);
    auto sub = ps.subset("layer.");
    CHECK(sub.size() == 2);
    sub.get("layer.bias").node()->value[0] = 42.0;
    CHECK(ps.get("layer.bias").value()[0] == 42.0);
}

TEST_CASE("adam leaves parameters unchanged under zero gradients") {
    std::mt19937_64 rng(5);
    auto ps = sample_set(rng);
    const auto before = ps.clone();
    AdamOptimizer opt(ps);
    ps.zero_grad();
    for (int i = 0; i < 3; ++i) {
        CHECK(opt.step(1e-2) == 0.0);
    }
    for (std::size_t i = 0; i < ps.size(); ++i) {
        CHECK(ps.params()[i].value().values() == before.params()[i].value().values());
    }
    CHECK(opt.step_count() == 3);
}

TEST_CASE("adam first step moves by about lr against the gradient sign") {
    for (double g : {-3.0, 0.02, 250.0}) {
        ParameterSet ps;
        auto x = ps.add("x", Tensor::scalar(1.0));
        AdamOptimizer opt(ps, {.max_grad_norm = 0.0});
        x.mutable_grad()[0] = g;
        opt.step(1e-3);
        CHECK(x.item() - 1.0 == doctest::Approx(-1e-3 * (g > 0 ? 1.0 : -1.0)).epsilon(1e-4));
    }
}

TEST_CASE("adam converges on a quadratic bowl") {
    ParameterSet ps;
    auto x = ps.add("x", Tensor::scalar(0.0));
    const double target = 1.3;
    AdamOptimizer opt(ps);
    for (int i = 0; i < 500; ++i) {
        ps.zero_grad();
        ad::backward(ad::square(ad::add_scalar(x, -target)));
        opt.step(1e-2);
    }
    CHECK(std::fabs(x.item() - target) < 1e-3);
}

TEST_CASE("adam clips by global norm and reports the unclipped norm") {
    ParameterSet ps;
    auto a = ps.add("a", Tensor::scalar(0.0));
    auto b = ps.add("b", Tensor::scalar(0.0));
    AdamOptimizer opt(ps);
    a.mutable_grad()[0] = 30.0;
    b.mutable_grad()[0] = 40.0;
    CHECK(opt.step(1e-3) == doctest::Approx(50.0));
}

TEST_CASE("adam names the parameter holding a NaN gradient") {
    std::mt19937_64 rng(6);
    auto ps = sample_set(rng);
    AdamOptimizer opt(ps);
    ps.zero_grad();
    ps.get("layer.bias").node()->grad_buffer()[1] = std::nan("");
    try {
        opt.step(1e-3);
        FAIL("expected an error");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("layer.bias") != std::string::npos);
    }
}

TEST_CASE("ema update arithmetic") {
    ParameterSet online;
    online.add("w", Tensor::vector({1.0, 1.0}));
    auto target = online.clone();
    target.get("w").node()->value.fill(0.0);

    ema_update(online, target, 0.01);
    ema_update(online, target, 0.01);
    CHECK(target.get("w").value()[0] == doctest::Approx(0.0199).epsilon(1e-12));

    ema_update(online, target, 0.0);
    CHECK(target.get("w").value()[0] == doctest::Approx(0.0199).epsilon(1e-12));
    ema_update(online, target, 1.0);
    CHECK(target.get("w").value()[0] == 1.0);

    ParameterSet wrong;
    wrong.add("w", Tensor::vector({1.0, 2.0, 3.0}));
    CHECK_THROWS_AS(ema_update(online, wrong, 0.5), std::invalid_argument);
}

TEST_CASE("identical seeds give bit-identical optimization trajectories") {
    auto run = [] {
        std::mt19937_64 rng(77);
        auto ps = sample_set(rng);
        AdamOptimizer opt(ps);
        const auto x = ad::constant(testing::random_tensor({5, 3}, rng));
        for (int i = 0; i < 20; ++i) {
            ps.zero_grad();
            const auto h = ad::tanh(ad::add_bias(ad::matmul(x, ps.get("layer.weight")), ps.get("layer.bias")));
            ad::backward(ad::mul(ad::sum(ad::square(h)), ps.get("scalar")));
            opt.step(1e-2);
        }
        std::vector<double> flat;
        for (const auto& p : ps.params()) {
            flat.insert(flat.end(), p.value().values().begin(), p.value().values().end());
        }
        return flat;
    };
    CHECK(run() == run());
}
