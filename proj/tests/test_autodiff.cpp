#include <doctest.h>

#include <cmath>
#include <random>

#include "bmpc/autodiff.hpp"
#include "support.hpp"

using namespace bmpc;
using bmpc::testing::grad_check;
using bmpc::testing::random_tensor;

namespace {

ad::Var param(Tensor t, const char* name = "p") { return ad::parameter(std::move(t), name); }

}  // namespace

TEST_CASE("tanh at the origin") {
    auto x = param(Tensor::scalar(0.0));
    auto y = ad::tanh(x);
    CHECK(y.item() == 0.0);
    ad::backward(y);
    CHECK(x.grad().item() == doctest::Approx(1.0));
}

TEST_CASE("cross entropy of uniform logits against a one-hot target is ln 4") {
    auto logits = param(Tensor::matrix(1, 4, 0.3));
    Tensor target = Tensor::matrix(1, 4);
    target[2] = 1.0;
    const auto ce = ad::cross_entropy(logits, target);
    CHECK(ce.value()[0] == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("sum gives unit gradients and zero scaling gives zero gradients") {
    auto p = param(Tensor::matrix(2, 3, 1.5));
    ad::backward(ad::sum(p));
    for (double g : p.grad().values()) {
        CHECK(g == 1.0);
    }
    p.zero_grad();
    ad::backward(ad::sum(ad::scale(p, 0.0)));
    for (double g : p.grad().values()) {
        CHECK(g == 0.0);
    }
}

TEST_CASE("second backward without zeroing doubles the gradients exactly") {
    std::mt19937_64 rng(3);
    auto w = param(random_tensor({3, 2}, rng), "w");
    auto x = ad::constant(random_tensor({4, 3}, rng));
    const auto loss = ad::sum(ad::tanh(ad::matmul(x, w)));
    ad::backward(loss);
    const Tensor first = w.grad();
    ad::backward(loss);
    for (std::size_t i = 0; i < first.size(); ++i) {
        CHECK(w.grad()[i] == 2.0 * first[i]);
    }
}

TEST_CASE("shared subexpressions accumulate") {
    auto x = param(Tensor::scalar(0.7));
    ad::backward(ad::add(x, x));
    CHECK(x.grad().item() == 2.0);
}

TEST_CASE("backward rejects a non-scalar loss") {
    auto p = param(Tensor::matrix(2, 2, 1.0));
    CHECK_THROWS_AS(ad::backward(ad::tanh(p)), std::invalid_argument);
}

TEST_CASE("shape mismatch names both shapes") {
    auto a = param(Tensor::matrix(2, 3));
    auto b = param(Tensor::matrix(3, 2));
    try {
        ad::add(a, b);
        FAIL("expected a shape error");
    } catch (const std::invalid_argument& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2, 3]") != std::string::npos);
        CHECK(msg.find("[3, 2]") != std::string::npos);
    }
    CHECK_THROWS_AS(ad::matmul(a, a), std::invalid_argument);
}

TEST_CASE("intermediate gradients are released after backward") {
    auto p = param(Tensor::matrix(2, 2, 0.5));
    auto hidden = ad::tanh(p);
    ad::backward(ad::sum(hidden));
    CHECK_FALSE(hidden.node()->has_grad());
    CHECK(p.node()->has_grad());
}

TEST_CASE("no-grad guard records no graph") {
    auto p = param(Tensor::matrix(2, 2, 0.5));
    ad::Var y;
    {
        ad::NoGradGuard guard;
        CHECK_FALSE(ad::grad_enabled());
        y = ad::tanh(p);
    }
    CHECK(ad::grad_enabled());
    CHECK_FALSE(y.requires_grad());
    CHECK(y.node()->parents.empty());
}

TEST_CASE("softmax rows sum to one and layer norm rows are standardized") {
    std::mt19937_64 rng(5);
    auto x = ad::constant(random_tensor({3, 6}, rng, 4.0));
    const auto s = ad::softmax(x);
    for (std::size_t r = 0; r < 3; ++r) {
        double total = 0.0;
        for (double v : s.value().row(r)) {
            total += v;
        }
        CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }
    const auto ln = ad::layer_norm(x, ad::constant(Tensor::vector(std::vector<double>(6, 1.0))),
                                   ad::constant(Tensor::vector(std::vector<double>(6, 0.0))));
    for (std::size_t r = 0; r < 3; ++r) {
        double mean = 0.0;
        double sq = 0.0;
        for (double v : ln.value().row(r)) {
            mean += v;
            sq += v * v;
        }
        CHECK(mean / 6.0 == doctest::Approx(0.0).epsilon(1e-12));
        CHECK(sq / 6.0 == doctest::Approx(1.0).epsilon(1e-4));
    }
}

// Finite-difference checks of every differentiable op on random inputs.
TEST_CASE("every op passes a central-difference gradient check") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 1 + rng() % 4;
        const std::size_t d = 2 + rng() % 5;
        auto a = param(random_tensor({n, d}, rng), "a");
        auto b = param(random_tensor({n, d}, rng), "b");
        auto w = param(random_tensor({d, 3}, rng), "w");
        auto bias = param(random_tensor({d}, rng), "bias");
        auto gain = param(random_tensor({d}, rng), "gain");
        auto pos = param(testing::uniform_tensor({n, d}, rng, 0.5, 2.0), "pos");
        Tensor probs = testing::uniform_tensor({n, d}, rng, 0.0, 1.0);
        for (std::size_t r = 0; r < n; ++r) {
            double s = 0.0;
            for (double v : probs.row(r)) {
                s += v;
            }
            for (double& v : probs.row(r)) {
                v /= s;
            }
        }
        const Tensor weights = random_tensor({n, d}, rng);
        // Weighted sum turns any [n, d] output into a scalar with a generic gradient.
        auto reduce = [&](const ad::Var& y) { return ad::sum(ad::mul(y, ad::constant(weights))); };
        const std::vector<std::pair<const char*, std::function<ad::Var()>>> cases = {
            {"add", [&] { return reduce(ad::add(a, b)); }},
            {"sub", [&] { return reduce(ad::sub(a, b)); }},
            {"mul", [&] { return reduce(ad::mul(a, b)); }},
            {"scale", [&] { return reduce(ad::scale(a, -1.7)); }},
            {"add_scalar", [&] { return reduce(ad::add_scalar(a, 0.3)); }},
            {"tanh", [&] { return reduce(ad::tanh(a)); }},
            {"sigmoid", [&] { return reduce(ad::sigmoid(a)); }},
            {"silu", [&] { return reduce(ad::silu(a)); }},
            {"softplus", [&] { return reduce(ad::softplus(a)); }},
            {"exp", [&] { return reduce(ad::exp(a)); }},
            {"log", [&] { return reduce(ad::log(pos)); }},
            {"square", [&] { return reduce(ad::square(a)); }},
            {"add_bias", [&] { return reduce(ad::add_bias(a, bias)); }},
            {"mean", [&] { return ad::mean(ad::mul(a, b)); }},
            {"sum_cols", [&] { return ad::sum(ad::mul(ad::sum_cols(ad::mul(a, b)), ad::sum_cols(a))); }},
            {"softmax", [&] { return reduce(ad::softmax(a)); }},
            {"log_softmax", [&] { return reduce(ad::log_softmax(a)); }},
            {"cross_entropy", [&] { return ad::sum(ad::cross_entropy(a, probs)); }},
            {"layer_norm", [&] { return reduce(ad::layer_norm(a, gain, bias)); }},
            {"concat_cols", [&] { return ad::sum(ad::square(ad::concat_cols(a, ad::tanh(b)))); }},
            {"slice_cols", [&] { return ad::sum(ad::square(ad::slice_cols(a, 1, d))); }},
            {"reshape", [&] { return ad::sum(ad::tanh(ad::reshape(a, {n * d}))); }},
        };
        for (const auto& [name, f] : cases) {
            const auto r = grad_check({a, b, bias, gain, pos}, f, rng);
            INFO(name << " trial " << trial << " worst " << r.worst_name << " analytic " << r.analytic
                      << " numeric " << r.numeric);
            CHECK(r.worst < 1e-4);
        }
        // matmul uses its own weights so shapes line up.
        const auto mm = grad_check(
            {a, w}, [&] { return ad::sum(ad::tanh(ad::matmul(a, w))); }, rng);
        INFO("matmul trial " << trial);
        CHECK(mm.worst < 1e-4);
    }
}

TEST_CASE("detach blocks gradient flow") {
    auto p = param(Tensor::matrix(2, 2, 0.3));
    ad::backward(ad::sum(ad::mul(ad::detach(p), p)));
    for (double g : p.grad().values()) {
        CHECK(g == doctest::Approx(0.3));
    }
}
