#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include "bmpc/gaussian.hpp"
#include "bmpc/two_hot.hpp"

using namespace bmpc;

TEST_CASE("kl of identical gaussians is zero") {
    const DiagGaussian p{{0.3, -0.2}, {-1.0, 0.5}};
    CHECK(kl_diag_gaussian(p, p) == 0.0);
}

TEST_CASE("kl with unit variances is half the squared mean gap") {
    CHECK(kl_diag_gaussian({{0.0}, {0.0}}, {{1.0}, {0.0}}) == doctest::Approx(0.5));
}

TEST_CASE("kl closed form against a direct one-dimensional formula") {
    // KL = ln(s_q/s_p) + (s_p^2 + (m_p - m_q)^2) / (2 s_q^2) - 1/2
    const double sp = 0.5, sq = 2.0, mp = 0.1, mq = -0.4;
    const double expected = std::log(sq / sp) + (sp * sp + (mp - mq) * (mp - mq)) / (2 * sq * sq) - 0.5;
    CHECK(kl_diag_gaussian({{mp}, {std::log(sp)}}, {{mq}, {std::log(sq)}}) ==
          doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("kl rejects mismatched dimensions") {
    CHECK_THROWS_AS(kl_diag_gaussian({{0.0}, {0.0}}, {{0.0, 1.0}, {0.0, 0.0}}), std::invalid_argument);
}

TEST_CASE("kl is non-negative and additive over dimensions") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> mean(-1.0, 1.0), ls(-3.0, 1.0);
    for (int i = 0; i < 500; ++i) {
        DiagGaussian p{{mean(rng), mean(rng)}, {ls(rng), ls(rng)}};
        DiagGaussian q{{mean(rng), mean(rng)}, {ls(rng), ls(rng)}};
        const double joint = kl_diag_gaussian(p, q);
        const double split = kl_diag_gaussian({{p.mean[0]}, {p.log_std[0]}}, {{q.mean[0]}, {q.log_std[0]}}) +
                             kl_diag_gaussian({{p.mean[1]}, {p.log_std[1]}}, {{q.mean[1]}, {q.log_std[1]}});
        CHECK(joint >= 0.0);
        CHECK(joint == doctest::Approx(split).epsilon(1e-12));
    }
}

TEST_CASE("entropy and log density") {
    const DiagGaussian g{{0.0}, {0.0}};
    CHECK(entropy_diag_gaussian(g) == doctest::Approx(0.5 * std::log(2 * std::numbers::pi * std::numbers::e)));
    CHECK(log_prob_diag_gaussian(g, {0.0}) == doctest::Approx(-0.5 * std::log(2 * std::numbers::pi)));
    const auto u = uniform_action_moments(3);
    CHECK(u.dim() == 3);
    CHECK(std::exp(u.log_std[1]) == doctest::Approx(1.0 / std::sqrt(3.0)));
}

TEST_CASE("symlog and symexp are inverse") {
    for (double v : {-500.0, -1.0, -1e-6, 0.0, 0.3, 7.0, 2e4}) {
        CHECK(symexp(symlog(v)) == doctest::Approx(v).epsilon(1e-12));
    }
}

TEST_CASE("two-hot: bin centers encode one-hot and decode exactly") {
    const TwoHot th(101, -10.0, 10.0);
    for (std::size_t i = 0; i < th.bins(); ++i) {
        const double c = th.center(i);
        const auto p = th.encode(symexp(c));
        std::size_t nonzero = 0;
        for (double v : p) {
            nonzero += v != 0.0 ? 1 : 0;
        }
        CHECK(nonzero == 1);
        CHECK(p[i] == 1.0);
        CHECK(th.decode_transformed(p) == doctest::Approx(c).epsilon(1e-12));
    }
}

TEST_CASE("two-hot round trip in transformed space") {
    const TwoHot th(101, -10.0, 10.0);
    std::mt19937_64 rng(10);
    std::uniform_real_distribution<double> u(-10.0, 10.0);
    for (int i = 0; i < 1000; ++i) {
        const double t = u(rng);
        const auto p = th.encode(symexp(t));
        CHECK(std::fabs(th.decode_transformed(p) - t) < 1e-9);
        double mass = 0.0;
        for (double v : p) {
            CHECK(v >= 0.0);
            mass += v;
        }
        CHECK(mass == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("two-hot clamps out-of-range values and rejects NaN") {
    const TwoHot th(11, -2.0, 2.0);
    const auto low = th.encode(-1e9);
    CHECK(low.front() == 1.0);
    const auto high = th.encode(1e9);
    CHECK(high.back() == 1.0);
    CHECK_THROWS_AS(th.encode(std::nan("")), std::invalid_argument);
}

TEST_CASE("zero logits decode to the midpoint of symmetric bins") {
    const TwoHot th(101, -10.0, 10.0);
    const auto v = th.decode_logits(Tensor::matrix(2, 101, 0.0));
    CHECK(std::fabs(v[0]) < 1e-12);
}
