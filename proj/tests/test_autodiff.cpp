#include "enercast/autodiff.hpp"

#include "enercast/errors.hpp"
#include "enercast/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <vector>

using namespace enercast;
using ad::DiffScalar;
using ad::Tape;

TEST_CASE("basic partials") {
    Tape tape;
    const DiffScalar x = tape.leaf(3.0);
    const DiffScalar y = x * x;
    CHECK(y.value() == doctest::Approx(9.0));
    const auto adj = tape.backward(y);
    CHECK(adj[x.id()] == doctest::Approx(6.0));
}

TEST_CASE("softplus derivative at zero is a half") {
    Tape tape;
    const DiffScalar x = tape.leaf(0.0);
    const DiffScalar y = ad::softplus(x);
    CHECK(y.value() == doctest::Approx(std::log(2.0)));
    const auto adj = tape.backward(y);
    CHECK(adj[x.id()] == doctest::Approx(0.5));
}

TEST_CASE("daily harmonic gradient w.r.t. the first sine coefficient") {
    // At H = 6 the first-harmonic sine is sin(pi/2) = 1.
    Tape tape;
    const double h = 6.0;
    const double a1v = 2.0 * 3.14159265358979323846 * h / 24.0;
    const DiffScalar a1 = tape.leaf(-150.0);
    const DiffScalar a1c = tape.leaf(136.0);
    const DiffScalar a2 = tape.leaf(84.0);
    const DiffScalar a2c = tape.leaf(7.0);
    const DiffScalar e_daily = a1 * std::sin(a1v) + a1c * std::cos(a1v) +
                               a2 * std::sin(2 * a1v) + a2c * std::cos(2 * a1v);
    const auto adj = tape.backward(e_daily);
    CHECK(adj[a1.id()] == doctest::Approx(1.0));
    CHECK(adj[a1c.id()] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("backward base cases") {
    Tape tape;
    const DiffScalar a = tape.leaf(1.5);
    const auto adj_root = tape.backward(a);
    CHECK(adj_root[a.id()] == doctest::Approx(1.0));

    Tape tape2;
    std::vector<DiffScalar> leaves;
    for (int i = 0; i < 7; ++i) leaves.push_back(tape2.leaf(i));
    const DiffScalar unreachable = tape2.leaf(42.0);
    const DiffScalar sum = ad::pairwise_sum(leaves);
    const auto adj = tape2.backward(sum);
    for (const auto& l : leaves) CHECK(adj[l.id()] == doctest::Approx(1.0));
    CHECK(adj[unreachable.id()] == 0.0);
}

TEST_CASE("backward is linear in the root") {
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        Tape tape;
        const DiffScalar x = tape.leaf(0.5 + rng.uniform());
        const DiffScalar y = tape.leaf(0.5 + rng.uniform());
        const DiffScalar f = ad::exp(x) * ad::sin(y) + x / y;
        const DiffScalar g = ad::log(x * y) - ad::cos(x);
        const double a = rng.normal();
        const double b = rng.normal();
        const DiffScalar combo = f * a + g * b;
        const auto adj_f = tape.backward(f);
        const auto adj_g = tape.backward(g);
        const auto adj_c = tape.backward(combo);
        for (const DiffScalar& leaf : {x, y}) {
            CHECK(adj_c[leaf.id()] ==
                  doctest::Approx(a * adj_f[leaf.id()] + b * adj_g[leaf.id()]).epsilon(1e-12));
        }
    }
}

TEST_CASE("chain rule matches finite differences on random compositions") {
    Rng rng(11);
    int checked = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const double p0 = 0.3 + 2.0 * rng.uniform();
        const double p1 = 0.3 + 2.0 * rng.uniform();
        const double p2 = -1.0 + 2.0 * rng.uniform();
        const std::vector<double> point = {p0, p1, p2};
        const int variant = static_cast<int>(rng.below(4));
        const auto builder = [variant](Tape& t, std::span<const DiffScalar> v) {
            switch (variant) {
                case 0:
                    return ad::exp(ad::sin(v[0]) * v[1]) + ad::sqrt(v[0] + v[1]) * v[2];
                case 1:
                    return ad::log(v[0] * v[1] + 2.0) / (v[0] + 1.0) - ad::cos(v[2] * v[1]);
                case 2:
                    return ad::softplus(v[2] * 3.0 - v[0]) * ad::lgamma(v[0] + v[1]);
                default:
                    return ad::abs(v[2]) * v[0] + ad::square(v[1] - 0.5) / ad::sqrt(v[0]);
            }
        };
        if (variant == 3 && std::abs(p2) < 1e-3) continue;  // keep away from the kink
        const double err = ad::check_gradients(builder, point, 1e-5);
        CHECK(err <= 1e-4);
        ++checked;
    }
    CHECK(checked >= 95);
}

TEST_CASE("scalars from different tapes are rejected") {
    Tape t1, t2;
    const DiffScalar a = t1.leaf(1.0);
    const DiffScalar b = t2.leaf(2.0);
    CHECK_THROWS_AS(a + b, EvaluationError);
    CHECK_THROWS_AS(a * b, EvaluationError);
    CHECK_THROWS_AS(t2.backward(a), EvaluationError);
}

TEST_CASE("indicator contributes zero gradient") {
    Tape tape;
    const DiffScalar x = tape.leaf(2.5);
    const DiffScalar y = tape.leaf(3.0);
    const DiffScalar out = ad::indicator_positive(x - 1.0) * y;
    CHECK(out.value() == doctest::Approx(3.0));
    const auto adj = tape.backward(out);
    CHECK(adj[x.id()] == 0.0);
    CHECK(adj[y.id()] == doctest::Approx(1.0));
}

TEST_CASE("domain violations identify the node") {
    Tape tape;
    const DiffScalar x = tape.leaf(-1.0);
    CHECK_THROWS_WITH_AS(ad::log(x), doctest::Contains("node"), EvaluationError);
    CHECK_THROWS_AS(ad::sqrt(x), EvaluationError);
    CHECK_THROWS_AS(ad::lgamma(x), EvaluationError);
    const DiffScalar zero = tape.leaf(0.0);
    CHECK_THROWS_AS(x / zero, EvaluationError);
}

TEST_CASE("check_gradients on a quadratic is exact to FD truncation") {
    const std::vector<double> point = {1.2, -0.7};
    const double err = ad::check_gradients(
        [](Tape&, std::span<const DiffScalar> v) {
            return v[0] * v[0] * 3.0 + v[0] * v[1] + v[1] * v[1];
        },
        point, 1e-5);
    CHECK(err <= 1e-9);
}

TEST_CASE("check_gradients against the Gaussian score") {
    // d/dmu of the Normal log-density is (x - mu)/sigma^2.
    const double x_obs = 1.3, sigma = 2.0;
    const std::vector<double> point = {0.4};
    Tape tape;
    const auto mu = tape.leaves(point);
    const DiffScalar logpdf =
        (ad::square((mu[0] - x_obs) * (1.0 / sigma))) * -0.5 - std::log(sigma) -
        0.9189385332046727;
    const auto adj = tape.backward(logpdf);
    const double closed_form = (x_obs - point[0]) / (sigma * sigma);
    CHECK(adj[mu[0].id()] == doctest::Approx(closed_form).epsilon(1e-12));

    const double err = ad::check_gradients(
        [&](Tape&, std::span<const DiffScalar> v) {
            return (ad::square((v[0] - x_obs) * (1.0 / sigma))) * -0.5 - std::log(sigma) -
                   0.9189385332046727;
        },
        point, 1e-5);
    CHECK(err <= 1e-6);
}

TEST_CASE("check_gradients across a non-straddled indicator") {
    const std::vector<double> point = {2.0, 5.0};
    const double err = ad::check_gradients(
        [](Tape&, std::span<const DiffScalar> v) {
            return ad::indicator_positive(v[0] - 1.0) * v[1] * 2.0 + ad::square(v[0]);
        },
        point, 1e-5);
    CHECK(err <= 1e-4);
}

TEST_CASE("lgamma derivative equals digamma") {
    CHECK(ad::digamma_value(1.0) == doctest::Approx(-0.57721566490153286).epsilon(1e-10));
    CHECK(ad::digamma_value(0.5) ==
          doctest::Approx(-0.57721566490153286 - 2.0 * std::log(2.0)).epsilon(1e-10));
    Rng rng(3);
    for (int i = 0; i < 50; ++i) {
        const double x = 0.05 + 20.0 * rng.uniform();
        const double h = 1e-6 * std::max(1.0, x);
        const double fd = (std::lgamma(x + h) - std::lgamma(x - h)) / (2.0 * h);
        CHECK(ad::digamma_value(x) == doctest::Approx(fd).epsilon(1e-6));
    }
}

TEST_CASE("softplus floor keeps large inputs identical and small ones positive") {
    CHECK(ad::softplus_floor_value(5.1, 0.01, 0.1) == doctest::Approx(5.1).epsilon(1e-12));
    CHECK(ad::softplus_floor_value(2.5, 0.01, 0.1) == doctest::Approx(2.5).epsilon(1e-12));
    CHECK(ad::softplus_floor_value(-40.0, 0.01, 0.1) == doctest::Approx(0.01).epsilon(1e-9));
    Rng rng(5);
    for (int i = 0; i < 200; ++i) {
        const double x = -20.0 + 40.0 * rng.uniform();
        CHECK(ad::softplus_floor_value(x, 0.01, 0.1) >= 0.01);
    }
}

TEST_CASE("pairwise_sum equals sequential sum") {
    Rng rng(6);
    std::vector<double> values;
    double seq = 0.0;
    for (int i = 0; i < 1001; ++i) {
        values.push_back(rng.normal());
        seq += values.back();
    }
    CHECK(ad::pairwise_sum(values) == doctest::Approx(seq).epsilon(1e-12));

    Tape tape;
    std::vector<DiffScalar> nodes;
    for (double v : values) nodes.push_back(tape.leaf(v));
    CHECK(ad::pairwise_sum(nodes).value() == doctest::Approx(seq).epsilon(1e-12));
}
