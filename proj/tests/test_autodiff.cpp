#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <functional>
#include <random>
#include <stdexcept>

#include "doctest.h"
#include "mdx/autodiff.hpp"
#include "mdx/model.hpp"
#include "mdx/scene.hpp"
#include "mdx/tensor.hpp"

using namespace mdx;

namespace {

Tensor random_tensor(std::vector<std::int64_t> shape, std::mt19937_64& rng, double lo = 0.1,
                     double hi = 1.0) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> dist(lo, hi);
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
    return t;
}

double max_rel_err(const Tensor& a, const Tensor& b) {
    REQUIRE(a.same_shape(b));
    double worst = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) {
        const double denom = std::max({std::abs(a[i]), std::abs(b[i]), 1e-8});
        worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
    }
    return worst;
}

// Gradient check helper: reverse-mode vs central differences for a scalar
// composition built by `graph` on inputs bounded away from relu kinks.
void check_gradient(const std::function<Var(const Var&)>& graph, const Tensor& x, double tol = 1e-4) {
    Var leaf = make_leaf(x, true);
    Gradient ad = backward(graph(leaf), leaf);
    REQUIRE_FALSE(ad.disconnected);
    Gradient fd = finite_diff_grad([&graph](const Tensor& t) { return graph(make_leaf(t, false)).value()[0]; },
                                   x, 1e-5);
    CHECK(max_rel_err(ad.values, fd.values) < tol);
}

}  // namespace

TEST_CASE("forward op examples") {
    // mean of [1,2,3,4] is 2.5
    Var x = make_constant(Tensor({2, 2}, {1, 2, 3, 4}));
    CHECK(mean_all(x).value()[0] == doctest::Approx(2.5));

    // softmax of [0,0] is [0.5,0.5]
    Var s = softmax_last(make_constant(Tensor({2}, {0, 0})));
    CHECK(s.value()[0] == doctest::Approx(0.5));
    CHECK(s.value()[1] == doctest::Approx(0.5));

    // relu of [-1,2] is [0,2]
    Var r = relu(make_constant(Tensor({2}, {-1, 2})));
    CHECK(r.value()[0] == 0.0);
    CHECK(r.value()[1] == 2.0);
}

TEST_CASE("shape mismatches name the op and both shapes") {
    Var a = make_constant(Tensor({2, 3}));
    Var b = make_constant(Tensor({3, 2}));
    CHECK_THROWS_WITH_AS(add(a, b), "add: shape mismatch [2,3] vs [3,2]", std::invalid_argument);
    CHECK_THROWS_AS(mul(a, b), std::invalid_argument);
    CHECK_THROWS_AS(matmul(a, make_constant(Tensor({2, 2}))), std::invalid_argument);
    CHECK_THROWS_AS(conv2d(make_constant(Tensor({4, 4, 3})), make_constant(Tensor({3, 3, 2, 4})), Var{}, 1),
                    std::invalid_argument);
    CHECK_THROWS_AS(reshape(a, {7}), std::invalid_argument);
}

TEST_CASE("softmax rows are stochastic within 1e-12") {
    std::mt19937_64 rng(21);
    Tensor t = random_tensor({5, 7}, rng, -3.0, 3.0);
    Var y = softmax_last(make_constant(t));
    for (std::int64_t r = 0; r < 5; ++r) {
        double sum = 0.0;
        for (std::int64_t c = 0; c < 7; ++c) sum += y.value().at2(r, c);
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("forward ops keep finite inputs finite") {
    std::mt19937_64 rng(22);
    Tensor t = random_tensor({4, 4}, rng, -50.0, 50.0);
    CHECK(softmax_last(make_constant(t)).value().all_finite());
    CHECK(softplus(make_constant(t)).value().all_finite());
    CHECK(relu(make_constant(t)).value().all_finite());
    CHECK(matmul(make_constant(t), make_constant(t)).value().all_finite());
}

TEST_CASE("backward: mean gradient is uniform 1/(H*W)") {
    Tensor x({4, 8});
    Var leaf = make_leaf(x, true);
    Gradient g = backward(mean_all(leaf), leaf);
    CHECK_FALSE(g.disconnected);
    for (std::int64_t i = 0; i < g.values.size(); ++i) {
        CHECK(g.values[i] == doctest::Approx(1.0 / 32.0).epsilon(1e-15));
    }
}

TEST_CASE("backward: d sum(x*x)/dx = 2x") {
    Var leaf = make_leaf(Tensor({2}, {1, 2}), true);
    Gradient g = backward(sum_all(mul(leaf, leaf)), leaf);
    CHECK(g.values[0] == doctest::Approx(2.0));
    CHECK(g.values[1] == doctest::Approx(4.0));
}

TEST_CASE("backward errors and the disconnected flag") {
    Var x = make_leaf(Tensor({2, 2}), true);
    CHECK_THROWS_AS(run_backward(add(x, x)), std::invalid_argument);  // non-scalar

    Var other = make_leaf(Tensor({3}), true);
    Gradient g = backward(mean_all(mul(x, x)), other);
    CHECK(g.disconnected);
    for (std::int64_t i = 0; i < g.values.size(); ++i) CHECK(g.values[i] == 0.0);

    CHECK_THROWS_AS(backward(mean_all(x), make_leaf(Tensor({2}), false)), std::invalid_argument);
}

TEST_CASE("backward is deterministic: bit-identical repeat runs") {
    std::mt19937_64 rng(23);
    Tensor x = random_tensor({6, 6}, rng);
    Tensor w = random_tensor({6, 6}, rng);
    Var leaf = make_leaf(x, true);
    Var out = mean_all(softmax_last(matmul(leaf, make_constant(w))));
    Gradient g1 = backward(out, leaf);
    Gradient g2 = backward(out, leaf);
    CHECK(g1.values == g2.values);
}

TEST_CASE("finite differences: linear and quadratic scalars") {
    // mean is linear: every finite-difference entry is exactly 1/size.
    Tensor x({3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    Gradient g = finite_diff_grad([](const Tensor& t) { return t.sum() / 9.0; }, x, 1e-5);
    for (std::int64_t i = 0; i < 9; ++i) CHECK(g.values[i] == doctest::Approx(1.0 / 9.0).epsilon(1e-9));

    // f(x) = x^2 at 3: derivative 6 within 1e-9.
    Tensor s({1}, {3.0});
    Gradient gs = finite_diff_grad([](const Tensor& t) { return t[0] * t[0]; }, s, 1e-5);
    CHECK(gs.values[0] == doctest::Approx(6.0).epsilon(1e-9));

    CHECK_THROWS_AS(finite_diff_grad([](const Tensor&) { return 0.0; }, s, 0.0), std::invalid_argument);
}

TEST_CASE("gradient check: elementwise chain") {
    std::mt19937_64 rng(31);
    Tensor x = random_tensor({3, 4}, rng);
    Tensor y = random_tensor({3, 4}, rng);
    check_gradient(
        [&y](const Var& v) { return mean_all(mul(add(v, make_constant(y)), sub(v, make_constant(y)))); }, x);
}

TEST_CASE("gradient check: matmul, transpose, bias") {
    std::mt19937_64 rng(32);
    Tensor x = random_tensor({4, 5}, rng);
    Tensor w = random_tensor({5, 3}, rng);
    Tensor b = random_tensor({3}, rng);
    check_gradient(
        [&](const Var& v) {
            return mean_all(add_bias(matmul(v, make_constant(w)), make_constant(b)));
        },
        x);
    check_gradient([&](const Var& v) { return mean_all(matmul(transpose(v), v)); }, x);
}

TEST_CASE("gradient check: matmul weight side") {
    std::mt19937_64 rng(33);
    Tensor x = random_tensor({4, 5}, rng);
    Tensor w = random_tensor({5, 3}, rng);
    check_gradient([&](const Var& v) { return mean_all(matmul(make_constant(x), v)); }, w);
}

TEST_CASE("gradient check: conv2d input, weights, bias") {
    std::mt19937_64 rng(34);
    Tensor x = random_tensor({6, 7, 2}, rng);
    Tensor w = random_tensor({3, 3, 2, 3}, rng, -0.5, 0.5);
    Tensor b = random_tensor({3}, rng);
    check_gradient([&](const Var& v) { return mean_all(conv2d(v, make_constant(w), make_constant(b), 1)); },
                   x);
    check_gradient([&](const Var& v) { return mean_all(conv2d(make_constant(x), v, make_constant(b), 1)); },
                   w);
    check_gradient([&](const Var& v) { return mean_all(conv2d(make_constant(x), make_constant(w), v, 1)); },
                   b);
}

TEST_CASE("gradient check: softmax, softplus, relu away from kinks") {
    std::mt19937_64 rng(35);
    Tensor x = random_tensor({4, 6}, rng, 0.1, 1.0);
    // Weight the softmax rows; the plain mean of a row-stochastic matrix is
    // constant and its true gradient identically zero.
    Tensor w = random_tensor({4, 6}, rng);
    check_gradient([&w](const Var& v) { return mean_all(mul(softmax_last(v), make_constant(w))); }, x);
    check_gradient([](const Var& v) { return mean_all(softplus(v)); }, x);
    check_gradient([](const Var& v) { return mean_all(relu(v)); }, x);
    check_gradient([](const Var& v) { return mean_all(mul(softmax_last(v), softplus(v))); }, x);
}

TEST_CASE("gradient check: scale, reshape, patchify, upsample") {
    std::mt19937_64 rng(36);
    Tensor x = random_tensor({4, 4, 3}, rng);
    check_gradient([](const Var& v) { return mean_all(scale(patchify(v, 2), 3.0)); }, x);
    Tensor g = random_tensor({3, 2}, rng);
    check_gradient([](const Var& v) { return mean_all(mul(upsample_nearest(v, 3), upsample_nearest(v, 3))); },
                   g);
    check_gradient([](const Var& v) { return sum_all(reshape(v, {2, 3})); }, g);
}

TEST_CASE("gradient of a toy attention model's mean depth matches finite differences") {
    mdx::ArchSpec arch;
    arch.height = 16;
    arch.width = 16;
    const mdx::Model model = mdx::build_model(arch, 19);
    const mdx::Scene scene = mdx::generate_scene(20, 16, 16);

    Var leaf = make_leaf(scene.image, true);
    const Gradient ad = backward(mdx::forward_graph(model, leaf).mean_depth, leaf);
    const Gradient fd = finite_diff_grad(
        [&model](const Tensor& img) {
            return mdx::forward_graph(model, make_leaf(img, false)).mean_depth.value()[0];
        },
        scene.image, 1e-5);

    double scale = 0.0;
    for (std::int64_t i = 0; i < ad.values.size(); ++i) {
        scale = std::max({scale, std::abs(ad.values[i]), std::abs(fd.values[i])});
    }
    double worst = 0.0;
    for (std::int64_t i = 0; i < ad.values.size(); ++i) {
        worst = std::max(worst, std::abs(ad.values[i] - fd.values[i]) / scale);
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("gradient flows through reused subexpressions") {
    std::mt19937_64 rng(37);
    Tensor x = random_tensor({3, 3}, rng);
    check_gradient(
        [](const Var& v) {
            Var shared = softplus(v);
            return mean_all(add(mul(shared, shared), shared));
        },
        x);
}
