#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <random>
#include <stdexcept>

#include "doctest.h"
#include "mdx/attribution.hpp"
#include "mdx/autodiff.hpp"
#include "mdx/model.hpp"
#include "mdx/scene.hpp"

using namespace mdx;

namespace {

ArchSpec tiny_attention() {
    ArchSpec a;
    a.kind = ModelKind::kAttention;
    a.height = 16;
    a.width = 16;
    a.patch = 8;
    a.layers = 2;
    a.heads = 2;
    a.embed = 16;
    a.mlp_hidden = 16;
    return a;
}

Tensor random_stochastic(std::int64_t n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(0.1, 1.0);
    Tensor m({n, n});
    for (std::int64_t r = 0; r < n; ++r) {
        double sum = 0.0;
        for (std::int64_t c = 0; c < n; ++c) {
            m.at2(r, c) = dist(rng);
            sum += m.at2(r, c);
        }
        for (std::int64_t c = 0; c < n; ++c) m.at2(r, c) /= sum;
    }
    return m;
}

AttentionStack make_stack(std::int64_t layers, std::int64_t heads, std::vector<Tensor> mats) {
    AttentionStack s;
    s.layers = layers;
    s.heads = heads;
    s.patches = mats[0].dim(0);
    s.matrices = std::move(mats);
    return s;
}

}  // namespace

TEST_CASE("scalarize_depth") {
    CHECK(scalarize_depth(Tensor::full({3, 3}, 5.0)) == doctest::Approx(5.0));
    CHECK(scalarize_depth(Tensor({2, 2}, {1, 2, 3, 4})) == doctest::Approx(2.5));
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> dist(0.0, 3.0);
    Tensor t({8, 8});
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
    CHECK(scalarize_depth(t) == doctest::Approx(t.sum() / 64.0).epsilon(1e-12));
    CHECK_THROWS_AS(scalarize_depth(Tensor({0, 4})), std::invalid_argument);
}

TEST_CASE("saliency: constant model gives an all-zero degenerate map") {
    ArchSpec arch;
    arch.kind = ModelKind::kConv;
    arch.height = 16;
    arch.width = 16;
    arch.conv_channels = 4;
    Model model = build_model(arch, 3);
    for (auto& p : model.params) p.value = Tensor(p.value.shape());  // all zero: output ignores input
    const Scene scene = generate_scene(4, 16, 16);
    const RelevanceMap map = saliency_map(model, scene.image);
    CHECK(map.degenerate);
    CHECK(map.scores.max_value() == 0.0);
    CHECK_NOTHROW(validate_relevance(map));
}

TEST_CASE("saliency: per-pixel value is the channel max of |gradient|") {
    const Model model = build_model(tiny_attention(), 5);
    const Scene scene = generate_scene(6, 16, 16);
    const Tensor grad = depth_mean_gradient(model, scene.image);
    const RelevanceMap map = saliency_map(model, scene.image);
    REQUIRE(map.scores.shape() == std::vector<std::int64_t>{16, 16});
    for (std::int64_t y = 0; y < 16; ++y)
        for (std::int64_t x = 0; x < 16; ++x) {
            const double expected = std::max(
                {std::abs(grad.at3(y, x, 0)), std::abs(grad.at3(y, x, 1)), std::abs(grad.at3(y, x, 2))});
            CHECK(map.scores.at2(y, x) == expected);
        }
    CHECK_FALSE(map.degenerate);
    CHECK_NOTHROW(validate_relevance(map));
}

TEST_CASE("saliency: end-to-end agreement with the finite-difference pipeline") {
    const Model model = build_model(tiny_attention(), 7);
    const Scene scene = generate_scene(8, 16, 16);
    const RelevanceMap map = saliency_map(model, scene.image);
    const Gradient fd = finite_diff_grad(
        [&model](const Tensor& img) { return scalarize_depth(predict(model, img).depth); }, scene.image,
        1e-5);
    double worst = 0.0;
    for (std::int64_t y = 0; y < 16; ++y)
        for (std::int64_t x = 0; x < 16; ++x) {
            const double expected = std::max({std::abs(fd.values.at3(y, x, 0)),
                                              std::abs(fd.values.at3(y, x, 1)),
                                              std::abs(fd.values.at3(y, x, 2))});
            const double got = map.scores.at2(y, x);
            worst = std::max(worst, std::abs(got - expected) / std::max({got, expected, 1e-8}));
        }
    CHECK(worst < 1e-3);
}

TEST_CASE("integrated gradients: baseline identical to the image zeroes the map") {
    const Model model = build_model(tiny_attention(), 5);
    const Scene scene = generate_scene(6, 16, 16);
    const IgAttribution ig = integrated_gradients_detailed(model, scene.image, scene.image, 8);
    CHECK(ig.map.degenerate);
    CHECK(ig.map.scores.max_value() == 0.0);
    CHECK(ig.total == 0.0);
}

TEST_CASE("integrated gradients: exact for a linear scalar model, any step count") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    Tensor w({4, 4, 3});
    for (std::int64_t i = 0; i < w.size(); ++i) w[i] = dist(rng);
    Tensor image({4, 4, 3});
    for (std::int64_t i = 0; i < image.size(); ++i) image[i] = 0.5 * (dist(rng) + 1.0);
    Tensor baseline({4, 4, 3});  // black

    const auto linear = [&w](const Var& x) { return sum_all(mul(x, make_constant(w))); };
    IgAttribution first = integrated_gradients_fn(linear, image, baseline, 1);
    for (int steps : {1, 7, 200}) {
        const IgAttribution ig = integrated_gradients_fn(linear, image, baseline, steps);
        for (std::int64_t y = 0; y < 4; ++y)
            for (std::int64_t x = 0; x < 4; ++x) {
                double expected = 0.0;
                for (std::int64_t c = 0; c < 3; ++c) expected += image.at3(y, x, c) * w.at3(y, x, c);
                CHECK(ig.signed_channel_sum.at2(y, x) == doctest::Approx(expected).epsilon(1e-10));
                // step-count invariance on linear models
                CHECK(ig.signed_channel_sum.at2(y, x) ==
                      doctest::Approx(first.signed_channel_sum.at2(y, x)).epsilon(1e-12));
            }
    }
}

TEST_CASE("integrated gradients: completeness on the toy attention model") {
    const Model model = build_model(tiny_attention(), 11);
    const Scene scene = generate_scene(12, 16, 16);
    const Tensor baseline({16, 16, 3});
    const IgAttribution ig = integrated_gradients_detailed(model, scene.image, baseline, 512);
    const double fx = scalarize_depth(predict(model, scene.image).depth);
    const double fb = scalarize_depth(predict(model, baseline).depth);
    REQUIRE(std::abs(fx - fb) > 1e-6);
    CHECK(std::abs(ig.total - (fx - fb)) / std::abs(fx - fb) < 0.01);
}

TEST_CASE("integrated gradients: argument errors") {
    const Model model = build_model(tiny_attention(), 5);
    const Scene scene = generate_scene(6, 16, 16);
    CHECK_THROWS_AS(integrated_gradients(model, scene.image, Tensor({16, 16, 3}), 0),
                    std::invalid_argument);
    CHECK_THROWS_AS(integrated_gradients(model, scene.image, Tensor({8, 8, 3}), 4), std::invalid_argument);
}

TEST_CASE("aggregate_heads: identities") {
    std::mt19937_64 rng(13);
    const Tensor m = random_stochastic(3, rng);

    // single head: aggregation is the identity for every psi
    for (auto psi : {HeadAggregation::kMean, HeadAggregation::kMin, HeadAggregation::kMax}) {
        const Tensor out = aggregate_heads(std::vector<Tensor>{m}, psi);
        for (std::int64_t i = 0; i < m.size(); ++i) CHECK(out[i] == doctest::Approx(m[i]).epsilon(1e-12));
    }
    // two identical heads collapse to the same matrix
    for (auto psi : {HeadAggregation::kMean, HeadAggregation::kMin, HeadAggregation::kMax}) {
        const Tensor out = aggregate_heads(std::vector<Tensor>{m, m}, psi);
        for (std::int64_t i = 0; i < m.size(); ++i) CHECK(out[i] == doctest::Approx(m[i]).epsilon(1e-12));
    }
    CHECK_THROWS_AS(aggregate_heads(std::vector<Tensor>{}, HeadAggregation::kMin), std::invalid_argument);
}

TEST_CASE("aggregate_heads: hand-computed min with row renormalization") {
    const Tensor h1({2, 2}, {0.6, 0.4, 0.2, 0.8});
    const Tensor h2({2, 2}, {0.4, 0.6, 0.6, 0.4});
    const Tensor out = aggregate_heads(std::vector<Tensor>{h1, h2}, HeadAggregation::kMin);
    // elementwise min [[0.4,0.4],[0.2,0.4]], rows renormalized
    CHECK(out.at2(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(out.at2(0, 1) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(out.at2(1, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(out.at2(1, 1) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("rollout_layers: base case, identity stack, idempotent uniform") {
    std::mt19937_64 rng(14);
    const Tensor b = random_stochastic(4, rng);
    const Tensor m0 = rollout_layers(std::vector<Tensor>{b});
    CHECK(m0 == b);  // single layer: initialization only

    Tensor eye({3, 3});
    for (int i = 0; i < 3; ++i) eye.at2(i, i) = 1.0;
    const Tensor id3 = rollout_layers(std::vector<Tensor>{eye, eye, eye});
    for (std::int64_t i = 0; i < 9; ++i) CHECK(id3[i] == doctest::Approx(eye[i]).epsilon(1e-12));

    const Tensor u = Tensor::full({4, 4}, 0.25);
    const Tensor m = rollout_layers(std::vector<Tensor>{u, u});
    // (U/2 + I/2) * U = U because U*U = U and I*U = U
    for (std::int64_t i = 0; i < 16; ++i) CHECK(m[i] == doctest::Approx(0.25).epsilon(1e-12));

    CHECK_THROWS_AS(rollout_layers(std::vector<Tensor>{u, random_stochastic(3, rng)}),
                    std::invalid_argument);
}

TEST_CASE("rollout_layers: preserves row-stochasticity") {
    std::mt19937_64 rng(15);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<Tensor> layers;
        const std::int64_t n = 2 + static_cast<std::int64_t>(rng() % 5);
        const int depth = 1 + static_cast<int>(rng() % 4);
        for (int l = 0; l < depth; ++l) layers.push_back(random_stochastic(n, rng));
        const Tensor m0 = rollout_layers(layers);
        for (std::int64_t r = 0; r < n; ++r) {
            double sum = 0.0;
            for (std::int64_t c = 0; c < n; ++c) sum += m0.at2(r, c);
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
        }
    }
}

TEST_CASE("row and column mass") {
    Tensor eye({3, 3});
    for (int i = 0; i < 3; ++i) eye.at2(i, i) = 1.0;
    CHECK(row_mass(eye) == Tensor({3}, {1, 1, 1}));
    CHECK(column_mass(eye) == Tensor({3}, {1, 1, 1}));

    // row-stochastic instance: row sums are identically 1
    const Tensor m({2, 2}, {0.7, 0.3, 0.1, 0.9});
    const Tensor rows = row_mass(m);
    CHECK(rows[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(rows[1] == doctest::Approx(1.0).epsilon(1e-12));
    const Tensor cols = column_mass(m);
    CHECK(cols[0] == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(cols[1] == doctest::Approx(1.2).epsilon(1e-12));

    std::mt19937_64 rng(16);
    const Tensor s = random_stochastic(5, rng);
    const Tensor rm = row_mass(s);
    for (std::int64_t i = 0; i < 5; ++i) CHECK(rm[i] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("attention_rollout: uniform and identity stacks give uniform maps") {
    RolloutConfig config;
    for (double fill : {-1.0, 0.25}) {  // -1 marks the identity case
        std::vector<Tensor> mats;
        for (int i = 0; i < 4; ++i) {  // 2 layers x 2 heads
            Tensor m({4, 4});
            if (fill < 0.0) {
                for (int d = 0; d < 4; ++d) m.at2(d, d) = 1.0;
            } else {
                m = Tensor::full({4, 4}, fill);
            }
            mats.push_back(std::move(m));
        }
        const AttentionStack stack = make_stack(2, 2, std::move(mats));
        const RelevanceMap map = attention_rollout(stack, config, 16, 16);
        CHECK(map.scores.max_value() - map.scores.min_value() < 1e-9);
        CHECK_NOTHROW(validate_relevance(map));
    }
}

TEST_CASE("attention_rollout: crafted 4-patch stack concentrates on patch 2") {
    // Single layer, single head; every patch sends most attention to patch
    // index 1, so that patch receives the strictly largest column mass.
    Tensor a({4, 4});
    for (std::int64_t r = 0; r < 4; ++r) {
        a.at2(r, 0) = 0.1;
        a.at2(r, 1) = 0.7;
        a.at2(r, 2) = 0.1;
        a.at2(r, 3) = 0.1;
    }
    const AttentionStack stack = make_stack(1, 1, {a});
    RolloutConfig config;
    const RelevanceMap map = attention_rollout(stack, config, 16, 16);

    // Hand rollout: M0 = A, column masses [0.4, 2.8, 0.4, 0.4]; patch 1 of
    // the 2x2 grid is the top-right 8x8 block.
    for (std::int64_t y = 0; y < 16; ++y)
        for (std::int64_t x = 0; x < 16; ++x) {
            const bool in_block = y < 8 && x >= 8;
            CHECK(map.scores.at2(y, x) == doctest::Approx(in_block ? 2.8 : 0.4).epsilon(1e-9));
        }
}

TEST_CASE("attention_rollout: head permutation invariance") {
    std::mt19937_64 rng(17);
    std::vector<Tensor> heads;
    for (int h = 0; h < 3; ++h) heads.push_back(random_stochastic(4, rng));
    for (auto psi : {HeadAggregation::kMean, HeadAggregation::kMin, HeadAggregation::kMax}) {
        RolloutConfig config;
        config.psi = psi;
        const RelevanceMap fwd =
            attention_rollout(make_stack(1, 3, {heads[0], heads[1], heads[2]}), config, 16, 16);
        const RelevanceMap rev =
            attention_rollout(make_stack(1, 3, {heads[2], heads[0], heads[1]}), config, 16, 16);
        for (std::int64_t i = 0; i < fwd.scores.size(); ++i) {
            CHECK(fwd.scores[i] == doctest::Approx(rev.scores[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("attention_rollout: emitted-axis switch and model-kind error") {
    std::mt19937_64 rng(18);
    RolloutConfig config;
    config.axis = ImportanceAxis::kEmitted;
    const AttentionStack stack = make_stack(1, 1, {random_stochastic(4, rng)});
    const RelevanceMap map = attention_rollout(stack, config, 16, 16);
    // row-stochastic: every patch emits exactly 1
    CHECK(map.scores.max_value() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(map.scores.min_value() == doctest::Approx(1.0).epsilon(1e-9));

    config.residual_weight = 0.25;
    CHECK_THROWS_AS(attention_rollout(stack, config, 16, 16), std::invalid_argument);

    ArchSpec conv_arch;
    conv_arch.kind = ModelKind::kConv;
    conv_arch.height = 16;
    conv_arch.width = 16;
    const Model conv = build_model(conv_arch, 1);
    const Scene scene = generate_scene(1, 16, 16);
    CHECK_THROWS_AS(attention_rollout(conv, scene.image, RolloutConfig{}), std::invalid_argument);
}

TEST_CASE("all three methods satisfy the relevance invariants on a real pair") {
    const Model model = build_model(tiny_attention(), 21);
    const Scene scene = generate_scene(22, 16, 16);
    const Tensor baseline({16, 16, 3});

    const RelevanceMap sal = saliency_map(model, scene.image);
    const RelevanceMap ig = integrated_gradients(model, scene.image, baseline, 32);
    const RelevanceMap ar = attention_rollout(model, scene.image, RolloutConfig{});
    for (const RelevanceMap* map : {&sal, &ig, &ar}) {
        CHECK_NOTHROW(validate_relevance(*map));
        CHECK(map->scores.shape() == std::vector<std::int64_t>{16, 16});
        CHECK(map->scores.max_value() > 0.0);
    }
}

TEST_CASE("relevance serialization: value-exact round trip") {
    const Model model = build_model(tiny_attention(), 23);
    const Scene scene = generate_scene(24, 16, 16);
    const RelevanceMap map = saliency_map(model, scene.image);

    const std::string text = relevance_to_text(map);
    const RelevanceMap back = relevance_from_text(text);
    CHECK(back.method == map.method);
    CHECK(back.scores == map.scores);  // bit-exact
    CHECK(relevance_to_text(back) == text);

    namespace fs = std::filesystem;
    const auto path = (fs::temp_directory_path() / "mdx_relevance.txt").string();
    save_relevance(map, path);
    const RelevanceMap loaded = load_relevance(path);
    CHECK(loaded.scores == map.scores);
    fs::remove(path);

    CHECK_THROWS_AS(relevance_from_text("bogus"), std::runtime_error);
}

TEST_CASE("attribution call counter") {
    reset_attribution_call_count();
    const Model model = build_model(tiny_attention(), 25);
    const Scene scene = generate_scene(26, 16, 16);
    (void)saliency_map(model, scene.image);
    (void)integrated_gradients(model, scene.image, Tensor({16, 16, 3}), 2);
    (void)attention_rollout(model, scene.image, RolloutConfig{});
    CHECK(attribution_call_count() == 3);
    reset_attribution_call_count();
    CHECK(attribution_call_count() == 0);
}
