// Acceptance suite: one pass/fail line per criterion, nonzero exit when any
// criterion fails. Heavier than the unit suites; everything is seeded.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "mdx/attribution.hpp"
#include "mdx/autodiff.hpp"
#include "mdx/metrics.hpp"
#include "mdx/model.hpp"
#include "mdx/perturbation.hpp"
#include "mdx/rng.hpp"
#include "mdx/scene.hpp"
#include "mdx/sweep.hpp"

using namespace mdx;

namespace {

int g_failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
    std::printf("[%s] criterion %d: %s (%s)\n", pass ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* format, ...) {
    char buf[512];
    va_list args;
    va_start(args, format);
    std::vsnprintf(buf, sizeof(buf), format, args);
    va_end(args);
    return buf;
}

double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

// --- 1: reverse-mode gradients vs central finite differences -------------

void criterion_1() {
    const auto t0 = std::chrono::steady_clock::now();
    double worst = 0.0;

    ArchSpec conv_arch;
    conv_arch.kind = ModelKind::kConv;
    ArchSpec attn_arch;  // defaults are the attention spec
    const Model conv = build_model(conv_arch, 41);
    const Model attn = build_model(attn_arch, 42);

    // Error is measured relative to the gradient scale (the infinity norm):
    // entries far below that scale sit under the central-difference roundoff
    // floor (~ulp(f)/2h), where a per-entry ratio would only measure oracle
    // noise.
    for (const Model* model : {&conv, &attn}) {
        for (std::uint64_t seed = 100; seed < 105; ++seed) {
            const Scene scene = generate_scene(seed, 32, 32);
            Var leaf = make_leaf(scene.image, true);
            const Gradient ad = backward(forward_graph(*model, leaf).mean_depth, leaf);
            const Gradient fd = finite_diff_grad(
                [model](const Tensor& img) { return scalarize_depth(predict(*model, img).depth); },
                scene.image, 1e-5);
            double scale = 0.0;
            for (std::int64_t i = 0; i < ad.values.size(); ++i) {
                scale = std::max({scale, std::abs(ad.values[i]), std::abs(fd.values[i])});
            }
            for (std::int64_t i = 0; i < ad.values.size(); ++i) {
                worst = std::max(worst, std::abs(ad.values[i] - fd.values[i]) / scale);
            }
        }
    }
    const double elapsed = seconds_since(t0);
    report(1, "gradient correctness on both model kinds", worst < 1e-4 && elapsed < 60.0,
           fmt("max gradient-scale rel err %.3g vs 1e-4, %.1fs vs 60s", worst, elapsed));
}

// --- 2: integrated gradients exact on a linear model ----------------------

void criterion_2() {
    std::mt19937_64 rng(202);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    Tensor w({4, 4, 3});
    for (std::int64_t i = 0; i < w.size(); ++i) w[i] = dist(rng);
    Tensor image({4, 4, 3});
    for (std::int64_t i = 0; i < image.size(); ++i) image[i] = 0.5 * (dist(rng) + 1.0);
    const Tensor baseline({4, 4, 3});
    const auto linear = [&w](const Var& x) { return sum_all(mul(x, make_constant(w))); };

    double worst = 0.0;
    for (int steps : {1, 7, 200}) {
        const IgAttribution ig = integrated_gradients_fn(linear, image, baseline, steps);
        for (std::int64_t i = 0; i < image.size(); ++i) {
            worst = std::max(worst, std::abs(ig.signed_channelwise[i] - image[i] * w[i]));
        }
    }
    report(2, "integrated gradients exact on a linear model", worst < 1e-10,
           fmt("max |signed - (x-x')*w| = %.3g vs 1e-10 for m in {1,7,200}", worst));
}

// --- 3: integrated gradients completeness ---------------------------------

void criterion_3() {
    ArchSpec arch;  // default attention
    const Model model = build_model(arch, 42);
    const Tensor baseline({32, 32, 3});
    const double fb = scalarize_depth(predict(model, baseline).depth);

    double worst = 0.0;
    for (std::uint64_t seed = 300; seed < 305; ++seed) {
        const Scene scene = generate_scene(seed, 32, 32);
        const IgAttribution ig = integrated_gradients_detailed(model, scene.image, baseline, 512);
        const double fx = scalarize_depth(predict(model, scene.image).depth);
        worst = std::max(worst, std::abs(ig.total - (fx - fb)) / std::abs(fx - fb));
    }
    report(3, "integrated gradients completeness at m=512", worst < 0.01,
           fmt("max relative gap %.4g vs 0.01 over 5 seeded images", worst));
}

// --- 4: rollout algebra ----------------------------------------------------

void criterion_4() {
    bool pass = true;
    std::string detail;

    RolloutConfig config;
    // identity and uniform stacks (2 layers x 2 heads over 16 patches)
    for (double fill : {-1.0, 1.0 / 16.0}) {
        std::vector<Tensor> mats;
        for (int i = 0; i < 4; ++i) {
            Tensor m({16, 16});
            if (fill < 0.0) {
                for (int d = 0; d < 16; ++d) m.at2(d, d) = 1.0;
            } else {
                m = Tensor::full({16, 16}, fill);
            }
            mats.push_back(std::move(m));
        }
        AttentionStack stack;
        stack.layers = 2;
        stack.heads = 2;
        stack.patches = 16;
        stack.matrices = std::move(mats);
        const RelevanceMap map = attention_rollout(stack, config, 32, 32);
        const double spread = map.scores.max_value() - map.scores.min_value();
        if (spread >= 1e-9) {
            pass = false;
            detail += fmt("non-uniform map (spread %.3g); ", spread);
        }
    }

    // hand-computed 4-patch case: all attention flows to patch index 1
    Tensor a({4, 4});
    for (std::int64_t r = 0; r < 4; ++r) {
        a.at2(r, 0) = 0.1;
        a.at2(r, 1) = 0.7;
        a.at2(r, 2) = 0.1;
        a.at2(r, 3) = 0.1;
    }
    AttentionStack single;
    single.layers = 1;
    single.heads = 1;
    single.patches = 4;
    single.matrices = {a};
    const RelevanceMap map = attention_rollout(single, config, 32, 32);
    double hand_err = 0.0;
    for (std::int64_t y = 0; y < 32; ++y)
        for (std::int64_t x = 0; x < 32; ++x) {
            const double expected = (y < 16 && x >= 16) ? 2.8 : 0.4;
            hand_err = std::max(hand_err, std::abs(map.scores.at2(y, x) - expected));
        }
    if (hand_err >= 1e-9) {
        pass = false;
        detail += fmt("hand case err %.3g; ", hand_err);
    }

    // row-stochasticity preservation through the rollout product
    std::mt19937_64 rng(404);
    std::uniform_real_distribution<double> dist(0.05, 1.0);
    double row_err = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<Tensor> layers;
        const std::int64_t n = 2 + static_cast<std::int64_t>(rng() % 15);
        const int depth = 1 + static_cast<int>(rng() % 4);
        for (int l = 0; l < depth; ++l) {
            Tensor m({n, n});
            for (std::int64_t r = 0; r < n; ++r) {
                double sum = 0.0;
                for (std::int64_t c = 0; c < n; ++c) {
                    m.at2(r, c) = dist(rng);
                    sum += m.at2(r, c);
                }
                for (std::int64_t c = 0; c < n; ++c) m.at2(r, c) /= sum;
            }
            layers.push_back(std::move(m));
        }
        const Tensor m0 = rollout_layers(layers);
        for (std::int64_t r = 0; r < n; ++r) {
            double sum = 0.0;
            for (std::int64_t c = 0; c < n; ++c) sum += m0.at2(r, c);
            row_err = std::max(row_err, std::abs(sum - 1.0));
        }
    }
    if (row_err >= 1e-9) {
        pass = false;
        detail += fmt("row sum err %.3g; ", row_err);
    }

    if (pass) detail = fmt("uniform maps, hand case err %.2g, row sums err %.2g", hand_err, row_err);
    report(4, "rollout algebra", pass, detail);
}

// --- 5: attribution fidelity formula ---------------------------------------

void criterion_5() {
    bool pass = attribution_fidelity(3.0, 1.0) == 0.5 && attribution_fidelity(4.2, 4.2) == 0.0 &&
                attribution_fidelity(0.0, 2.0) == -1.0 && attribution_fidelity(0.0, 0.0) == 0.0;

    std::mt19937_64 rng(505);
    std::uniform_real_distribution<double> err(0.0, 100.0);
    std::uniform_real_distribution<double> scale(1e-6, 1e6);
    double worst_scale_err = 0.0;
    for (int i = 0; i < 10000 && pass; ++i) {
        const double r = err(rng), s = err(rng);
        const double af = attribution_fidelity(r, s);
        if (af < -1.0 || af > 1.0) pass = false;
        if ((af > 0.0) != (r > s)) pass = false;
        const double c = scale(rng);
        worst_scale_err = std::max(worst_scale_err, std::abs(attribution_fidelity(c * r, c * s) - af));
        if (worst_scale_err > 1e-9) pass = false;
    }
    report(5, "attribution fidelity formula and properties", pass,
           fmt("pinned examples exact; 1e4 random pairs, scale-invariance err %.2g", worst_scale_err));
}

// --- 6: ASR / AF consistency ------------------------------------------------

void criterion_6(const std::vector<EvalRecord>& sweep_records) {
    // synthetic record set with ties and zeros
    std::mt19937_64 rng(606);
    std::uniform_real_distribution<double> err(0.0, 10.0);
    std::vector<EvalRecord> synth;
    for (int i = 0; i < 1000; ++i) {
        EvalRecord rec;
        rec.image_id = "r";
        rec.method = "saliency";
        rec.perturbation = "black";
        rec.fraction = 0.05;
        rec.r_err = err(rng);
        rec.i_err = (i % 9 == 0) ? rec.r_err : err(rng);
        if (i % 13 == 0) rec.r_err = rec.i_err = 0.0;
        rec.af = attribution_fidelity(rec.r_err, rec.i_err);
        synth.push_back(rec);
    }

    bool pass = true;
    const std::vector<EvalRecord>* record_sets[] = {&synth, &sweep_records};
    for (const auto* records : record_sets) {
        if (records->empty()) continue;
        const double a = asr(*records);
        std::int64_t positive = 0;
        for (const EvalRecord& r : *records)
            if (r.af > 0.0) ++positive;
        if (a != static_cast<double>(positive) / static_cast<double>(records->size())) pass = false;
    }
    report(6, "ASR equals the fraction of records with positive AF", pass,
           fmt("exact equality on %zu synthetic and %zu sweep records", synth.size(),
               sweep_records.size()));
}

// --- 7: faithfulness estimate vs brute-force oracle -------------------------

void criterion_7() {
    ArchSpec arch;
    arch.kind = ModelKind::kConv;
    arch.height = 8;
    arch.width = 8;
    arch.conv_channels = 4;
    const Model model = build_model(arch, 31);

    const Scene scene = generate_scene(9, 16, 16);
    Tensor image({8, 8, 3});
    for (std::int64_t y = 0; y < 8; ++y)
        for (std::int64_t x = 0; x < 8; ++x)
            for (std::int64_t c = 0; c < 3; ++c) image.at3(y, x, c) = scene.image.at3(y + 4, x + 4, c);

    const RelevanceMap relevance = saliency_map(model, image);
    PerturbSpec spec;  // black mask: both routes perturb identically
    const FeResult fe = faithfulness_estimate(model, image, relevance, spec, 8, 7);

    // Independent oracle: own ranking, own perturbation, textbook Pearson.
    std::vector<std::int64_t> order(64);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
        if (relevance.scores[a] != relevance.scores[b]) return relevance.scores[a] > relevance.scores[b];
        return a < b;
    });
    const Tensor base = predict(model, image).depth;
    std::vector<double> xs, ys;
    for (int g = 0; g < 8; ++g) {
        Tensor perturbed = image;
        double rel = 0.0;
        for (int member = 0; member < 8; ++member) {
            const std::int64_t pix = order[static_cast<std::size_t>(g * 8 + member)];
            rel += relevance.scores[pix];
            for (std::int64_t c = 0; c < 3; ++c) perturbed.at3(pix / 8, pix % 8, c) = 0.0;
        }
        xs.push_back(rel / 8.0);
        const Tensor pd = predict(model, perturbed).depth;
        double acc = 0.0;
        for (std::int64_t i = 0; i < pd.size(); ++i) acc += (pd[i] - base[i]) * (pd[i] - base[i]);
        ys.push_back(std::sqrt(acc / 64.0));
    }
    const double n = 8.0;
    const double sx = std::accumulate(xs.begin(), xs.end(), 0.0);
    const double sy = std::accumulate(ys.begin(), ys.end(), 0.0);
    double sxx = 0, syy = 0, sxy = 0;
    for (int g = 0; g < 8; ++g) {
        sxx += xs[static_cast<std::size_t>(g)] * xs[static_cast<std::size_t>(g)];
        syy += ys[static_cast<std::size_t>(g)] * ys[static_cast<std::size_t>(g)];
        sxy += xs[static_cast<std::size_t>(g)] * ys[static_cast<std::size_t>(g)];
    }
    const double oracle = (n * sxy - sx * sy) / std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));

    report(7, "faithfulness estimate matches the brute-force oracle", std::abs(fe.value - oracle) < 1e-9,
           fmt("|%.12f - %.12f| = %.3g vs 1e-9", fe.value, oracle, std::abs(fe.value - oracle)));
}

// --- 8: perturbation contracts ----------------------------------------------

void criterion_8() {
    bool pass = true;
    std::string detail;

    const Scene scene = generate_scene(808, 32, 32);
    ArchSpec arch;
    arch.kind = ModelKind::kConv;
    const Model model = build_model(arch, 8);
    RelevanceMap relevance = saliency_map(model, scene.image);

    // mask cardinality: round(fraction * H * W), exactly
    const struct {
        double fraction;
        std::int64_t expect;
    } cases[] = {{1.0 / 1024.0, 1}, {0.01, 10}, {0.05, 51}, {0.10, 102}, {0.5, 512}};
    for (const auto& c : cases) {
        const PixelMask m = select_pixels(relevance, c.fraction, MaskSide::kTop);
        if (m.count() != c.expect) {
            pass = false;
            detail += fmt("count(%g)=%lld not %lld; ", c.fraction, static_cast<long long>(m.count()),
                          static_cast<long long>(c.expect));
        }
    }

    // off-mask identity, bit-exact, for all three perturbers
    const PixelMask top = select_pixels(relevance, 0.10, MaskSide::kTop);
    const Tensor grad = depth_mean_gradient(model, scene.image);
    const Tensor variants[] = {
        perturb_black(scene.image, top),
        perturb_gaussian(scene.image, top, 0.0, 0.8, 2020),
        perturb_fgsm_with_gradient(scene.image, top, grad, 3.0, true),
    };
    for (const Tensor& v : variants) {
        for (std::int64_t y = 0; y < 32 && pass; ++y)
            for (std::int64_t x = 0; x < 32; ++x) {
                if (top.at(y, x)) continue;
                for (std::int64_t c = 0; c < 3; ++c) {
                    if (v.at3(y, x, c) != scene.image.at3(y, x, c)) {
                        pass = false;
                        detail += "off-mask pixel changed; ";
                        break;
                    }
                }
            }
        if (v.min_value() < 0.0 || v.max_value() > 1.0) {
            pass = false;
            detail += "clamping violated; ";
        }
    }

    // gaussian: empirical sigma of 1e5 pre-clamp draws within 2% of 0.8
    const auto noise = gaussian_noise(100000, 0.0, 0.8, 99);
    const double mean = std::accumulate(noise.begin(), noise.end(), 0.0) / 1e5;
    double var = 0.0;
    for (double v : noise) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / 1e5);
    if (std::abs(sd - 0.8) / 0.8 > 0.02) {
        pass = false;
        detail += fmt("sigma %.4f off by >2%%; ", sd);
    }

    // fgsm: per-pixel exact reconstruction clamp(x + step * sign(g))
    const double step = 3.0 / 255.0;
    const Tensor& fgsm = variants[2];
    for (std::int64_t y = 0; y < 32 && pass; ++y)
        for (std::int64_t x = 0; x < 32; ++x) {
            if (!top.at(y, x)) continue;
            for (std::int64_t c = 0; c < 3; ++c) {
                const double g = grad.at3(y, x, c);
                const double sign = g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0);
                const double expect = std::clamp(scene.image.at3(y, x, c) + step * sign, 0.0, 1.0);
                if (fgsm.at3(y, x, c) != expect) {
                    pass = false;
                    detail += "fgsm reconstruction mismatch; ";
                    break;
                }
            }
        }

    if (pass) detail = fmt("cardinality exact, off-mask bit-identical, sigma %.4f, fgsm exact", sd);
    report(8, "perturbation contracts", pass, detail);
}

// --- 9: directional sanity on a trained model --------------------------------

void criterion_9() {
    const auto t0 = std::chrono::steady_clock::now();

    ArchSpec arch;
    arch.kind = ModelKind::kConv;
    Model model = build_model(arch, 2024);
    std::vector<Scene> scenes;
    for (int i = 0; i < 64; ++i) {
        scenes.push_back(generate_scene(mix_seed(5000, static_cast<std::uint64_t>(i)), 32, 32));
    }
    train(model, scenes, 40, 0.05);

    int saliency_wins = 0, random_wins = 0;
    double saliency_af = 0.0, random_af = 0.0;
    for (int i = 0; i < 64; ++i) {
        const Tensor& image = scenes[static_cast<std::size_t>(i)].image;
        const Tensor base = predict(model, image).depth;

        const RelevanceMap sal = saliency_map(model, image);
        const DepthErrorPair sp = depth_error_pair_from(
            model, base, perturb_black(image, select_pixels(sal, 0.05, MaskSide::kTop)),
            perturb_black(image, select_pixels(sal, 0.05, MaskSide::kBottom)));
        if (sp.relevant_err > sp.irrelevant_err) ++saliency_wins;
        saliency_af += attribution_fidelity(sp);

        RelevanceMap rnd;
        rnd.method = Method::kSaliency;
        rnd.scores = Tensor({32, 32});
        auto rng = make_rng(mix_seed(777, static_cast<std::uint64_t>(i)));
        std::uniform_real_distribution<double> dist(0.0, 1.0);
        for (std::int64_t k = 0; k < rnd.scores.size(); ++k) rnd.scores[k] = dist(rng);
        const DepthErrorPair rp = depth_error_pair_from(
            model, base, perturb_black(image, select_pixels(rnd, 0.05, MaskSide::kTop)),
            perturb_black(image, select_pixels(rnd, 0.05, MaskSide::kBottom)));
        if (rp.relevant_err > rp.irrelevant_err) ++random_wins;
        random_af += attribution_fidelity(rp);
    }

    const double saliency_asr = saliency_wins / 64.0;
    const double random_asr = random_wins / 64.0;
    const double elapsed = seconds_since(t0);
    const bool pass = saliency_asr >= 0.60 && random_asr >= 0.35 && random_asr <= 0.65 &&
                      saliency_af / 64.0 > random_af / 64.0 && elapsed < 600.0;
    report(9, "saliency beats a random-relevance baseline after training", pass,
           fmt("saliency ASR %.3f (>=0.60), random ASR %.3f (in [0.35,0.65]), mean AF %.3f > %.3f, %.0fs",
               saliency_asr, random_asr, saliency_af / 64.0, random_af / 64.0, elapsed));
}

// --- 10: end-to-end reproducibility ------------------------------------------

std::vector<EvalRecord> criterion_10() {
    const auto t0 = std::chrono::steady_clock::now();

    SweepConfig config;  // defaults: 3 methods x 3 perturbations x 3 fractions, 32 synthetic images
    config.render_count = 0;
    config.output_dir = "acceptance_out";

    const SweepResult first = run_sweep(config);
    const SweepResult second = run_sweep(config);
    const std::string csv1 = records_to_csv(first.records);
    const std::string csv2 = records_to_csv(second.records);

    const std::string agg = aggregates_to_csv(first.aggregates);
    const bool header_ok = agg.rfind("method,perturbation,percent,rRMSE,iRMSE,ASR,FE,AF\n", 0) == 0;
    const double elapsed = seconds_since(t0);

    const bool pass = csv1 == csv2 && first.aggregates.size() == 27 && header_ok &&
                      first.records.size() == 32 * 27 && first.failures.empty() && elapsed < 600.0;
    report(10, "full sweep reproducibility and table structure", pass,
           fmt("%zu records, %zu aggregate rows (want 27), byte-identical=%s, %.0fs vs 600s",
               first.records.size(), first.aggregates.size(), csv1 == csv2 ? "yes" : "NO", elapsed));
    return first.records;
}

}  // namespace

int main() {
    std::printf("acceptance suite (seeded, single process)\n");
    const auto t0 = std::chrono::steady_clock::now();

    criterion_1();
    criterion_2();
    criterion_3();
    criterion_4();
    criterion_5();
    const std::vector<EvalRecord> sweep_records = criterion_10();
    criterion_6(sweep_records);
    criterion_7();
    criterion_8();
    criterion_9();

    std::printf("%d of 10 criteria passed in %.0fs\n", 10 - g_failures, seconds_since(t0));
    return g_failures == 0 ? 0 : 1;
}
