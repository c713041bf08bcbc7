#include "mdx/attribution.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "mdx/autodiff.hpp"
#include "mdx/log.hpp"

namespace mdx {

namespace {
std::atomic<std::uint64_t> g_attr_calls{0};

void note_attribution_call() { g_attr_calls.fetch_add(1, std::memory_order_relaxed); }

bool all_zero(const Tensor& t) {
    for (std::int64_t i = 0; i < t.size(); ++i)
        if (t[i] != 0.0) return false;
    return true;
}
}  // namespace

std::uint64_t attribution_call_count() { return g_attr_calls.load(std::memory_order_relaxed); }
void reset_attribution_call_count() { g_attr_calls.store(0, std::memory_order_relaxed); }

const char* method_name(Method m) {
    switch (m) {
        case Method::kSaliency: return "saliency";
        case Method::kIntegratedGradients: return "integrated_gradients";
        case Method::kAttentionRollout: return "attention_rollout";
    }
    return "unknown";
}

Method method_from_name(const std::string& name) {
    if (name == "saliency") return Method::kSaliency;
    if (name == "integrated_gradients" || name == "ig") return Method::kIntegratedGradients;
    if (name == "attention_rollout" || name == "rollout") return Method::kAttentionRollout;
    throw std::invalid_argument("unknown attribution method '" + name + "'");
}

void validate_relevance(const RelevanceMap& map) {
    if (map.scores.rank() != 2) {
        throw std::runtime_error("relevance map must be (H,W), got " + map.scores.shape_str());
    }
    for (std::int64_t i = 0; i < map.scores.size(); ++i) {
        const double v = map.scores[i];
        if (!std::isfinite(v) || v < 0.0) {
            throw std::runtime_error("relevance map contains a negative or non-finite score");
        }
    }
    if (all_zero(map.scores) && !map.degenerate) {
        throw std::runtime_error("all-zero relevance map is not flagged degenerate");
    }
}

double scalarize_depth(const Tensor& depth) {
    if (depth.size() == 0) throw std::invalid_argument("scalarize_depth: empty depth map");
    return depth.sum() / static_cast<double>(depth.size());
}

Tensor depth_mean_gradient(const Model& model, const Tensor& image) {
    Var x = make_leaf(image, /*requires_grad=*/true);
    ForwardGraph g = forward_graph(model, x);
    return backward(g.mean_depth, x).values;
}

RelevanceMap saliency_map(const Model& model, const Tensor& image) {
    note_attribution_call();
    const Tensor grad = depth_mean_gradient(model, image);
    const std::int64_t h = grad.dim(0), w = grad.dim(1), c = grad.dim(2);
    RelevanceMap map;
    map.method = Method::kSaliency;
    map.scores = Tensor({h, w});
    for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x) {
            double best = 0.0;
            for (std::int64_t ch = 0; ch < c; ++ch) best = std::max(best, std::abs(grad.at3(y, x, ch)));
            map.scores.at2(y, x) = best;
        }
    map.degenerate = all_zero(map.scores);
    if (map.degenerate) log::warn("saliency: all-zero map (model output does not depend on the input)");
    return map;
}

IgAttribution integrated_gradients_fn(const ScalarGraphFn& f, const Tensor& image, const Tensor& baseline,
                                      int steps) {
    if (steps < 1) throw std::invalid_argument("integrated_gradients: steps must be >= 1");
    if (!image.same_shape(baseline)) {
        throw std::invalid_argument("integrated_gradients: baseline shape " + baseline.shape_str() +
                                    " does not match image shape " + image.shape_str());
    }
    const std::int64_t h = image.dim(0), w = image.dim(1), c = image.dim(2);

    Tensor grad_sum(image.shape());
    for (int k = 1; k <= steps; ++k) {
        const double t = static_cast<double>(k) / static_cast<double>(steps);
        Tensor point(image.shape());
        for (std::int64_t i = 0; i < point.size(); ++i) {
            point[i] = baseline[i] + t * (image[i] - baseline[i]);
        }
        Var x = make_leaf(std::move(point), /*requires_grad=*/true);
        Gradient g = backward(f(x), x);
        for (std::int64_t i = 0; i < grad_sum.size(); ++i) grad_sum[i] += g.values[i];
    }

    IgAttribution result;
    result.map.method = Method::kIntegratedGradients;
    result.map.scores = Tensor({h, w});
    result.signed_channelwise = Tensor(image.shape());
    result.signed_channel_sum = Tensor({h, w});
    result.total = 0.0;
    const double inv_steps = 1.0 / static_cast<double>(steps);
    for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x) {
            double signed_sum = 0.0;
            for (std::int64_t ch = 0; ch < c; ++ch) {
                const std::int64_t i = (y * w + x) * c + ch;
                const double attribution = (image[i] - baseline[i]) * grad_sum[i] * inv_steps;
                result.signed_channelwise[i] = attribution;
                signed_sum += attribution;
            }
            result.signed_channel_sum.at2(y, x) = signed_sum;
            result.map.scores.at2(y, x) = std::abs(signed_sum);
            result.total += signed_sum;
        }
    result.map.degenerate = all_zero(result.map.scores);
    return result;
}

IgAttribution integrated_gradients_detailed(const Model& model, const Tensor& image, const Tensor& baseline,
                                            int steps) {
    note_attribution_call();
    return integrated_gradients_fn(
        [&model](const Var& x) { return forward_graph(model, x).mean_depth; }, image, baseline, steps);
}

RelevanceMap integrated_gradients(const Model& model, const Tensor& image, const Tensor& baseline,
                                  int steps) {
    return integrated_gradients_detailed(model, image, baseline, steps).map;
}

const char* head_aggregation_name(HeadAggregation psi) {
    switch (psi) {
        case HeadAggregation::kMean: return "mean";
        case HeadAggregation::kMin: return "min";
        case HeadAggregation::kMax: return "max";
    }
    return "unknown";
}

HeadAggregation head_aggregation_from_name(const std::string& name) {
    if (name == "mean") return HeadAggregation::kMean;
    if (name == "min") return HeadAggregation::kMin;
    if (name == "max") return HeadAggregation::kMax;
    throw std::invalid_argument("unknown head aggregation '" + name + "' (expected mean|min|max)");
}

void validate(const RolloutConfig& config) {
    if (config.residual_weight != 0.5) {
        throw std::invalid_argument("rollout: residual weight is fixed at 1/2");
    }
}

Tensor aggregate_heads(std::span<const Tensor> head_mats, HeadAggregation psi) {
    if (head_mats.empty()) throw std::invalid_argument("aggregate_heads: empty head axis");
    const Tensor& first = head_mats[0];
    if (first.rank() != 2 || first.dim(0) != first.dim(1)) {
        throw std::invalid_argument("aggregate_heads: expected square matrices, got " + first.shape_str());
    }
    for (const Tensor& m : head_mats) {
        if (!m.same_shape(first)) {
            throw std::invalid_argument("aggregate_heads: head shape mismatch " + m.shape_str() + " vs " +
                                        first.shape_str());
        }
    }

    const std::int64_t n = first.dim(0);
    Tensor out = first;
    for (std::size_t h = 1; h < head_mats.size(); ++h) {
        const Tensor& m = head_mats[h];
        for (std::int64_t i = 0; i < out.size(); ++i) {
            switch (psi) {
                case HeadAggregation::kMean: out[i] += m[i]; break;
                case HeadAggregation::kMin: out[i] = std::min(out[i], m[i]); break;
                case HeadAggregation::kMax: out[i] = std::max(out[i], m[i]); break;
            }
        }
    }
    if (psi == HeadAggregation::kMean) {
        const double inv = 1.0 / static_cast<double>(head_mats.size());
        for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= inv;
    } else {
        // min/max break row-stochasticity; renormalize each row.
        for (std::int64_t r = 0; r < n; ++r) {
            double sum = 0.0;
            for (std::int64_t j = 0; j < n; ++j) sum += out.at2(r, j);
            if (sum > 0.0) {
                for (std::int64_t j = 0; j < n; ++j) out.at2(r, j) /= sum;
            } else {
                for (std::int64_t j = 0; j < n; ++j) out.at2(r, j) = 1.0 / static_cast<double>(n);
            }
        }
    }
    return out;
}

Tensor rollout_layers(std::span<const Tensor> layer_mats) {
    if (layer_mats.empty()) throw std::invalid_argument("rollout_layers: no layers");
    const std::int64_t n = layer_mats[0].dim(0);
    for (const Tensor& m : layer_mats) {
        if (m.rank() != 2 || m.dim(0) != n || m.dim(1) != n) {
            throw std::invalid_argument("rollout_layers: layer shape mismatch " + m.shape_str());
        }
    }

    Tensor m0 = layer_mats[layer_mats.size() - 1];
    for (std::size_t l = layer_mats.size() - 1; l-- > 0;) {
        // Residual-averaged layer matrix: B/2 + I/2.
        Tensor b_res = layer_mats[l];
        for (std::int64_t i = 0; i < b_res.size(); ++i) b_res[i] *= 0.5;
        for (std::int64_t i = 0; i < n; ++i) b_res.at2(i, i) += 0.5;

        Tensor next({n, n});
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t j = 0; j < n; ++j) {
                double acc = 0.0;
                for (std::int64_t k = 0; k < n; ++k) acc += b_res.at2(i, k) * m0.at2(k, j);
                next.at2(i, j) = acc;
            }
        m0 = std::move(next);
    }
    return m0;
}

Tensor row_mass(const Tensor& m0) {
    if (m0.rank() != 2 || m0.dim(0) != m0.dim(1)) {
        throw std::invalid_argument("row_mass: expected square matrix, got " + m0.shape_str());
    }
    const std::int64_t n = m0.dim(0);
    Tensor s({n});
    for (std::int64_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::int64_t j = 0; j < n; ++j) acc += m0.at2(i, j);
        s[i] = acc;
    }
    return s;
}

Tensor column_mass(const Tensor& m0) {
    if (m0.rank() != 2 || m0.dim(0) != m0.dim(1)) {
        throw std::invalid_argument("column_mass: expected square matrix, got " + m0.shape_str());
    }
    const std::int64_t n = m0.dim(0);
    Tensor s({n});
    for (std::int64_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::int64_t i = 0; i < n; ++i) acc += m0.at2(i, j);
        s[j] = acc;
    }
    return s;
}

RelevanceMap attention_rollout(const AttentionStack& stack, const RolloutConfig& config,
                               std::int64_t height, std::int64_t width) {
    validate(config);
    if (stack.empty()) throw std::invalid_argument("attention_rollout: empty attention stack");
    const std::int64_t n = stack.patches;

    // Recover the patch edge from the grid: n patches tile height x width.
    std::int64_t patch = -1;
    for (std::int64_t p = 1; p <= std::min(height, width); ++p) {
        if (height % p == 0 && width % p == 0 && (height / p) * (width / p) == n) {
            patch = p;
            break;
        }
    }
    if (patch < 0) {
        throw std::invalid_argument("attention_rollout: " + std::to_string(n) +
                                    " patches do not tile " + std::to_string(height) + "x" +
                                    std::to_string(width));
    }

    std::vector<Tensor> per_layer;
    per_layer.reserve(static_cast<std::size_t>(stack.layers));
    for (std::int64_t l = 0; l < stack.layers; ++l) {
        std::span<const Tensor> heads(stack.matrices.data() + l * stack.heads,
                                      static_cast<std::size_t>(stack.heads));
        per_layer.push_back(aggregate_heads(heads, config.psi));
    }
    const Tensor m0 = rollout_layers(per_layer);
    Tensor patch_scores = config.axis == ImportanceAxis::kReceived ? column_mass(m0) : row_mass(m0);

    // Guard: scores are non-negative by construction, but keep the shift for
    // any caller-supplied stack with negative entries.
    const double lo = patch_scores.min_value();
    if (lo < 0.0) {
        for (std::int64_t i = 0; i < patch_scores.size(); ++i) patch_scores[i] -= lo;
    }

    const std::int64_t gh = height / patch, gw = width / patch;
    RelevanceMap map;
    map.method = Method::kAttentionRollout;
    map.scores = Tensor({height, width});
    for (std::int64_t y = 0; y < height; ++y)
        for (std::int64_t x = 0; x < width; ++x) {
            map.scores.at2(y, x) = patch_scores[(y / patch) * gw + (x / patch)];
        }
    map.degenerate = all_zero(map.scores);
    return map;
}

RelevanceMap attention_rollout(const Model& model, const Tensor& image, const RolloutConfig& config) {
    if (model.arch.kind != ModelKind::kAttention) {
        throw std::invalid_argument("attention_rollout: model kind '" +
                                    std::string(model_kind_name(model.arch.kind)) +
                                    "' exposes no attention weights");
    }
    note_attribution_call();
    Prediction pred = predict(model, image);
    return attention_rollout(pred.attention, config, model.arch.height, model.arch.width);
}

std::string relevance_to_text(const RelevanceMap& map) {
    std::string out = std::to_string(map.scores.dim(0)) + " " + std::to_string(map.scores.dim(1)) + " " +
                      method_name(map.method) + "\n";
    char buf[40];
    for (std::int64_t y = 0; y < map.scores.dim(0); ++y) {
        for (std::int64_t x = 0; x < map.scores.dim(1); ++x) {
            std::snprintf(buf, sizeof(buf), "%.17g", map.scores.at2(y, x));
            if (x) out += " ";
            out += buf;
        }
        out += "\n";
    }
    return out;
}

RelevanceMap relevance_from_text(const std::string& text) {
    std::istringstream in(text);
    std::int64_t h = 0, w = 0;
    std::string method;
    in >> h >> w >> method;
    if (!in || h < 1 || w < 1) throw std::runtime_error("relevance: malformed header");
    RelevanceMap map;
    map.method = method_from_name(method);
    map.scores = Tensor({h, w});
    for (std::int64_t i = 0; i < map.scores.size(); ++i) in >> map.scores[i];
    if (!in) throw std::runtime_error("relevance: truncated score grid");
    bool zero = true;
    for (std::int64_t i = 0; i < map.scores.size() && zero; ++i) zero = map.scores[i] == 0.0;
    map.degenerate = zero;
    return map;
}

void save_relevance(const RelevanceMap& map, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_relevance: cannot open '" + path + "'");
    out << relevance_to_text(map);
    if (!out) throw std::runtime_error("save_relevance: write failed for '" + path + "'");
}

RelevanceMap load_relevance(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_relevance: cannot open '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return relevance_from_text(buf.str());
}

}  // namespace mdx
