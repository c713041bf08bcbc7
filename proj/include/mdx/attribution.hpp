#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>

#include "mdx/model.hpp"
#include "mdx/tensor.hpp"

namespace mdx {

enum class Method { kSaliency, kIntegratedGradients, kAttentionRollout };

const char* method_name(Method m);
Method method_from_name(const std::string& name);

// Per-pixel relevance scores for one (model, image) pair. Scores are
// non-negative and finite; an all-zero map (constant model) is returned
// with the degenerate flag set rather than rejected, so harnesses can
// report it.
struct RelevanceMap {
    Tensor scores;  // (H,W)
    Method method = Method::kSaliency;
    bool degenerate = false;
};

void validate_relevance(const RelevanceMap& map);

// Mean of all depths; the scalar whose input gradient drives the
// gradient-based methods.
double scalarize_depth(const Tensor& depth);

// Raw input gradient of the scalarized depth, shape (H,W,3).
Tensor depth_mean_gradient(const Model& model, const Tensor& image);

// Per-pixel max over channels of the absolute input gradient.
RelevanceMap saliency_map(const Model& model, const Tensor& image);

struct IgAttribution {
    RelevanceMap map;           // |channel-summed signed attribution|
    Tensor signed_channelwise;  // (H,W,C) signed attribution per channel
    Tensor signed_channel_sum;  // (H,W), kept for the completeness check
    double total;               // sum of all signed attributions
};

// Path-integral attribution from `baseline` to `image` with `steps`
// right-endpoint samples: (x - x') ⊙ mean_k ∇f(x' + (k/m)(x - x')).
RelevanceMap integrated_gradients(const Model& model, const Tensor& image, const Tensor& baseline,
                                  int steps);
IgAttribution integrated_gradients_detailed(const Model& model, const Tensor& image,
                                            const Tensor& baseline, int steps);

// Same computation against an arbitrary differentiable scalar function of
// the image; used for linear-model analyses.
using ScalarGraphFn = std::function<Var(const Var& image)>;
IgAttribution integrated_gradients_fn(const ScalarGraphFn& f, const Tensor& image, const Tensor& baseline,
                                      int steps);

enum class HeadAggregation { kMean, kMin, kMax };
const char* head_aggregation_name(HeadAggregation psi);
HeadAggregation head_aggregation_from_name(const std::string& name);

// Which mass of the rolled-out matrix scores a patch: the attention it
// receives (column mass, default) or the attention it emits (row mass,
// identically 1 for row-stochastic inputs; kept for sensitivity analysis).
enum class ImportanceAxis { kReceived, kEmitted };

struct RolloutConfig {
    HeadAggregation psi = HeadAggregation::kMin;
    double residual_weight = 0.5;  // fixed; validate() rejects anything else
    ImportanceAxis axis = ImportanceAxis::kReceived;
};

void validate(const RolloutConfig& config);

// Elementwise mean/min/max across heads; min/max rows are renormalized to
// sum to 1 so the rollout product stays an attention-flow distribution.
Tensor aggregate_heads(std::span<const Tensor> head_mats, HeadAggregation psi);

// M = B_last, then M = (B/2 + I/2) * M for earlier layers, last to first.
Tensor rollout_layers(std::span<const Tensor> layer_mats);

// Row mass: s_i = sum_j M0[i,j] (identically 1 for row-stochastic M0).
Tensor row_mass(const Tensor& m0);
// Column mass: s_j = sum_i M0[i,j], total attention received per patch.
Tensor column_mass(const Tensor& m0);

RelevanceMap attention_rollout(const AttentionStack& stack, const RolloutConfig& config,
                               std::int64_t height, std::int64_t width);
RelevanceMap attention_rollout(const Model& model, const Tensor& image, const RolloutConfig& config);

// Text serialization: "H W method" header then H rows of scores; the
// round-trip is value-exact.
void save_relevance(const RelevanceMap& map, const std::string& path);
RelevanceMap load_relevance(const std::string& path);
std::string relevance_to_text(const RelevanceMap& map);
RelevanceMap relevance_from_text(const std::string& text);

// Invocation counters, for harness tests that pin how often attribution runs.
std::uint64_t attribution_call_count();
void reset_attribution_call_count();

}  // namespace mdx
