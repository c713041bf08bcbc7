#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mdx/autodiff.hpp"
#include "mdx/scene.hpp"
#include "mdx/tensor.hpp"

namespace mdx {

enum class ModelKind { kConv, kAttention };

const char* model_kind_name(ModelKind kind);
ModelKind model_kind_from_name(const std::string& name);

// Architecture of the toy depth models. Conv: a stack of same-size 3x3
// convolutions ending in a single-channel head. Attention: patch embedding
// with positional offsets, `layers` transformer blocks with `heads` heads,
// a per-patch depth head and block upsampling back to pixels. Both end in a
// softplus so depth is strictly non-negative.
struct ArchSpec {
    ModelKind kind = ModelKind::kAttention;
    std::int64_t height = 32;
    std::int64_t width = 32;
    // conv
    std::int64_t conv_channels = 8;
    std::int64_t conv_layers = 2;  // hidden layers before the 1-channel head
    std::int64_t kernel_size = 3;
    // attention
    std::int64_t patch = 8;
    std::int64_t layers = 2;
    std::int64_t heads = 2;
    std::int64_t embed = 16;
    std::int64_t mlp_hidden = 32;

    std::int64_t patch_grid_h() const { return height / patch; }
    std::int64_t patch_grid_w() const { return width / patch; }
    std::int64_t patch_count() const { return patch_grid_h() * patch_grid_w(); }
    std::int64_t head_dim() const { return embed / heads; }
};

struct Param {
    std::string name;
    Tensor value;
};

struct Model {
    ArchSpec arch;
    std::uint64_t seed = 0;
    std::vector<Param> params;

    std::int64_t attention_layer_count() const {
        return arch.kind == ModelKind::kAttention ? arch.layers : 0;
    }
    const Tensor& param(const std::string& name) const;
    Tensor& param(const std::string& name);
};

// Post-softmax attention matrices of one forward pass: layers x heads
// row-stochastic (n,n) matrices, stored layer-major.
struct AttentionStack {
    std::int64_t layers = 0;
    std::int64_t heads = 0;
    std::int64_t patches = 0;
    std::vector<Tensor> matrices;

    bool empty() const { return matrices.empty(); }
    const Tensor& at(std::int64_t layer, std::int64_t head) const {
        return matrices[static_cast<std::size_t>(layer * heads + head)];
    }
};

struct Prediction {
    Tensor depth;              // (H,W), all values >= 0
    AttentionStack attention;  // empty for conv models
};

// Graph handles from one forward pass; used by attribution to differentiate
// the scalarized depth with respect to the image leaf.
struct ForwardGraph {
    Var depth;                  // (H,W)
    Var mean_depth;             // rank-0
    std::vector<Var> attention; // layer-major softmax outputs, empty for conv
};

Model build_model(const ArchSpec& arch, std::uint64_t seed);

// Pure: no state is mutated, identical inputs give identical outputs.
Prediction predict(const Model& model, const Tensor& image);

// param_vars, when given, must align with model.params (one Var each); the
// trainer passes gradient-tracking leaves, everyone else constants.
ForwardGraph forward_graph(const Model& model, const Var& image,
                           const std::vector<Var>* param_vars = nullptr);
std::vector<Var> make_param_vars(const Model& model, bool requires_grad);

struct TrainReport {
    // loss_history[0] is the loss at the initial parameters and
    // loss_history[epochs] the loss after the final update.
    std::vector<double> loss_history;
};

// Full-batch gradient descent on mean squared depth error.
TrainReport train(Model& model, const std::vector<Scene>& scenes, int epochs, double learning_rate);

// Flat text layout of (name, shape, values) records; byte-stable for a
// fixed model and exact round-trip.
void save_model(const Model& model, const std::string& path);
Model load_model(const std::string& path);

}  // namespace mdx
