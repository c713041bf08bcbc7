#include "mdx/model.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "mdx/log.hpp"
#include "mdx/rng.hpp"

namespace mdx {

const char* model_kind_name(ModelKind kind) {
    return kind == ModelKind::kConv ? "conv" : "attention";
}

ModelKind model_kind_from_name(const std::string& name) {
    if (name == "conv") return ModelKind::kConv;
    if (name == "attention") return ModelKind::kAttention;
    throw std::invalid_argument("unknown model kind '" + name + "' (expected conv|attention)");
}

const Tensor& Model::param(const std::string& name) const {
    for (const auto& p : params)
        if (p.name == name) return p.value;
    throw std::out_of_range("model has no parameter '" + name + "'");
}

Tensor& Model::param(const std::string& name) {
    for (auto& p : params)
        if (p.name == name) return p.value;
    throw std::out_of_range("model has no parameter '" + name + "'");
}

namespace {

void validate_arch(const ArchSpec& a) {
    if (a.height < 1 || a.width < 1) throw std::invalid_argument("arch: non-positive image dims");
    if (a.kind == ModelKind::kConv) {
        if (a.conv_channels < 1) throw std::invalid_argument("arch: conv_channels must be >= 1");
        if (a.conv_layers < 1) throw std::invalid_argument("arch: conv_layers must be >= 1");
        if (a.kernel_size < 1 || a.kernel_size % 2 == 0) {
            throw std::invalid_argument("arch: kernel_size must be odd for same-size convolutions");
        }
        return;
    }
    if (a.patch < 1 || a.height % a.patch != 0 || a.width % a.patch != 0) {
        throw std::invalid_argument("arch: patch size " + std::to_string(a.patch) +
                                    " does not divide image dims " + std::to_string(a.height) + "x" +
                                    std::to_string(a.width));
    }
    if (a.layers < 1) throw std::invalid_argument("arch: attention model needs at least 1 layer");
    if (a.heads < 1) throw std::invalid_argument("arch: attention model needs at least 1 head");
    if (a.embed % a.heads != 0) {
        throw std::invalid_argument("arch: head count " + std::to_string(a.heads) +
                                    " does not divide embedding width " + std::to_string(a.embed));
    }
    if (a.mlp_hidden < 1) throw std::invalid_argument("arch: mlp_hidden must be >= 1");
}

Tensor init_uniform(std::vector<std::int64_t> shape, double bound, std::mt19937_64& rng) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
    return t;
}

double fan_in_bound(std::int64_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }

}  // namespace

Model build_model(const ArchSpec& arch, std::uint64_t seed) {
    validate_arch(arch);
    Model m;
    m.arch = arch;
    m.seed = seed;
    auto rng = make_rng(seed);

    auto push = [&m](std::string name, Tensor t) { m.params.push_back({std::move(name), std::move(t)}); };

    if (arch.kind == ModelKind::kConv) {
        const std::int64_t k = arch.kernel_size;
        std::int64_t in_ch = 3;
        for (std::int64_t l = 0; l < arch.conv_layers; ++l) {
            const double s = fan_in_bound(k * k * in_ch);
            push("conv" + std::to_string(l) + ".w", init_uniform({k, k, in_ch, arch.conv_channels}, s, rng));
            push("conv" + std::to_string(l) + ".b", init_uniform({arch.conv_channels}, s, rng));
            in_ch = arch.conv_channels;
        }
        const double s = fan_in_bound(k * k * in_ch);
        push("head.w", init_uniform({k, k, in_ch, 1}, s, rng));
        push("head.b", init_uniform({1}, s, rng));
        return m;
    }

    const std::int64_t n = arch.patch_count();
    const std::int64_t d = arch.embed;
    const std::int64_t dh = arch.head_dim();
    const std::int64_t pdim = arch.patch * arch.patch * 3;

    push("embed.w", init_uniform({pdim, d}, fan_in_bound(pdim), rng));
    push("embed.b", init_uniform({d}, fan_in_bound(pdim), rng));
    // Positional offsets get a wide init so untrained attention is already
    // patch-dependent rather than uniform.
    push("pos", init_uniform({n, d}, 1.0, rng));
    for (std::int64_t l = 0; l < arch.layers; ++l) {
        const std::string lp = "layer" + std::to_string(l) + ".";
        for (std::int64_t h = 0; h < arch.heads; ++h) {
            const std::string hp = lp + "head" + std::to_string(h) + ".";
            const double sd = fan_in_bound(d);
            push(hp + "wq", init_uniform({d, dh}, sd, rng));
            push(hp + "wk", init_uniform({d, dh}, sd, rng));
            push(hp + "wv", init_uniform({d, dh}, sd, rng));
            push(hp + "wo", init_uniform({dh, d}, fan_in_bound(dh), rng));
        }
        push(lp + "mlp1.w", init_uniform({d, arch.mlp_hidden}, fan_in_bound(d), rng));
        push(lp + "mlp1.b", init_uniform({arch.mlp_hidden}, fan_in_bound(d), rng));
        push(lp + "mlp2.w", init_uniform({arch.mlp_hidden, d}, fan_in_bound(arch.mlp_hidden), rng));
        push(lp + "mlp2.b", init_uniform({d}, fan_in_bound(arch.mlp_hidden), rng));
    }
    push("head.w", init_uniform({d, 1}, fan_in_bound(d), rng));
    push("head.b", init_uniform({1}, fan_in_bound(d), rng));
    return m;
}

std::vector<Var> make_param_vars(const Model& model, bool requires_grad) {
    std::vector<Var> vars;
    vars.reserve(model.params.size());
    for (const auto& p : model.params) vars.push_back(make_leaf(p.value, requires_grad));
    return vars;
}

namespace {

class ParamLookup {
  public:
    ParamLookup(const Model& m, const std::vector<Var>* vars) : model_(m), vars_(vars) {
        if (vars_ && vars_->size() != m.params.size()) {
            throw std::invalid_argument("forward_graph: param_vars does not align with model parameters");
        }
    }
    Var operator()(const std::string& name) const {
        for (std::size_t i = 0; i < model_.params.size(); ++i) {
            if (model_.params[i].name == name) {
                return vars_ ? (*vars_)[i] : make_constant(model_.params[i].value);
            }
        }
        throw std::out_of_range("model has no parameter '" + name + "'");
    }

  private:
    const Model& model_;
    const std::vector<Var>* vars_;
};

ForwardGraph forward_conv(const Model& m, const Var& image, const ParamLookup& P) {
    const ArchSpec& a = m.arch;
    const std::int64_t pad = (a.kernel_size - 1) / 2;
    Var h = image;
    for (std::int64_t l = 0; l < a.conv_layers; ++l) {
        const std::string lp = "conv" + std::to_string(l);
        h = softplus(conv2d(h, P(lp + ".w"), P(lp + ".b"), pad));
    }
    Var logits = conv2d(h, P("head.w"), P("head.b"), pad);  // (H,W,1)
    ForwardGraph g;
    g.depth = softplus(reshape(logits, {a.height, a.width}));
    g.mean_depth = mean_all(g.depth);
    return g;
}

ForwardGraph forward_attention(const Model& m, const Var& image, const ParamLookup& P) {
    const ArchSpec& a = m.arch;
    const double attn_scale = 1.0 / std::sqrt(static_cast<double>(a.head_dim()));

    Var tokens = add(add_bias(matmul(patchify(image, a.patch), P("embed.w")), P("embed.b")), P("pos"));

    ForwardGraph g;
    for (std::int64_t l = 0; l < a.layers; ++l) {
        const std::string lp = "layer" + std::to_string(l) + ".";
        Var attn_out;
        for (std::int64_t hd = 0; hd < a.heads; ++hd) {
            const std::string hp = lp + "head" + std::to_string(hd) + ".";
            Var q = matmul(tokens, P(hp + "wq"));
            Var k = matmul(tokens, P(hp + "wk"));
            Var v = matmul(tokens, P(hp + "wv"));
            Var attn = softmax_last(scale(matmul(q, transpose(k)), attn_scale));
            g.attention.push_back(attn);
            Var head_out = matmul(matmul(attn, v), P(hp + "wo"));
            attn_out = attn_out.defined() ? add(attn_out, head_out) : head_out;
        }
        tokens = add(tokens, attn_out);
        Var mlp = add_bias(
            matmul(softplus(add_bias(matmul(tokens, P(lp + "mlp1.w")), P(lp + "mlp1.b"))), P(lp + "mlp2.w")),
            P(lp + "mlp2.b"));
        tokens = add(tokens, mlp);
    }

    Var patch_depth = add_bias(matmul(tokens, P("head.w")), P("head.b"));  // (n,1)
    Var grid = reshape(patch_depth, {a.patch_grid_h(), a.patch_grid_w()});
    g.depth = softplus(upsample_nearest(grid, a.patch));
    g.mean_depth = mean_all(g.depth);
    return g;
}

}  // namespace

ForwardGraph forward_graph(const Model& model, const Var& image, const std::vector<Var>* param_vars) {
    const Tensor& v = image.value();
    if (v.rank() != 3 || v.dim(0) != model.arch.height || v.dim(1) != model.arch.width || v.dim(2) != 3) {
        throw std::invalid_argument("forward: image shape " + v.shape_str() + " does not match model input " +
                                    std::to_string(model.arch.height) + "x" +
                                    std::to_string(model.arch.width) + "x3");
    }
    ParamLookup P(model, param_vars);
    return model.arch.kind == ModelKind::kConv ? forward_conv(model, image, P)
                                               : forward_attention(model, image, P);
}

Prediction predict(const Model& model, const Tensor& image) {
    ForwardGraph g = forward_graph(model, make_constant(image));
    Prediction p;
    p.depth = g.depth.value();
    if (model.arch.kind == ModelKind::kAttention) {
        p.attention.layers = model.arch.layers;
        p.attention.heads = model.arch.heads;
        p.attention.patches = model.arch.patch_count();
        p.attention.matrices.reserve(g.attention.size());
        for (const Var& a : g.attention) p.attention.matrices.push_back(a.value());
    }
    return p;
}

TrainReport train(Model& model, const std::vector<Scene>& scenes, int epochs, double learning_rate) {
    if (scenes.empty()) throw std::invalid_argument("train: no scenes");
    if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
    for (const Scene& s : scenes) {
        if (s.image.rank() != 3 || s.image.dim(0) != model.arch.height ||
            s.image.dim(1) != model.arch.width) {
            throw std::invalid_argument("train: scene image shape " + s.image.shape_str() +
                                        " does not match model input");
        }
        if (s.depth_gt.size() == 0) throw std::invalid_argument("train: scene has no ground-truth depth");
    }

    const std::size_t n_params = model.params.size();
    const std::int64_t n_scenes = static_cast<std::int64_t>(scenes.size());
    const double inv_scenes = 1.0 / static_cast<double>(n_scenes);

    TrainReport report;

    auto epoch_pass = [&](bool update) -> double {
        // Per-scene losses and parameter gradients land in per-scene slots,
        // then fold in scene order so the result is schedule-independent.
        std::vector<double> losses(static_cast<std::size_t>(n_scenes), 0.0);
        std::vector<std::vector<Tensor>> grads(static_cast<std::size_t>(n_scenes));
        std::string error_msg;
#pragma omp parallel for schedule(dynamic)
        for (std::int64_t s = 0; s < n_scenes; ++s) {
            try {
                std::vector<Var> pvars = make_param_vars(model, update);
                ForwardGraph g = forward_graph(model, make_constant(scenes[static_cast<std::size_t>(s)].image),
                                               &pvars);
                Var err = sub(g.depth, make_constant(scenes[static_cast<std::size_t>(s)].depth_gt));
                Var loss = mean_all(mul(err, err));
                losses[static_cast<std::size_t>(s)] = loss.value()[0];
                if (update) {
                    run_backward(loss);
                    auto& slot = grads[static_cast<std::size_t>(s)];
                    slot.reserve(n_params);
                    for (const Var& pv : pvars) slot.push_back(pv.grad());
                }
            } catch (const std::exception& e) {
#pragma omp critical
                error_msg = e.what();
            }
        }
        if (!error_msg.empty()) throw std::runtime_error(error_msg);

        double total = 0.0;
        for (std::int64_t s = 0; s < n_scenes; ++s) total += losses[static_cast<std::size_t>(s)];
        total *= inv_scenes;

        if (update) {
            for (std::size_t p = 0; p < n_params; ++p) {
                Tensor& value = model.params[p].value;
                for (std::int64_t s = 0; s < n_scenes; ++s) {
                    const Tensor& g = grads[static_cast<std::size_t>(s)][p];
                    for (std::int64_t i = 0; i < value.size(); ++i) {
                        value[i] -= learning_rate * inv_scenes * g[i];
                    }
                }
            }
        }
        return total;
    };

    for (int e = 0; e < epochs; ++e) {
        const double loss = epoch_pass(true);
        if (!std::isfinite(loss)) {
            throw std::runtime_error("train: loss diverged (non-finite) at epoch " + std::to_string(e));
        }
        report.loss_history.push_back(loss);
    }
    report.loss_history.push_back(epoch_pass(false));  // loss after the final update
    return report;
}

namespace {

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

void save_model(const Model& model, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_model: cannot open '" + path + "' for writing");
    out << "toy-mde-model v1\n";
    out << "kind " << model_kind_name(model.arch.kind) << "\n";
    out << "seed " << model.seed << "\n";
    const ArchSpec& a = model.arch;
    out << "arch " << a.height << " " << a.width << " " << a.conv_channels << " " << a.conv_layers << " "
        << a.kernel_size << " " << a.patch << " " << a.layers << " " << a.heads << " " << a.embed << " "
        << a.mlp_hidden << "\n";
    out << "params " << model.params.size() << "\n";
    for (const auto& p : model.params) {
        out << p.name << " " << p.value.rank();
        for (auto d : p.value.shape()) out << " " << d;
        out << "\n";
        for (std::int64_t i = 0; i < p.value.size(); ++i) {
            if (i) out << " ";
            out << format_double(p.value[i]);
        }
        out << "\n";
    }
    out << "end\n";
    if (!out) throw std::runtime_error("save_model: write failed for '" + path + "'");
}

Model load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_model: cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line) || line != "toy-mde-model v1") {
        throw std::runtime_error("load_model: '" + path + "' is not a toy-mde-model v1 file");
    }
    Model m;
    std::string word;
    in >> word;
    if (word != "kind") throw std::runtime_error("load_model: expected 'kind'");
    in >> word;
    m.arch.kind = model_kind_from_name(word);
    in >> word >> m.seed;
    if (word != "seed") throw std::runtime_error("load_model: expected 'seed'");
    in >> word;
    if (word != "arch") throw std::runtime_error("load_model: expected 'arch'");
    ArchSpec& a = m.arch;
    in >> a.height >> a.width >> a.conv_channels >> a.conv_layers >> a.kernel_size >> a.patch >> a.layers >>
        a.heads >> a.embed >> a.mlp_hidden;
    std::size_t count = 0;
    in >> word >> count;
    if (word != "params") throw std::runtime_error("load_model: expected 'params'");
    for (std::size_t p = 0; p < count; ++p) {
        Param param;
        int rank = 0;
        in >> param.name >> rank;
        std::vector<std::int64_t> shape(static_cast<std::size_t>(rank));
        for (auto& d : shape) in >> d;
        const std::int64_t n = shape_product(shape);
        std::vector<double> values(static_cast<std::size_t>(n));
        for (auto& v : values) in >> v;
        if (!in) throw std::runtime_error("load_model: truncated parameter '" + param.name + "'");
        param.value = Tensor(std::move(shape), std::move(values));
        m.params.push_back(std::move(param));
    }
    in >> word;
    if (word != "end") throw std::runtime_error("load_model: missing 'end' marker");
    validate_arch(m.arch);
    return m;
}

}  // namespace mdx
