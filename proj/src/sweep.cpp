#include "mdx/sweep.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "mdx/image_io.hpp"
#include "mdx/log.hpp"
#include "mdx/rng.hpp"

namespace fs = std::filesystem;

namespace mdx {

void validate(const SweepConfig& config) {
    if (config.methods.empty()) throw std::invalid_argument("config: methods list is empty");
    if (config.perturbations.empty()) throw std::invalid_argument("config: perturbations list is empty");
    if (config.fractions.empty()) throw std::invalid_argument("config: fractions list is empty");
    for (double f : config.fractions) {
        if (!(f > 0.0) || f > 0.5) {
            throw std::invalid_argument("config: fraction " + std::to_string(f) + " outside (0, 0.5]");
        }
    }
    for (const std::string& m : config.methods) method_from_name(m);  // throws on unknown
    for (const PerturbSpec& p : config.perturbations) validate(p);
    if (config.ig_steps < 1) throw std::invalid_argument("config: ig_steps must be >= 1");
    if (config.fe_bins < 2) throw std::invalid_argument("config: fe_bins must be >= 2");
    if (config.render_count < 0) throw std::invalid_argument("config: render_count must be >= 0");
    if (!config.model.from_file && config.model.train_epochs < 0) {
        throw std::invalid_argument("config: train_epochs must be >= 0");
    }
    if (!config.dataset.synthetic && config.dataset.dir.empty()) {
        throw std::invalid_argument("config: dataset directory not set");
    }
    if (config.dataset.synthetic && config.dataset.count < 1) {
        throw std::invalid_argument("config: synthetic dataset count must be >= 1");
    }
}

namespace {

using nlohmann::json;

ArchSpec arch_from_json(const json& j) {
    ArchSpec a;
    if (j.contains("kind")) a.kind = model_kind_from_name(j.at("kind").get<std::string>());
    a.height = j.value("height", a.height);
    a.width = j.value("width", a.width);
    a.conv_channels = j.value("conv_channels", a.conv_channels);
    a.conv_layers = j.value("conv_layers", a.conv_layers);
    a.kernel_size = j.value("kernel_size", a.kernel_size);
    a.patch = j.value("patch", a.patch);
    a.layers = j.value("layers", a.layers);
    a.heads = j.value("heads", a.heads);
    a.embed = j.value("embed", a.embed);
    a.mlp_hidden = j.value("mlp_hidden", a.mlp_hidden);
    return a;
}

json arch_to_json(const ArchSpec& a) {
    return json{{"kind", model_kind_name(a.kind)}, {"height", a.height},       {"width", a.width},
                {"conv_channels", a.conv_channels}, {"conv_layers", a.conv_layers},
                {"kernel_size", a.kernel_size},     {"patch", a.patch},        {"layers", a.layers},
                {"heads", a.heads},                 {"embed", a.embed},        {"mlp_hidden", a.mlp_hidden}};
}

PerturbSpec perturb_from_json(const json& j) {
    PerturbSpec p;
    p.kind = perturb_kind_from_name(j.at("kind").get<std::string>());
    p.mean = j.value("mean", p.mean);
    p.sigma = j.value("sigma", p.sigma);
    p.epsilon = j.value("epsilon", p.epsilon);
    p.epsilon_eightbit = j.value("epsilon_eightbit", p.epsilon_eightbit);
    return p;
}

json perturb_to_json(const PerturbSpec& p) {
    json j{{"kind", perturb_kind_name(p.kind)}};
    if (p.kind == PerturbKind::kGaussian) {
        j["mean"] = p.mean;
        j["sigma"] = p.sigma;
    }
    if (p.kind == PerturbKind::kFgsm) {
        j["epsilon"] = p.epsilon;
        j["epsilon_eightbit"] = p.epsilon_eightbit;
    }
    return j;
}

}  // namespace

SweepConfig config_from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument(std::string("config: invalid JSON: ") + e.what());
    }
    SweepConfig c;
    if (j.contains("model")) {
        const json& m = j.at("model");
        if (m.contains("file")) {
            c.model.from_file = true;
            c.model.file = m.at("file").get<std::string>();
        } else {
            c.model.arch = arch_from_json(m);
            c.model.seed = m.value("seed", c.model.seed);
            c.model.train_epochs = m.value("train_epochs", c.model.train_epochs);
            c.model.learning_rate = m.value("learning_rate", c.model.learning_rate);
            c.model.train_scene_seed = m.value("train_scene_seed", c.model.train_scene_seed);
            c.model.train_scene_count = m.value("train_scene_count", c.model.train_scene_count);
        }
    }
    if (j.contains("dataset")) {
        const json& d = j.at("dataset");
        if (d.contains("dir")) {
            c.dataset.synthetic = false;
            c.dataset.dir = d.at("dir").get<std::string>();
        } else {
            c.dataset.synthetic = true;
            c.dataset.seed = d.value("seed", c.dataset.seed);
            c.dataset.count = d.value("count", c.dataset.count);
        }
    }
    if (j.contains("methods")) c.methods = j.at("methods").get<std::vector<std::string>>();
    if (j.contains("perturbations")) {
        c.perturbations.clear();
        for (const json& p : j.at("perturbations")) c.perturbations.push_back(perturb_from_json(p));
    }
    if (j.contains("fractions")) c.fractions = j.at("fractions").get<std::vector<double>>();
    c.ig_steps = j.value("ig_steps", c.ig_steps);
    if (j.contains("rollout_psi")) {
        c.rollout_psi = head_aggregation_from_name(j.at("rollout_psi").get<std::string>());
    }
    if (j.contains("rollout_axis")) {
        const std::string axis = j.at("rollout_axis").get<std::string>();
        if (axis == "received") {
            c.rollout_axis = ImportanceAxis::kReceived;
        } else if (axis == "emitted") {
            c.rollout_axis = ImportanceAxis::kEmitted;
        } else {
            throw std::invalid_argument("config: rollout_axis must be received|emitted");
        }
    }
    c.fe_bins = j.value("fe_bins", c.fe_bins);
    c.render_count = j.value("render_count", c.render_count);
    c.render_all = j.value("render_all", c.render_all);
    c.output_dir = j.value("output_dir", c.output_dir);
    c.seed = j.value("seed", c.seed);
    validate(c);
    return c;
}

std::string config_to_json_text(const SweepConfig& c) {
    json j;
    if (c.model.from_file) {
        j["model"] = json{{"file", c.model.file}};
    } else {
        j["model"] = arch_to_json(c.model.arch);
        j["model"]["seed"] = c.model.seed;
        j["model"]["train_epochs"] = c.model.train_epochs;
        j["model"]["learning_rate"] = c.model.learning_rate;
        j["model"]["train_scene_seed"] = c.model.train_scene_seed;
        j["model"]["train_scene_count"] = c.model.train_scene_count;
    }
    if (c.dataset.synthetic) {
        j["dataset"] = json{{"seed", c.dataset.seed}, {"count", c.dataset.count}};
    } else {
        j["dataset"] = json{{"dir", c.dataset.dir}};
    }
    j["methods"] = c.methods;
    j["perturbations"] = json::array();
    for (const PerturbSpec& p : c.perturbations) j["perturbations"].push_back(perturb_to_json(p));
    j["fractions"] = c.fractions;
    j["ig_steps"] = c.ig_steps;
    j["rollout_psi"] = head_aggregation_name(c.rollout_psi);
    j["rollout_axis"] = c.rollout_axis == ImportanceAxis::kReceived ? "received" : "emitted";
    j["fe_bins"] = c.fe_bins;
    j["render_count"] = c.render_count;
    j["render_all"] = c.render_all;
    j["output_dir"] = c.output_dir;
    j["seed"] = c.seed;
    return j.dump(2) + "\n";
}

SweepConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("config: cannot open '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return config_from_json_text(buf.str());
}

std::vector<DatasetItem> load_dataset(const DatasetSpec& spec, std::int64_t height, std::int64_t width) {
    std::vector<DatasetItem> items;
    if (spec.synthetic) {
        if (spec.count < 1) throw std::invalid_argument("load_dataset: synthetic count must be >= 1");
        for (int i = 0; i < spec.count; ++i) {
            char id[32];
            std::snprintf(id, sizeof(id), "syn%03d", i);
            items.push_back({id, generate_scene(mix_seed(spec.seed, static_cast<std::uint64_t>(i)),
                                                height, width)});
        }
        return items;
    }

    if (!fs::is_directory(spec.dir)) {
        throw std::invalid_argument("load_dataset: '" + spec.dir + "' is not a directory");
    }
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(spec.dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string ext = entry.path().extension().string();
        if (ext == ".png" || ext == ".PNG" || ext == ".ppm" || ext == ".PPM") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const fs::path& f : files) {
        try {
            Tensor img = fit_to_dims(image_to_unit(read_image(f.string())), height, width);
            Scene scene;
            scene.image = std::move(img);
            items.push_back({f.stem().string(), std::move(scene)});
        } catch (const std::exception& e) {
            log::warn("load_dataset: skipping '" + f.string() + "': " + e.what());
        }
    }
    if (items.empty()) {
        throw std::runtime_error("load_dataset: no loadable images in '" + spec.dir + "'");
    }
    return items;
}

namespace {

Model resolve_model(const SweepConfig& config) {
    if (config.model.from_file) return load_model(config.model.file);
    Model model = build_model(config.model.arch, config.model.seed);
    if (config.model.train_epochs > 0) {
        std::vector<Scene> scenes;
        scenes.reserve(static_cast<std::size_t>(config.model.train_scene_count));
        for (int i = 0; i < config.model.train_scene_count; ++i) {
            scenes.push_back(generate_scene(mix_seed(config.model.train_scene_seed,
                                                     static_cast<std::uint64_t>(i)),
                                            config.model.arch.height, config.model.arch.width));
        }
        train(model, scenes, config.model.train_epochs, config.model.learning_rate);
    }
    return model;
}

struct ImageWork {
    std::vector<EvalRecord> records;
    std::vector<std::pair<std::string, RelevanceMap>> relevance_for_render;  // method name -> map
    Tensor depth;
    bool failed = false;
    std::string failure;
};

}  // namespace

SweepResult run_sweep(const SweepConfig& config) {
    validate(config);

    const Model model = resolve_model(config);
    const std::vector<DatasetItem> dataset =
        load_dataset(config.dataset, model.arch.height, model.arch.width);

    // Capability filter: attention-dependent methods need attention models.
    std::vector<std::string> methods;
    SweepResult result;
    for (const std::string& name : config.methods) {
        if (method_from_name(name) == Method::kAttentionRollout &&
            model.arch.kind != ModelKind::kAttention) {
            const std::string notice =
                "attention_rollout skipped: model kind '" + std::string(model_kind_name(model.arch.kind)) +
                "' exposes no attention weights";
            log::warn(notice);
            result.skipped_methods.push_back(notice);
            continue;
        }
        methods.push_back(name);
    }
    if (methods.empty()) throw std::invalid_argument("config: no applicable attribution methods");

    const bool needs_fgsm_grad =
        std::any_of(config.perturbations.begin(), config.perturbations.end(),
                    [](const PerturbSpec& p) { return p.kind == PerturbKind::kFgsm; });

    const Tensor baseline(std::vector<std::int64_t>{model.arch.height, model.arch.width, 3});  // black
    const std::uint64_t attr_calls_before = attribution_call_count();
    const std::int64_t n_images = static_cast<std::int64_t>(dataset.size());
    const std::int64_t n_render = config.render_all ? n_images
                                                    : std::min<std::int64_t>(config.render_count, n_images);
    std::vector<ImageWork> work(static_cast<std::size_t>(n_images));

#pragma omp parallel for schedule(dynamic)
    for (std::int64_t i = 0; i < n_images; ++i) {
        ImageWork& slot = work[static_cast<std::size_t>(i)];
        const DatasetItem& item = dataset[static_cast<std::size_t>(i)];
        try {
            const Tensor& image = item.scene.image;
            slot.depth = predict(model, image).depth;
            Tensor fgsm_grad;
            if (needs_fgsm_grad) fgsm_grad = depth_mean_gradient(model, image);
            const std::uint64_t image_seed = mix_seed(config.seed, static_cast<std::uint64_t>(i));

            for (std::size_t mi = 0; mi < methods.size(); ++mi) {
                const Method method = method_from_name(methods[mi]);
                RelevanceMap relevance;  // one map per (image, method), reused below
                switch (method) {
                    case Method::kSaliency:
                        relevance = saliency_map(model, image);
                        break;
                    case Method::kIntegratedGradients:
                        relevance = integrated_gradients(model, image, baseline, config.ig_steps);
                        break;
                    case Method::kAttentionRollout: {
                        RolloutConfig rc;
                        rc.psi = config.rollout_psi;
                        rc.axis = config.rollout_axis;
                        relevance = attention_rollout(model, image, rc);
                        break;
                    }
                }
                if (relevance.degenerate) {
                    log::warn("sweep: degenerate relevance map for image " + item.id + ", method " +
                              methods[mi]);
                }
                if (i < n_render) slot.relevance_for_render.emplace_back(methods[mi], relevance);

                for (std::size_t pi = 0; pi < config.perturbations.size(); ++pi) {
                    const PerturbSpec& pert = config.perturbations[pi];
                    const FeResult fe = faithfulness_estimate(
                        model, image, relevance, pert, config.fe_bins,
                        mix_seed(image_seed, 0xFE00 + mi * 16 + pi));
                    for (std::size_t fi = 0; fi < config.fractions.size(); ++fi) {
                        const double fraction = config.fractions[fi];
                        const PixelMask top = select_pixels(relevance, fraction, MaskSide::kTop);
                        const PixelMask bottom = select_pixels(relevance, fraction, MaskSide::kBottom);
                        const std::uint64_t cell = mi * 256 + pi * 16 + fi * 2;
                        const Tensor x_rel =
                            apply_perturbation(&model, image, top, pert, mix_seed(image_seed, cell),
                                               needs_fgsm_grad ? &fgsm_grad : nullptr);
                        const Tensor x_irr =
                            apply_perturbation(&model, image, bottom, pert, mix_seed(image_seed, cell + 1),
                                               needs_fgsm_grad ? &fgsm_grad : nullptr);
                        const DepthErrorPair pair = depth_error_pair_from(model, slot.depth, x_rel, x_irr);
                        EvalRecord record;
                        record.image_id = item.id;
                        record.method = methods[mi];
                        record.perturbation = perturb_kind_name(pert.kind);
                        record.fraction = fraction;
                        record.r_err = pair.relevant_err;
                        record.i_err = pair.irrelevant_err;
                        record.af = attribution_fidelity(pair);
                        record.fe = fe.value;
                        slot.records.push_back(std::move(record));
                    }
                }
            }
        } catch (const std::exception& e) {
            slot.failed = true;
            slot.failure = item.id + ": " + e.what();
            slot.records.clear();
        }
    }

    // Deterministic fold in image order, whatever the schedule did.
    for (const ImageWork& slot : work) {
        if (slot.failed) {
            log::warn("sweep: image failed and is excluded: " + slot.failure);
            result.failures.push_back(slot.failure);
            continue;
        }
        result.records.insert(result.records.end(), slot.records.begin(), slot.records.end());
    }
    if (result.records.empty()) throw std::runtime_error("sweep: every image failed");

    // Aggregate in (method, perturbation, fraction) order.
    std::vector<EvalRecord> ordered;
    ordered.reserve(result.records.size());
    for (const std::string& m : methods)
        for (const PerturbSpec& p : config.perturbations)
            for (double f : config.fractions)
                for (const EvalRecord& r : result.records)
                    if (r.method == m && r.perturbation == perturb_kind_name(p.kind) && r.fraction == f)
                        ordered.push_back(r);
    result.aggregates = aggregate_records(ordered);
    result.attribution_calls = attribution_call_count() - attr_calls_before;

    // Render the first few images: input, predicted depth, relevance maps.
    if (n_render > 0) {
        const fs::path render_dir = fs::path(config.output_dir) / "renders";
        fs::create_directories(render_dir);
        RenderPalette palette;
        for (std::int64_t i = 0; i < n_render; ++i) {
            const ImageWork& slot = work[static_cast<std::size_t>(i)];
            if (slot.failed) continue;
            const std::string stem = (render_dir / dataset[static_cast<std::size_t>(i)].id).string();
            write_png_rgb(stem + "_input.png", unit_to_image(dataset[static_cast<std::size_t>(i)].scene.image));
            result.rendered_files.push_back(stem + "_input.png");
            render_depth(slot.depth, stem + "_depth.png");
            result.rendered_files.push_back(stem + "_depth.png");
            for (const auto& [name, map] : slot.relevance_for_render) {
                result.rendered_files.push_back(render_relevance(map, palette, stem + "_" + name + ".png"));
            }
        }
    }
    return result;
}

std::vector<std::string> write_sweep_outputs(const SweepResult& result, const SweepConfig& config) {
    fs::create_directories(config.output_dir);
    const fs::path dir(config.output_dir);
    std::vector<std::string> written;
    auto write_file = [&written](const fs::path& path, const std::string& content) {
        std::ofstream out(path);
        if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
        out << content;
        if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
        written.push_back(path.string());
    };
    write_file(dir / "records.csv", records_to_csv(result.records));
    write_file(dir / "records.json", records_to_json(result.records));
    write_file(dir / "aggregate.csv", aggregates_to_csv(result.aggregates));
    write_file(dir / "aggregate.json", aggregates_to_json(result.aggregates));
    return written;
}

}  // namespace mdx
