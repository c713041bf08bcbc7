// mdx: synthetic scenes, toy depth models, input attribution maps, and the
// perturbation-based evaluation sweep, from one binary.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mdx/attribution.hpp"
#include "mdx/image_io.hpp"
#include "mdx/metrics.hpp"
#include "mdx/model.hpp"
#include "mdx/perturbation.hpp"
#include "mdx/rng.hpp"
#include "mdx/scene.hpp"
#include "mdx/sweep.hpp"

namespace fs = std::filesystem;
using namespace mdx;

namespace {

ArchSpec arch_from_flags(const std::string& kind, std::int64_t height, std::int64_t width,
                         std::int64_t patch, std::int64_t layers, std::int64_t heads, std::int64_t embed,
                         std::int64_t conv_channels) {
    ArchSpec arch;
    arch.kind = model_kind_from_name(kind);
    arch.height = height;
    arch.width = width;
    arch.patch = patch;
    arch.layers = layers;
    arch.heads = heads;
    arch.embed = embed;
    arch.conv_channels = conv_channels;
    return arch;
}

int cmd_generate(std::uint64_t seed, int count, std::int64_t height, std::int64_t width,
                 const std::string& out_dir) {
    fs::create_directories(out_dir);
    for (int i = 0; i < count; ++i) {
        const Scene scene = generate_scene(mix_seed(seed, static_cast<std::uint64_t>(i)), height, width);
        char name[64];
        std::snprintf(name, sizeof(name), "syn%03d", i);
        const fs::path stem = fs::path(out_dir) / name;
        write_png_rgb(stem.string() + ".png", unit_to_image(scene.image));
        render_depth(scene.depth_gt, stem.string() + "_depth.png");
    }
    std::printf("wrote %d scenes to %s\n", count, out_dir.c_str());
    return 0;
}

int cmd_train(const ArchSpec& arch, std::uint64_t model_seed, std::uint64_t scene_seed, int scene_count,
              int epochs, double lr, const std::string& out_path) {
    Model model = build_model(arch, model_seed);
    std::vector<Scene> scenes;
    scenes.reserve(static_cast<std::size_t>(scene_count));
    for (int i = 0; i < scene_count; ++i) {
        scenes.push_back(
            generate_scene(mix_seed(scene_seed, static_cast<std::uint64_t>(i)), arch.height, arch.width));
    }
    const TrainReport report = train(model, scenes, epochs, lr);
    save_model(model, out_path);
    std::printf("trained %s model for %d epochs on %d scenes: loss %.6g -> %.6g\n",
                model_kind_name(arch.kind), epochs, scene_count, report.loss_history.front(),
                report.loss_history.back());
    std::printf("saved model to %s\n", out_path.c_str());
    return 0;
}

int cmd_explain(const std::string& model_path, const std::string& image_path, std::uint64_t scene_seed,
                bool use_scene, const std::string& method_name_str, int ig_steps,
                const std::string& psi_name, const std::string& out_dir) {
    const Model model = load_model(model_path);
    Tensor image;
    std::string image_id;
    if (use_scene) {
        image = generate_scene(scene_seed, model.arch.height, model.arch.width).image;
        image_id = "syn" + std::to_string(scene_seed);
    } else {
        image = fit_to_dims(image_to_unit(read_image(image_path)), model.arch.height, model.arch.width);
        image_id = fs::path(image_path).stem().string();
    }

    const Method method = method_from_name(method_name_str);
    RelevanceMap map;
    switch (method) {
        case Method::kSaliency:
            map = saliency_map(model, image);
            break;
        case Method::kIntegratedGradients: {
            const Tensor baseline(std::vector<std::int64_t>{model.arch.height, model.arch.width, 3});
            map = integrated_gradients(model, image, baseline, ig_steps);
            break;
        }
        case Method::kAttentionRollout: {
            RolloutConfig rc;
            rc.psi = head_aggregation_from_name(psi_name);
            map = attention_rollout(model, image, rc);
            break;
        }
    }

    fs::create_directories(out_dir);
    const std::string stem = (fs::path(out_dir) / (image_id + "_" + method_name(method))).string();
    save_relevance(map, stem + ".txt");
    const std::string png = render_relevance(map, RenderPalette{}, stem + ".png");
    write_png_rgb((fs::path(out_dir) / (image_id + "_input.png")).string(), unit_to_image(image));
    render_depth(predict(model, image).depth, (fs::path(out_dir) / (image_id + "_depth.png")).string());
    std::printf("explanation written: %s and %s\n", (stem + ".txt").c_str(), png.c_str());
    if (map.degenerate) std::printf("note: relevance map is degenerate (constant scores)\n");
    return 0;
}

int cmd_sweep(const SweepConfig& config, bool dump_config) {
    if (dump_config) {
        std::fputs(config_to_json_text(config).c_str(), stdout);
        return 0;
    }
    const SweepResult result = run_sweep(config);
    const auto written = write_sweep_outputs(result, config);
    for (const std::string& s : result.skipped_methods) std::printf("skip: %s\n", s.c_str());
    for (const std::string& f : result.failures) std::printf("failed image: %s\n", f.c_str());
    std::printf("sweep: %zu records over %zu cells, %zu files written\n", result.records.size(),
                result.aggregates.size(), written.size() + result.rendered_files.size());
    for (const std::string& path : written) std::printf("  %s\n", path.c_str());
    return 0;
}

int cmd_report(const std::string& records_path, const std::string& out_dir) {
    std::ifstream in(records_path);
    if (!in) throw std::runtime_error("report: cannot open '" + records_path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    const std::vector<EvalRecord> records = records_from_csv(buf.str());
    const std::vector<AggregateCell> cells = aggregate_records(records);
    fs::create_directories(out_dir);
    const fs::path agg_csv = fs::path(out_dir) / "aggregate.csv";
    const fs::path agg_json = fs::path(out_dir) / "aggregate.json";
    std::ofstream csv(agg_csv);
    csv << aggregates_to_csv(cells);
    std::ofstream js(agg_json);
    js << aggregates_to_json(cells);
    std::printf("re-aggregated %zu records into %zu cells: %s\n", records.size(), cells.size(),
                agg_csv.string().c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"attribution maps and perturbation-based evaluation for toy monocular depth models"};
    app.require_subcommand(1);

    // generate
    auto* generate = app.add_subcommand("generate", "write synthetic scenes as PNG files");
    std::uint64_t gen_seed = 7;
    int gen_count = 32;
    std::int64_t gen_h = 32, gen_w = 32;
    std::string gen_out = "scenes";
    generate->add_option("--seed", gen_seed, "generator seed");
    generate->add_option("--count", gen_count, "number of scenes");
    generate->add_option("--height", gen_h, "scene height");
    generate->add_option("--width", gen_w, "scene width");
    generate->add_option("--out", gen_out, "output directory");

    // train
    auto* train_cmd = app.add_subcommand("train", "train a toy depth model on synthetic scenes");
    std::string tr_kind = "attention";
    std::int64_t tr_h = 32, tr_w = 32, tr_patch = 8, tr_layers = 2, tr_heads = 2, tr_embed = 16,
                 tr_channels = 8;
    std::uint64_t tr_model_seed = 1, tr_scene_seed = 1000;
    int tr_scenes = 16, tr_epochs = 100;
    double tr_lr = 0.05;
    std::string tr_out = "model.txt";
    train_cmd->add_option("--kind", tr_kind, "conv|attention");
    train_cmd->add_option("--height", tr_h, "input height");
    train_cmd->add_option("--width", tr_w, "input width");
    train_cmd->add_option("--patch", tr_patch, "attention patch size");
    train_cmd->add_option("--layers", tr_layers, "attention layers");
    train_cmd->add_option("--heads", tr_heads, "attention heads");
    train_cmd->add_option("--embed", tr_embed, "embedding width");
    train_cmd->add_option("--conv-channels", tr_channels, "conv hidden channels");
    train_cmd->add_option("--seed", tr_model_seed, "model init seed");
    train_cmd->add_option("--scene-seed", tr_scene_seed, "training scene seed");
    train_cmd->add_option("--scenes", tr_scenes, "training scene count");
    train_cmd->add_option("--epochs", tr_epochs, "training epochs");
    train_cmd->add_option("--lr", tr_lr, "learning rate");
    train_cmd->add_option("--out", tr_out, "model output path");

    // explain
    auto* explain = app.add_subcommand("explain", "one image, one method: PNG + serialized map");
    std::string ex_model = "model.txt", ex_image, ex_method = "saliency", ex_psi = "min",
                ex_out = "explain_out";
    std::uint64_t ex_scene_seed = 7;
    int ex_ig_steps = defaults::kIgSteps;
    bool ex_synthetic = false;
    explain->add_option("--model", ex_model, "model file")->required();
    explain->add_option("--image", ex_image, "input image (.png/.ppm)");
    explain->add_flag("--synthetic", ex_synthetic, "use a synthetic scene instead of --image");
    explain->add_option("--scene-seed", ex_scene_seed, "seed for --synthetic");
    explain->add_option("--method", ex_method, "saliency|integrated_gradients|attention_rollout");
    explain->add_option("--ig-steps", ex_ig_steps, "integrated gradients steps");
    explain->add_option("--psi", ex_psi, "rollout head aggregation: mean|min|max");
    explain->add_option("--out", ex_out, "output directory");

    // sweep
    auto* sweep = app.add_subcommand("sweep", "full evaluation across methods x perturbations x fractions");
    std::string sw_config, sw_out, sw_model_file, sw_methods, sw_perturbations;
    std::uint64_t sw_seed = 0;
    int sw_ig_steps = -1, sw_fe_bins = -1, sw_render = -1, sw_count = -1;
    bool sw_dump = false;
    std::vector<double> sw_fractions;
    sweep->add_option("--config", sw_config, "JSON config file");
    sweep->add_option("--output-dir", sw_out, "override output directory");
    sweep->add_option("--model-file", sw_model_file, "override model file");
    sweep->add_option("--seed", sw_seed, "override global seed")->default_val(0);
    sweep->add_option("--ig-steps", sw_ig_steps, "override integrated gradients steps");
    sweep->add_option("--fe-bins", sw_fe_bins, "override faithfulness estimate bins");
    sweep->add_option("--render-count", sw_render, "override rendered image count");
    sweep->add_option("--count", sw_count, "override synthetic dataset size");
    sweep->add_option("--methods", sw_methods, "comma-separated method list override");
    sweep->add_option("--perturbations", sw_perturbations, "comma-separated perturbation list override");
    sweep->add_option("--fractions", sw_fractions, "fraction list override")->expected(-1);
    sweep->add_flag("--dump-config", sw_dump, "print the effective config and exit");

    // report
    auto* report = app.add_subcommand("report", "re-aggregate an existing records CSV");
    std::string rp_records = "out/records.csv", rp_out = "out";
    report->add_option("--records", rp_records, "records CSV path");
    report->add_option("--out", rp_out, "output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (generate->parsed()) return cmd_generate(gen_seed, gen_count, gen_h, gen_w, gen_out);
        if (train_cmd->parsed()) {
            const ArchSpec arch =
                arch_from_flags(tr_kind, tr_h, tr_w, tr_patch, tr_layers, tr_heads, tr_embed, tr_channels);
            return cmd_train(arch, tr_model_seed, tr_scene_seed, tr_scenes, tr_epochs, tr_lr, tr_out);
        }
        if (explain->parsed()) {
            if (!ex_synthetic && ex_image.empty()) {
                std::fprintf(stderr, "explain: pass --image or --synthetic\n");
                return 2;
            }
            return cmd_explain(ex_model, ex_image, ex_scene_seed, ex_synthetic, ex_method, ex_ig_steps,
                               ex_psi, ex_out);
        }
        if (sweep->parsed()) {
            SweepConfig config = sw_config.empty() ? SweepConfig{} : load_config(sw_config);
            if (!sw_out.empty()) config.output_dir = sw_out;
            if (!sw_model_file.empty()) {
                config.model.from_file = true;
                config.model.file = sw_model_file;
            }
            if (sw_seed != 0) config.seed = sw_seed;
            if (sw_ig_steps > 0) config.ig_steps = sw_ig_steps;
            if (sw_fe_bins > 0) config.fe_bins = sw_fe_bins;
            if (sw_render >= 0) config.render_count = sw_render;
            if (sw_count > 0) config.dataset.count = sw_count;
            if (!sw_methods.empty()) {
                config.methods.clear();
                std::stringstream ss(sw_methods);
                std::string item;
                while (std::getline(ss, item, ',')) config.methods.push_back(item);
            }
            if (!sw_perturbations.empty()) {
                config.perturbations.clear();
                std::stringstream ss(sw_perturbations);
                std::string item;
                while (std::getline(ss, item, ',')) {
                    PerturbSpec p;
                    p.kind = perturb_kind_from_name(item);
                    config.perturbations.push_back(p);
                }
            }
            if (!sw_fractions.empty()) config.fractions = sw_fractions;
            validate(config);
            return cmd_sweep(config, sw_dump);
        }
        if (report->parsed()) return cmd_report(rp_records, rp_out);
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
