#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mdx/attribution.hpp"
#include "mdx/metrics.hpp"
#include "mdx/model.hpp"
#include "mdx/perturbation.hpp"
#include "mdx/scene.hpp"

namespace mdx {

namespace defaults {
inline constexpr int kIgSteps = 200;
inline constexpr HeadAggregation kRolloutPsi = HeadAggregation::kMin;
inline constexpr int kFeBins = 16;
inline constexpr int kRenderCount = 8;
inline constexpr double kFractions[] = {0.01, 0.05, 0.10};
}  // namespace defaults

struct DatasetSpec {
    bool synthetic = true;
    std::uint64_t seed = 7;
    int count = 32;
    std::string dir;  // used when synthetic == false
};

struct ModelSource {
    bool from_file = false;
    std::string file;
    ArchSpec arch;
    std::uint64_t seed = 1;
    // Optional quick fit on synthetic scenes before the sweep (0 = none).
    int train_epochs = 0;
    double learning_rate = 0.05;
    std::uint64_t train_scene_seed = 1000;
    int train_scene_count = 16;
};

struct SweepConfig {
    ModelSource model;
    DatasetSpec dataset;
    std::vector<std::string> methods = {"saliency", "integrated_gradients", "attention_rollout"};
    std::vector<PerturbSpec> perturbations = {
        {.kind = PerturbKind::kBlack},
        {.kind = PerturbKind::kGaussian},
        {.kind = PerturbKind::kFgsm},
    };
    std::vector<double> fractions{std::begin(defaults::kFractions), std::end(defaults::kFractions)};
    int ig_steps = defaults::kIgSteps;
    HeadAggregation rollout_psi = defaults::kRolloutPsi;
    ImportanceAxis rollout_axis = ImportanceAxis::kReceived;
    int fe_bins = defaults::kFeBins;
    int render_count = defaults::kRenderCount;
    bool render_all = false;
    std::string output_dir = "out";
    std::uint64_t seed = 1234;
};

void validate(const SweepConfig& config);
SweepConfig load_config(const std::string& path);
SweepConfig config_from_json_text(const std::string& text);
std::string config_to_json_text(const SweepConfig& config);

// Scenes plus stable per-image ids (dataset order).
struct DatasetItem {
    std::string id;
    Scene scene;
};

// Synthetic: `count` deterministic scenes. Directory: 8-bit RGB images
// (.png/.ppm) in filename order, normalized to [0,1] and fitted to the
// model dims by shorter-side bilinear scaling plus center crop. Unreadable
// files are skipped with a warning; an empty dataset is an error.
std::vector<DatasetItem> load_dataset(const DatasetSpec& spec, std::int64_t height, std::int64_t width);

struct SweepResult {
    std::vector<EvalRecord> records;
    std::vector<AggregateCell> aggregates;
    std::vector<std::string> skipped_methods;  // one notice per inapplicable method
    std::vector<std::string> failures;         // per-image failures, excluded from aggregates
    std::vector<std::string> rendered_files;
    std::uint64_t attribution_calls = 0;
};

// The full evaluation: relevance once per (image, method), then every
// perturbation x fraction cell; deterministic for a fixed config and seed.
SweepResult run_sweep(const SweepConfig& config);

// records.csv / records.json / aggregate.csv / aggregate.json under
// config.output_dir; returns the list of written paths.
std::vector<std::string> write_sweep_outputs(const SweepResult& result, const SweepConfig& config);

}  // namespace mdx
