#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mdx/attribution.hpp"
#include "mdx/model.hpp"
#include "mdx/tensor.hpp"

namespace mdx {

namespace defaults {
inline constexpr double kGaussianMean = 0.0;
inline constexpr double kGaussianSigma = 0.8;
inline constexpr double kFgsmEpsilon = 3.0;
}  // namespace defaults

enum class MaskSide { kTop, kBottom };
const char* mask_side_name(MaskSide side);

struct PixelMask {
    std::int64_t height = 0;
    std::int64_t width = 0;
    std::vector<std::uint8_t> selected;  // row-major H*W
    double fraction = 0.0;
    MaskSide which = MaskSide::kTop;

    std::int64_t count() const;
    bool at(std::int64_t y, std::int64_t x) const {
        return selected[static_cast<std::size_t>(y * width + x)] != 0;
    }
};

// Pixel indices in descending relevance; ties broken by row-major index.
std::vector<std::int64_t> rank_pixels(const RelevanceMap& relevance);

// First (top) or last (bottom) round(fraction*H*W) pixels of the ranking.
// fraction must lie in (0, 0.5] so top and bottom never overlap.
PixelMask select_pixels(const RelevanceMap& relevance, double fraction, MaskSide which);

enum class PerturbKind { kBlack, kGaussian, kFgsm };
const char* perturb_kind_name(PerturbKind kind);
PerturbKind perturb_kind_from_name(const std::string& name);

struct PerturbSpec {
    PerturbKind kind = PerturbKind::kBlack;
    double mean = defaults::kGaussianMean;
    double sigma = defaults::kGaussianSigma;
    double epsilon = defaults::kFgsmEpsilon;
    // Epsilon is quoted on the 8-bit pixel scale; the step applied in [0,1]
    // space is epsilon/255. Turn off to apply epsilon raw.
    bool epsilon_eightbit = true;
    std::uint64_t seed = 0;

    double fgsm_step() const { return epsilon_eightbit ? epsilon / 255.0 : epsilon; }
};

void validate(const PerturbSpec& spec);

// All perturbers are the identity off-mask and clamp results to [0,1].
Tensor perturb_black(const Tensor& image, const PixelMask& mask);
Tensor perturb_gaussian(const Tensor& image, const PixelMask& mask, double mean, double sigma,
                        std::uint64_t seed);
// Ascends the scalarized mean depth: x + step * sign(grad) on masked pixels.
// The gradient is the full-image input gradient restricted to the mask.
Tensor perturb_fgsm(const Model& model, const Tensor& image, const PixelMask& mask, double epsilon,
                    bool epsilon_eightbit = true);
Tensor perturb_fgsm_with_gradient(const Tensor& image, const PixelMask& mask, const Tensor& gradient,
                                  double epsilon, bool epsilon_eightbit = true);

// Dispatch on spec.kind; `model` is only needed for fgsm, and a cached
// input gradient skips the backward pass.
Tensor apply_perturbation(const Model* model, const Tensor& image, const PixelMask& mask,
                          const PerturbSpec& spec, std::uint64_t seed,
                          const Tensor* cached_gradient = nullptr);

// The raw noise stream behind perturb_gaussian (pre-clamp), for statistics.
std::vector<double> gaussian_noise(std::int64_t count, double mean, double sigma, std::uint64_t seed);

// Run-length encoded debug dump: "H W which fraction" then "start:len" runs.
std::string mask_to_rle(const PixelMask& mask);
PixelMask mask_from_rle(const std::string& text);

}  // namespace mdx
