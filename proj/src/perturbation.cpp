#include "mdx/perturbation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "mdx/rng.hpp"

namespace mdx {

const char* mask_side_name(MaskSide side) { return side == MaskSide::kTop ? "top" : "bottom"; }

std::int64_t PixelMask::count() const {
    return static_cast<std::int64_t>(std::count(selected.begin(), selected.end(), std::uint8_t{1}));
}

std::vector<std::int64_t> rank_pixels(const RelevanceMap& relevance) {
    const Tensor& s = relevance.scores;
    if (s.rank() != 2 || s.size() == 0) {
        throw std::invalid_argument("rank_pixels: relevance scores must be a non-empty (H,W) grid");
    }
    std::vector<std::int64_t> order(static_cast<std::size_t>(s.size()));
    std::iota(order.begin(), order.end(), std::int64_t{0});
    std::sort(order.begin(), order.end(), [&s](std::int64_t a, std::int64_t b) {
        if (s[a] != s[b]) return s[a] > s[b];
        return a < b;
    });
    return order;
}

PixelMask select_pixels(const RelevanceMap& relevance, double fraction, MaskSide which) {
    if (!(fraction > 0.0) || fraction > 0.5) {
        throw std::invalid_argument("select_pixels: fraction must be in (0, 0.5], got " +
                                    std::to_string(fraction));
    }
    const std::vector<std::int64_t> order = rank_pixels(relevance);
    const std::int64_t total = static_cast<std::int64_t>(order.size());
    const std::int64_t k = std::llround(fraction * static_cast<double>(total));

    PixelMask mask;
    mask.height = relevance.scores.dim(0);
    mask.width = relevance.scores.dim(1);
    mask.selected.assign(static_cast<std::size_t>(total), 0);
    mask.fraction = fraction;
    mask.which = which;
    for (std::int64_t i = 0; i < k; ++i) {
        const std::int64_t pix = which == MaskSide::kTop ? order[static_cast<std::size_t>(i)]
                                                         : order[static_cast<std::size_t>(total - 1 - i)];
        mask.selected[static_cast<std::size_t>(pix)] = 1;
    }
    return mask;
}

const char* perturb_kind_name(PerturbKind kind) {
    switch (kind) {
        case PerturbKind::kBlack: return "black";
        case PerturbKind::kGaussian: return "gauss";
        case PerturbKind::kFgsm: return "fgsm";
    }
    return "unknown";
}

PerturbKind perturb_kind_from_name(const std::string& name) {
    if (name == "black") return PerturbKind::kBlack;
    if (name == "gauss" || name == "gaussian") return PerturbKind::kGaussian;
    if (name == "fgsm") return PerturbKind::kFgsm;
    throw std::invalid_argument("unknown perturbation '" + name + "' (expected black|gauss|fgsm)");
}

void validate(const PerturbSpec& spec) {
    if (spec.kind == PerturbKind::kGaussian && !(spec.sigma > 0.0)) {
        throw std::invalid_argument("perturbation: gaussian sigma must be > 0");
    }
    if (spec.kind == PerturbKind::kFgsm && !(spec.epsilon > 0.0)) {
        throw std::invalid_argument("perturbation: fgsm epsilon must be > 0");
    }
}

namespace {

void check_mask(const Tensor& image, const PixelMask& mask, const char* op) {
    if (image.rank() != 3 || image.dim(2) != 3) {
        throw std::invalid_argument(std::string(op) + ": expected (H,W,3) image, got " + image.shape_str());
    }
    if (mask.height != image.dim(0) || mask.width != image.dim(1)) {
        throw std::invalid_argument(std::string(op) + ": mask " + std::to_string(mask.height) + "x" +
                                    std::to_string(mask.width) + " does not match image " +
                                    image.shape_str());
    }
}

}  // namespace

Tensor perturb_black(const Tensor& image, const PixelMask& mask) {
    check_mask(image, mask, "perturb_black");
    Tensor out = image;
    for (std::int64_t y = 0; y < mask.height; ++y)
        for (std::int64_t x = 0; x < mask.width; ++x)
            if (mask.at(y, x))
                for (std::int64_t c = 0; c < 3; ++c) out.at3(y, x, c) = 0.0;
    return out;
}

std::vector<double> gaussian_noise(std::int64_t count, double mean, double sigma, std::uint64_t seed) {
    auto rng = make_rng(seed);
    std::normal_distribution<double> dist(mean, sigma);
    std::vector<double> noise(static_cast<std::size_t>(count));
    for (auto& v : noise) v = dist(rng);
    return noise;
}

Tensor perturb_gaussian(const Tensor& image, const PixelMask& mask, double mean, double sigma,
                        std::uint64_t seed) {
    check_mask(image, mask, "perturb_gaussian");
    if (!(sigma > 0.0)) throw std::invalid_argument("perturb_gaussian: sigma must be > 0");
    Tensor out = image;
    // One draw per masked pixel-channel, in row-major order: the stream is a
    // pure function of the seed and the mask.
    const std::vector<double> noise = gaussian_noise(3 * mask.count(), mean, sigma, seed);
    std::size_t next = 0;
    for (std::int64_t y = 0; y < mask.height; ++y)
        for (std::int64_t x = 0; x < mask.width; ++x)
            if (mask.at(y, x))
                for (std::int64_t c = 0; c < 3; ++c) {
                    out.at3(y, x, c) = std::clamp(out.at3(y, x, c) + noise[next++], 0.0, 1.0);
                }
    return out;
}

Tensor perturb_fgsm_with_gradient(const Tensor& image, const PixelMask& mask, const Tensor& gradient,
                                  double epsilon, bool epsilon_eightbit) {
    check_mask(image, mask, "perturb_fgsm");
    if (!(epsilon > 0.0)) throw std::invalid_argument("perturb_fgsm: epsilon must be > 0");
    if (!gradient.same_shape(image)) {
        throw std::invalid_argument("perturb_fgsm: gradient shape " + gradient.shape_str() +
                                    " does not match image " + image.shape_str());
    }
    const double step = epsilon_eightbit ? epsilon / 255.0 : epsilon;
    Tensor out = image;
    for (std::int64_t y = 0; y < mask.height; ++y)
        for (std::int64_t x = 0; x < mask.width; ++x)
            if (mask.at(y, x))
                for (std::int64_t c = 0; c < 3; ++c) {
                    const double g = gradient.at3(y, x, c);
                    const double sign = g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0);
                    out.at3(y, x, c) = std::clamp(out.at3(y, x, c) + step * sign, 0.0, 1.0);
                }
    return out;
}

Tensor perturb_fgsm(const Model& model, const Tensor& image, const PixelMask& mask, double epsilon,
                    bool epsilon_eightbit) {
    const Tensor grad = depth_mean_gradient(model, image);
    return perturb_fgsm_with_gradient(image, mask, grad, epsilon, epsilon_eightbit);
}

Tensor apply_perturbation(const Model* model, const Tensor& image, const PixelMask& mask,
                          const PerturbSpec& spec, std::uint64_t seed, const Tensor* cached_gradient) {
    validate(spec);
    switch (spec.kind) {
        case PerturbKind::kBlack:
            return perturb_black(image, mask);
        case PerturbKind::kGaussian:
            return perturb_gaussian(image, mask, spec.mean, spec.sigma, seed);
        case PerturbKind::kFgsm:
            if (cached_gradient) {
                return perturb_fgsm_with_gradient(image, mask, *cached_gradient, spec.epsilon,
                                                  spec.epsilon_eightbit);
            }
            if (!model) throw std::invalid_argument("apply_perturbation: fgsm needs a model");
            return perturb_fgsm(*model, image, mask, spec.epsilon, spec.epsilon_eightbit);
    }
    throw std::invalid_argument("apply_perturbation: unknown kind");
}

std::string mask_to_rle(const PixelMask& mask) {
    std::ostringstream out;
    out << mask.height << " " << mask.width << " " << mask_side_name(mask.which) << " " << mask.fraction
        << "\n";
    const std::int64_t total = mask.height * mask.width;
    bool first = true;
    for (std::int64_t i = 0; i < total;) {
        if (!mask.selected[static_cast<std::size_t>(i)]) {
            ++i;
            continue;
        }
        std::int64_t run = 0;
        while (i + run < total && mask.selected[static_cast<std::size_t>(i + run)]) ++run;
        if (!first) out << ",";
        out << i << ":" << run;
        first = false;
        i += run;
    }
    out << "\n";
    return out.str();
}

PixelMask mask_from_rle(const std::string& text) {
    std::istringstream in(text);
    PixelMask mask;
    std::string which;
    in >> mask.height >> mask.width >> which >> mask.fraction;
    if (!in || mask.height < 1 || mask.width < 1) throw std::runtime_error("mask rle: malformed header");
    mask.which = which == "top" ? MaskSide::kTop : MaskSide::kBottom;
    mask.selected.assign(static_cast<std::size_t>(mask.height * mask.width), 0);
    std::string runs;
    in >> runs;
    std::istringstream rs(runs);
    std::string run;
    while (std::getline(rs, run, ',')) {
        const auto colon = run.find(':');
        if (colon == std::string::npos) throw std::runtime_error("mask rle: malformed run '" + run + "'");
        const std::int64_t start = std::stoll(run.substr(0, colon));
        const std::int64_t len = std::stoll(run.substr(colon + 1));
        if (start < 0 || len < 0 || start + len > mask.height * mask.width) {
            throw std::runtime_error("mask rle: run out of bounds");
        }
        for (std::int64_t i = 0; i < len; ++i) mask.selected[static_cast<std::size_t>(start + i)] = 1;
    }
    return mask;
}

}  // namespace mdx
