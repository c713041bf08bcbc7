#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mdx/attribution.hpp"
#include "mdx/tensor.hpp"

namespace mdx {

struct ImageU8 {
    std::int64_t height = 0;
    std::int64_t width = 0;
    std::vector<unsigned char> rgb;  // row-major H*W*3
};

void write_png_rgb(const std::string& path, const ImageU8& image);
ImageU8 read_png_rgb(const std::string& path);
void write_ppm(const std::string& path, const ImageU8& image);
ImageU8 read_ppm(const std::string& path);
// Dispatch on extension: .png, .ppm.
ImageU8 read_image(const std::string& path);

Tensor image_to_unit(const ImageU8& image);  // (H,W,3) in [0,1]
ImageU8 unit_to_image(const Tensor& image);  // rounds to 8 bits

// Three-stop ramp for relevance rendering: black (lowest) through red to
// yellow (highest); luminance grows monotonically along the ramp.
struct RenderPalette {
    std::array<std::array<double, 3>, 3> stops{{{0.0, 0.0, 0.0}, {1.0, 0.0, 0.0}, {1.0, 1.0, 0.0}}};
    std::array<double, 3> sample(double t) const;
};

// Min-max normalize and write a palette-mapped PNG. A constant map renders
// all black and the file name gains a ".degenerate" marker before the
// extension; returns the path actually written.
std::string render_relevance(const RelevanceMap& map, const RenderPalette& palette,
                             const std::string& path);

// Min-max normalized grayscale; constant maps normalize to 0 (black).
void render_depth(const Tensor& depth, const std::string& path);

Tensor resize_bilinear(const Tensor& image, std::int64_t out_h, std::int64_t out_w);
Tensor center_crop(const Tensor& image, std::int64_t out_h, std::int64_t out_w);
// Scale the shorter side to cover the target (bilinear), then center-crop.
Tensor fit_to_dims(const Tensor& image, std::int64_t out_h, std::int64_t out_w);

}  // namespace mdx
