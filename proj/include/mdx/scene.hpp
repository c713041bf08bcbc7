#pragma once

#include <cstdint>

#include "mdx/tensor.hpp"

namespace mdx {

// Depth range of the synthetic scenes, in arbitrary toy units. Kept small
// so squared-error losses are well scaled for plain gradient descent.
inline constexpr double kMaxDepth = 2.0;

// A rendered synthetic sample: RGB image in [0,1] plus its ground-truth
// depth map. For file-backed datasets depth_gt may be empty.
struct Scene {
    Tensor image;     // (H,W,3)
    Tensor depth_gt;  // (H,W), values in [0, kMaxDepth]
    std::uint64_t seed = 0;
};

// Deterministic scene with 2-5 axis-aligned rectangles at distinct depths
// over a planar depth-gradient floor; shading in the image tracks depth so
// pixel intensities carry genuine depth signal.
Scene generate_scene(std::uint64_t seed, std::int64_t height, std::int64_t width);

}  // namespace mdx
