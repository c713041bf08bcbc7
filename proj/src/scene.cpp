#include "mdx/scene.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mdx/rng.hpp"

namespace mdx {

namespace {

struct Rect {
    std::int64_t y0, x0, y1, x1;  // half-open
    double depth;
    double r, g, b;
};

}  // namespace

Scene generate_scene(std::uint64_t seed, std::int64_t height, std::int64_t width) {
    if (height < 16 || width < 16) {
        throw std::invalid_argument("generate_scene: dims must be at least 16x16, got " +
                                    std::to_string(height) + "x" + std::to_string(width));
    }

    auto rng = make_rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    Scene scene;
    scene.seed = seed;
    scene.image = Tensor({height, width, 3});
    scene.depth_gt = Tensor({height, width});

    // Planar floor: far at the top row, near at the bottom row.
    const double d_far = (0.80 + 0.15 * unit(rng)) * kMaxDepth;
    const double d_near = (0.10 + 0.15 * unit(rng)) * kMaxDepth;
    const double floor_r = 0.35 + 0.3 * unit(rng);
    const double floor_g = 0.35 + 0.3 * unit(rng);
    const double floor_b = 0.35 + 0.3 * unit(rng);

    const int n_shapes = 2 + static_cast<int>(rng() % 4);  // 2..5
    std::vector<Rect> rects;
    std::vector<double> depths;
    for (int s = 0; s < n_shapes; ++s) {
        // Distinct depths: resample until separated from all previous ones.
        double d = 0.0;
        for (int attempt = 0; attempt < 64; ++attempt) {
            d = (0.08 + 0.68 * unit(rng)) * kMaxDepth;
            bool ok = true;
            for (double prev : depths)
                if (std::abs(prev - d) < 0.025 * kMaxDepth) ok = false;
            if (ok) break;
        }
        depths.push_back(d);

        const std::int64_t hmin = std::max<std::int64_t>(3, height / 8);
        const std::int64_t wmin = std::max<std::int64_t>(3, width / 8);
        std::uniform_int_distribution<std::int64_t> hdist(hmin, std::max(hmin, height / 3));
        std::uniform_int_distribution<std::int64_t> wdist(wmin, std::max(wmin, width / 3));
        const std::int64_t rh = hdist(rng);
        const std::int64_t rw = wdist(rng);
        std::uniform_int_distribution<std::int64_t> ydist(0, height - rh);
        std::uniform_int_distribution<std::int64_t> xdist(0, width - rw);
        Rect r;
        r.y0 = ydist(rng);
        r.x0 = xdist(rng);
        r.y1 = r.y0 + rh;
        r.x1 = r.x0 + rw;
        r.depth = d;
        r.r = 0.25 + 0.75 * unit(rng);
        r.g = 0.25 + 0.75 * unit(rng);
        r.b = 0.25 + 0.75 * unit(rng);
        rects.push_back(r);
    }

    // Painter's order: far shapes first so nearer ones overwrite.
    std::stable_sort(rects.begin(), rects.end(),
                     [](const Rect& a, const Rect& b) { return a.depth > b.depth; });

    for (std::int64_t y = 0; y < height; ++y) {
        const double t = static_cast<double>(y) / static_cast<double>(height - 1);
        const double floor_depth = d_far + (d_near - d_far) * t;
        for (std::int64_t x = 0; x < width; ++x) {
            double depth = floor_depth;
            // Mild checker texture so the floor is not featureless.
            const bool check = ((y / 8) + (x / 8)) % 2 == 0;
            double ar = floor_r * (check ? 1.0 : 0.8);
            double ag = floor_g * (check ? 1.0 : 0.8);
            double ab = floor_b * (check ? 1.0 : 0.8);
            for (const Rect& r : rects) {
                if (y >= r.y0 && y < r.y1 && x >= r.x0 && x < r.x1) {
                    depth = r.depth;
                    ar = r.r;
                    ag = r.g;
                    ab = r.b;
                }
            }
            scene.depth_gt.at2(y, x) = std::clamp(depth, 0.0, kMaxDepth);
            const double shade = 0.25 + 0.75 * (1.0 - depth / kMaxDepth);
            scene.image.at3(y, x, 0) = std::clamp(ar * shade, 0.0, 1.0);
            scene.image.at3(y, x, 1) = std::clamp(ag * shade, 0.0, 1.0);
            scene.image.at3(y, x, 2) = std::clamp(ab * shade, 0.0, 1.0);
        }
    }

    // Tiny deterministic dither breaks exact ties between pixels.
    for (std::int64_t i = 0; i < scene.image.size(); ++i) {
        scene.image[i] = std::clamp(scene.image[i] + 0.01 * (unit(rng) - 0.5), 0.0, 1.0);
    }
    return scene;
}

}  // namespace mdx
