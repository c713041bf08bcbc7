#include "mdx/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <stdexcept>

namespace mdx {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

void write_png_rgb(const std::string& path, const ImageU8& image) {
    if (image.rgb.size() != static_cast<std::size_t>(image.height * image.width * 3)) {
        throw std::invalid_argument("write_png_rgb: buffer does not match dims");
    }
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw std::runtime_error("write_png_rgb: cannot open '" + path + "' for writing");

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("write_png_rgb: png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw std::runtime_error("write_png_rgb: png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("write_png_rgb: libpng failure writing '" + path + "'");
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height),
                 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(static_cast<std::size_t>(image.height));
    for (std::int64_t y = 0; y < image.height; ++y) {
        rows[static_cast<std::size_t>(y)] =
            const_cast<png_bytep>(image.rgb.data() + y * image.width * 3);
    }
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

ImageU8 read_png_rgb(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw std::runtime_error("read_png_rgb: cannot open '" + path + "'");

    png_byte header[8];
    if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8) != 0) {
        throw std::runtime_error("read_png_rgb: '" + path + "' is not a PNG file");
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("read_png_rgb: png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw std::runtime_error("read_png_rgb: png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("read_png_rgb: libpng failure reading '" + path + "'");
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    // Normalize everything to 8-bit RGB.
    png_set_strip_16(png);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);

    ImageU8 image;
    image.height = png_get_image_height(png, info);
    image.width = png_get_image_width(png, info);
    image.rgb.resize(static_cast<std::size_t>(image.height * image.width * 3));
    std::vector<png_bytep> rows(static_cast<std::size_t>(image.height));
    for (std::int64_t y = 0; y < image.height; ++y) {
        rows[static_cast<std::size_t>(y)] = image.rgb.data() + y * image.width * 3;
    }
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return image;
}

void write_ppm(const std::string& path, const ImageU8& image) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_ppm: cannot open '" + path + "'");
    out << "P6\n" << image.width << " " << image.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(image.rgb.data()),
              static_cast<std::streamsize>(image.rgb.size()));
    if (!out) throw std::runtime_error("write_ppm: write failed for '" + path + "'");
}

ImageU8 read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_ppm: cannot open '" + path + "'");
    std::string magic;
    in >> magic;
    if (magic != "P6") throw std::runtime_error("read_ppm: '" + path + "' is not a binary PPM");
    std::int64_t w = 0, h = 0, maxval = 0;
    in >> w >> h >> maxval;
    if (!in || w < 1 || h < 1 || maxval != 255) {
        throw std::runtime_error("read_ppm: unsupported PPM header in '" + path + "'");
    }
    in.get();  // single whitespace after maxval
    ImageU8 image;
    image.height = h;
    image.width = w;
    image.rgb.resize(static_cast<std::size_t>(h * w * 3));
    in.read(reinterpret_cast<char*>(image.rgb.data()), static_cast<std::streamsize>(image.rgb.size()));
    if (!in) throw std::runtime_error("read_ppm: truncated pixel data in '" + path + "'");
    return image;
}

ImageU8 read_image(const std::string& path) {
    const auto dot = path.find_last_of('.');
    const std::string ext = dot == std::string::npos ? "" : path.substr(dot);
    if (ext == ".png" || ext == ".PNG") return read_png_rgb(path);
    if (ext == ".ppm" || ext == ".PPM") return read_ppm(path);
    throw std::runtime_error("read_image: unsupported extension '" + ext + "' for '" + path + "'");
}

Tensor image_to_unit(const ImageU8& image) {
    Tensor t({image.height, image.width, 3});
    for (std::int64_t i = 0; i < t.size(); ++i) {
        t[i] = static_cast<double>(image.rgb[static_cast<std::size_t>(i)]) / 255.0;
    }
    return t;
}

ImageU8 unit_to_image(const Tensor& image) {
    if (image.rank() != 3 || image.dim(2) != 3) {
        throw std::invalid_argument("unit_to_image: expected (H,W,3), got " + image.shape_str());
    }
    ImageU8 out;
    out.height = image.dim(0);
    out.width = image.dim(1);
    out.rgb.resize(static_cast<std::size_t>(image.size()));
    for (std::int64_t i = 0; i < image.size(); ++i) {
        const double v = std::clamp(image[i], 0.0, 1.0);
        out.rgb[static_cast<std::size_t>(i)] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    return out;
}

std::array<double, 3> RenderPalette::sample(double t) const {
    t = std::clamp(t, 0.0, 1.0);
    const auto lerp = [](const std::array<double, 3>& a, const std::array<double, 3>& b, double u) {
        return std::array<double, 3>{a[0] + (b[0] - a[0]) * u, a[1] + (b[1] - a[1]) * u,
                                     a[2] + (b[2] - a[2]) * u};
    };
    if (t <= 0.5) return lerp(stops[0], stops[1], t * 2.0);
    return lerp(stops[1], stops[2], (t - 0.5) * 2.0);
}

namespace {

ImageU8 colorize(const Tensor& grid, const RenderPalette* palette) {
    const std::int64_t h = grid.dim(0), w = grid.dim(1);
    const double lo = grid.min_value();
    const double hi = grid.max_value();
    const double span = hi - lo;
    ImageU8 out;
    out.height = h;
    out.width = w;
    out.rgb.resize(static_cast<std::size_t>(h * w * 3));
    for (std::int64_t i = 0; i < h * w; ++i) {
        const double t = span > 0.0 ? (grid[i] - lo) / span : 0.0;
        double r, g, b;
        if (palette) {
            const auto c = palette->sample(t);
            r = c[0];
            g = c[1];
            b = c[2];
        } else {
            r = g = b = t;
        }
        out.rgb[static_cast<std::size_t>(3 * i + 0)] = static_cast<unsigned char>(std::lround(r * 255.0));
        out.rgb[static_cast<std::size_t>(3 * i + 1)] = static_cast<unsigned char>(std::lround(g * 255.0));
        out.rgb[static_cast<std::size_t>(3 * i + 2)] = static_cast<unsigned char>(std::lround(b * 255.0));
    }
    return out;
}

}  // namespace

std::string render_relevance(const RelevanceMap& map, const RenderPalette& palette,
                             const std::string& path) {
    if (map.scores.rank() != 2) {
        throw std::invalid_argument("render_relevance: expected (H,W) scores, got " +
                                    map.scores.shape_str());
    }
    std::string out_path = path;
    if (map.scores.min_value() == map.scores.max_value()) {
        const auto dot = out_path.find_last_of('.');
        const std::string marker = ".degenerate";
        if (dot == std::string::npos) {
            out_path += marker;
        } else {
            out_path = out_path.substr(0, dot) + marker + out_path.substr(dot);
        }
    }
    write_png_rgb(out_path, colorize(map.scores, &palette));
    return out_path;
}

void render_depth(const Tensor& depth, const std::string& path) {
    if (depth.rank() != 2) {
        throw std::invalid_argument("render_depth: expected (H,W) map, got " + depth.shape_str());
    }
    write_png_rgb(path, colorize(depth, nullptr));
}

Tensor resize_bilinear(const Tensor& image, std::int64_t out_h, std::int64_t out_w) {
    if (image.rank() != 3) throw std::invalid_argument("resize_bilinear: expected (H,W,C)");
    const std::int64_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
    if (out_h < 1 || out_w < 1) throw std::invalid_argument("resize_bilinear: non-positive target dims");
    Tensor out({out_h, out_w, c});
    const double sy = out_h > 1 ? static_cast<double>(h - 1) / static_cast<double>(out_h - 1) : 0.0;
    const double sx = out_w > 1 ? static_cast<double>(w - 1) / static_cast<double>(out_w - 1) : 0.0;
    for (std::int64_t y = 0; y < out_h; ++y) {
        const double fy = y * sy;
        const std::int64_t y0 = static_cast<std::int64_t>(fy);
        const std::int64_t y1 = std::min(y0 + 1, h - 1);
        const double wy = fy - static_cast<double>(y0);
        for (std::int64_t x = 0; x < out_w; ++x) {
            const double fx = x * sx;
            const std::int64_t x0 = static_cast<std::int64_t>(fx);
            const std::int64_t x1 = std::min(x0 + 1, w - 1);
            const double wx = fx - static_cast<double>(x0);
            for (std::int64_t ch = 0; ch < c; ++ch) {
                const double v00 = image.at3(y0, x0, ch);
                const double v01 = image.at3(y0, x1, ch);
                const double v10 = image.at3(y1, x0, ch);
                const double v11 = image.at3(y1, x1, ch);
                out.at3(y, x, ch) = v00 * (1 - wy) * (1 - wx) + v01 * (1 - wy) * wx + v10 * wy * (1 - wx) +
                                    v11 * wy * wx;
            }
        }
    }
    return out;
}

Tensor center_crop(const Tensor& image, std::int64_t out_h, std::int64_t out_w) {
    if (image.rank() != 3) throw std::invalid_argument("center_crop: expected (H,W,C)");
    const std::int64_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
    if (out_h > h || out_w > w) {
        throw std::invalid_argument("center_crop: target larger than source");
    }
    const std::int64_t y0 = (h - out_h) / 2;
    const std::int64_t x0 = (w - out_w) / 2;
    Tensor out({out_h, out_w, c});
    for (std::int64_t y = 0; y < out_h; ++y)
        for (std::int64_t x = 0; x < out_w; ++x)
            for (std::int64_t ch = 0; ch < c; ++ch) out.at3(y, x, ch) = image.at3(y0 + y, x0 + x, ch);
    return out;
}

Tensor fit_to_dims(const Tensor& image, std::int64_t out_h, std::int64_t out_w) {
    const std::int64_t h = image.dim(0), w = image.dim(1);
    if (h == out_h && w == out_w) return image;
    const double scale = std::max(static_cast<double>(out_h) / static_cast<double>(h),
                                  static_cast<double>(out_w) / static_cast<double>(w));
    const std::int64_t rh = std::max<std::int64_t>(out_h, std::llround(h * scale));
    const std::int64_t rw = std::max<std::int64_t>(out_w, std::llround(w * scale));
    return center_crop(resize_bilinear(image, rh, rw), out_h, out_w);
}

}  // namespace mdx
