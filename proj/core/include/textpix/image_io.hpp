#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "textpix/tensor.hpp"

namespace textpix {

/// Interleaved 8-bit RGB raster.
struct ImageU8 {
    std::int64_t width = 0;
    std::int64_t height = 0;
    std::vector<std::uint8_t> rgb;  // height * width * 3
};

/// Decodes a PNG or JPEG file (sniffed by signature).
ImageU8 read_image_file(const std::filesystem::path& path);

/// Writes an 8-bit RGB PNG.
void write_png(const std::filesystem::path& path, const ImageU8& image);

/// Channel-first [3, th, tw] tensor in [0, 1]; bilinear resize when the
/// source size differs, plain copy otherwise.
template <typename T>
Tensor<T> to_chw_tensor(const ImageU8& image, std::int64_t target_h, std::int64_t target_w) {
    if (image.width <= 0 || image.height <= 0 ||
        static_cast<std::int64_t>(image.rgb.size()) != image.width * image.height * 3) {
        throw DataError("malformed raster image");
    }
    Tensor<T> out({3, target_h, target_w}, T{0});
    const T inv255 = T{1} / T{255};
    if (image.height == target_h && image.width == target_w) {
        for (std::int64_t y = 0; y < target_h; ++y) {
            for (std::int64_t x = 0; x < target_w; ++x) {
                const std::uint8_t* px = image.rgb.data() + (y * image.width + x) * 3;
                for (std::int64_t c = 0; c < 3; ++c) {
                    out[(c * target_h + y) * target_w + x] = static_cast<T>(px[c]) * inv255;
                }
            }
        }
        return out;
    }
    // Pixel-center sampling: src = (dst + 0.5) * scale - 0.5, clamped.
    const double sy = static_cast<double>(image.height) / static_cast<double>(target_h);
    const double sx = static_cast<double>(image.width) / static_cast<double>(target_w);
    for (std::int64_t y = 0; y < target_h; ++y) {
        double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
        fy = std::max(0.0, std::min(fy, static_cast<double>(image.height - 1)));
        const auto y0 = static_cast<std::int64_t>(fy);
        const std::int64_t y1 = std::min(y0 + 1, image.height - 1);
        const double wy = fy - static_cast<double>(y0);
        for (std::int64_t x = 0; x < target_w; ++x) {
            double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
            fx = std::max(0.0, std::min(fx, static_cast<double>(image.width - 1)));
            const auto x0 = static_cast<std::int64_t>(fx);
            const std::int64_t x1 = std::min(x0 + 1, image.width - 1);
            const double wx = fx - static_cast<double>(x0);
            for (std::int64_t c = 0; c < 3; ++c) {
                const auto at = [&](std::int64_t yy, std::int64_t xx) {
                    return static_cast<double>(image.rgb[(yy * image.width + xx) * 3 + c]);
                };
                const double v = (1.0 - wy) * ((1.0 - wx) * at(y0, x0) + wx * at(y0, x1)) +
                                 wy * ((1.0 - wx) * at(y1, x0) + wx * at(y1, x1));
                out[(c * target_h + y) * target_w + x] = static_cast<T>(v / 255.0);
            }
        }
    }
    return out;
}

/// Quantizes a [3, H, W] tensor of values in [0, 1] to 8-bit RGB with
/// round(v * 255). Out-of-range values are a contract violation; callers
/// clamp explicitly when they mean to.
template <typename T>
ImageU8 from_chw_tensor(const Tensor<T>& t) {
    if (t.rank() != 3 || t.extent(0) != 3) {
        throw ShapeError("expected a [3, H, W] tensor, got " + shape_to_string(t.shape()));
    }
    const std::int64_t h = t.extent(1);
    const std::int64_t w = t.extent(2);
    ImageU8 image;
    image.height = h;
    image.width = w;
    image.rgb.resize(static_cast<std::size_t>(h * w * 3));
    for (std::int64_t c = 0; c < 3; ++c) {
        for (std::int64_t y = 0; y < h; ++y) {
            for (std::int64_t x = 0; x < w; ++x) {
                const T v = t[(c * h + y) * w + x];
                if (!(v >= T{0} && v <= T{1})) {
                    throw ContractError("image value outside [0, 1]");
                }
                image.rgb[static_cast<std::size_t>((y * w + x) * 3 + c)] =
                    static_cast<std::uint8_t>(std::lround(static_cast<double>(v) * 255.0));
            }
        }
    }
    return image;
}

/// Decode + resize + scale to [0, 1].
template <typename T>
Tensor<T> load_image(const std::filesystem::path& path, std::int64_t target_h,
                     std::int64_t target_w) {
    return to_chw_tensor<T>(read_image_file(path), target_h, target_w);
}

/// Save a [3, H, W] tensor of values in [0, 1] as an 8-bit RGB PNG.
template <typename T>
void save_image(const Tensor<T>& t, const std::filesystem::path& path) {
    write_png(path, from_chw_tensor(t));
}

}  // namespace textpix
