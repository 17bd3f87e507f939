#pragma once

#include <filesystem>
#include <vector>

#include "clis/common.hpp"

namespace clis {

/// RGB image, row-major HWC, values in [0, 1].
struct Image {
    int height = 0;
    int width = 0;
    std::vector<float> data;

    Image() = default;
    Image(int h, int w, float fill = 0.0f)
        : height(h), width(w), data(static_cast<std::size_t>(h) * w * 3, fill) {}

    float& at(int y, int x, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    float at(int y, int x, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    bool empty() const { return data.empty(); }
    bool operator==(const Image&) const = default;
};

/// Bilinear resize with half-pixel centers: out(x) samples in((x + 0.5) * in_w / out_w - 0.5).
Image resize_bilinear(const Image& src, int out_h, int out_w);
Image flip_horizontal(const Image& src);
/// Integer-aligned crop; the rectangle must lie inside the image.
Image crop(const Image& src, int x0, int y0, int w, int h);
/// Copies src into dst with its top-left corner at (x0, y0).
void paste(Image& dst, const Image& src, int x0, int y0);
void fill_rect(Image& img, int x0, int y0, int x1, int y1, float r, float g, float b);

/// CHW double planes for the network input.
std::vector<double> to_chw(const Image& img);

/// Rounds every value to the nearest multiple of 1/255 so that PNG storage is lossless.
void quantize_u8(Image& img);

void write_png(const std::filesystem::path& path, const Image& img);
Image read_png(const std::filesystem::path& path);

}  // namespace clis
