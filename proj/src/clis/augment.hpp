#pragma once

#include <array>
#include <optional>
#include <span>

#include "clis/datasets.hpp"

namespace clis {

struct AugmentConfig {
    double scale_min = 0.5;
    double scale_max = 1.5;
    double flip_prob = 0.5;
    /// Cutout hole side as a fraction of the shorter image side.
    double cutout_fraction = 0.25;
    /// A hole may cover at most this fraction of the predefined region.
    double cutout_max_region_cover = 0.5;
    int cutout_attempts = 100;
    float cutout_fill = 0.5f;

    bool operator==(const AugmentConfig&) const = default;
};

/// Scale followed by an optional horizontal flip about the scaled width.
struct GeometricTransform {
    double sx = 1, sy = 1;
    bool flip = false;
    int out_w = 0, out_h = 0;

    Box apply(const Box& b) const;
};

GeometricTransform make_transform(int in_w, int in_h, double factor, bool flip);
Image apply_transform(const Image& img, const GeometricTransform& t);

/// Reflection about a vertical axis: cx -> width - cx.
Box flip_box(const Box& b, double width);

struct CutoutHole {
    int x0 = 0, y0 = 0, side = 0;
    Box box() const { return Box::from_corners(x0, y0, x0 + side, y0 + side); }
};

/// Samples one hole, re-sampling while it covers more than the allowed share of `region`.
std::optional<CutoutHole> sample_cutout(int width, int height, const std::optional<Box>& region,
                                        const AugmentConfig& config, Rng& rng);

WeakImage augment_weak(const WeakImage& image, Rng& rng, const AugmentConfig& config = {});
DetectionImage augment_detection(const DetectionImage& image, Rng& rng, const AugmentConfig& config = {});

struct MosaicTile {
    int source_id = 0;
    int label = 0;
    /// Continuous source-space window that lands in the quadrant.
    Box source_crop;
    Box quadrant;
    /// dest = quadrant origin + (src - crop origin) * scale, on both axes.
    double scale = 1;
    /// Predefined region clipped to the crop and mapped into the canvas; empty when it collapses.
    std::optional<Box> mapped_region;

    double map_x(double x) const { return quadrant.x0() + (x - source_crop.x0()) * scale; }
    double map_y(double y) const { return quadrant.y0() + (y - source_crop.y0()) * scale; }
};

struct MosaicImage {
    Image pixels;
    int center_x = 0, center_y = 0;
    std::array<MosaicTile, 4> tiles;
};

/// Tiles four images around a center drawn from the middle half of the canvas.
MosaicImage mosaic(std::span<const WeakImage> images, int out_size, Rng& rng);
/// Same with a caller-fixed center; the rng only drives crop placement.
MosaicImage mosaic_at(std::span<const WeakImage> images, int out_size, int center_x, int center_y, Rng& rng);

struct PasteConfig {
    double max_iou = 0.3;
    int attempts = 20;
    double min_scale = 0.5;
    double max_scale = 1.0;
    /// Longest pasted side as a fraction of the shorter target side.
    double max_side_fraction = 0.6;

    bool operator==(const PasteConfig&) const = default;
};

struct PastedComposite {
    Image pixels;
    Box paste_box;
    int source_id = 0;
    Box source_crop;
    int label = 0;
    /// The crop exactly as written into paste_box.
    Image patch;
};

/// Cuts the predefined region out of `weak` and drops it into `target` at a
/// random spot whose IoU with every existing annotation stays within the limit.
/// Throws Error(kUnplaceable) when no spot is found.
PastedComposite paste_instance(const WeakImage& weak, const DetectionImage& target, Rng& rng,
                               const PasteConfig& config = {});

}  // namespace clis
