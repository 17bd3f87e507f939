#include "clis/augment.hpp"

namespace clis {

Box GeometricTransform::apply(const Box& b) const {
    Box out{b.cx * sx, b.cy * sy, b.w * sx, b.h * sy};
    if (flip) out = flip_box(out, out_w);
    return out;
}

Box flip_box(const Box& b, double width) { return {width - b.cx, b.cy, b.w, b.h}; }

GeometricTransform make_transform(int in_w, int in_h, double factor, bool flip) {
    if (!(factor > 0)) throw invalid_argument("transform: scale factor must be positive");
    GeometricTransform t;
    t.out_w = std::max(1, static_cast<int>(std::lround(in_w * factor)));
    t.out_h = std::max(1, static_cast<int>(std::lround(in_h * factor)));
    t.sx = static_cast<double>(t.out_w) / in_w;
    t.sy = static_cast<double>(t.out_h) / in_h;
    t.flip = flip;
    return t;
}

Image apply_transform(const Image& img, const GeometricTransform& t) {
    Image out = (t.out_w == img.width && t.out_h == img.height) ? img : resize_bilinear(img, t.out_h, t.out_w);
    if (t.flip) out = flip_horizontal(out);
    return out;
}

std::optional<CutoutHole> sample_cutout(int width, int height, const std::optional<Box>& region,
                                        const AugmentConfig& config, Rng& rng) {
    const int side = std::max(1, static_cast<int>(std::lround(config.cutout_fraction * std::min(width, height))));
    if (side > width || side > height) return std::nullopt;
    for (int a = 0; a < config.cutout_attempts; ++a) {
        CutoutHole h{uniform_int(rng, 0, width - side), uniform_int(rng, 0, height - side), side};
        if (!region || region->area() <= 0) return h;
        if (intersection_area(h.box(), *region) <= config.cutout_max_region_cover * region->area()) return h;
    }
    return std::nullopt;
}

WeakImage augment_weak(const WeakImage& image, Rng& rng, const AugmentConfig& config) {
    const double factor = uniform(rng, config.scale_min, config.scale_max);
    const bool flip = bernoulli(rng, config.flip_prob);
    const auto t = make_transform(image.pixels.width, image.pixels.height, factor, flip);
    WeakImage out;
    out.image_id = image.image_id;
    out.label = image.label;
    out.pixels = apply_transform(image.pixels, t);
    if (image.predefined_region) out.predefined_region = clip_box(t.apply(*image.predefined_region), t.out_w, t.out_h);
    if (image.true_box) out.true_box = clip_box(t.apply(*image.true_box), t.out_w, t.out_h);
    if (auto hole = sample_cutout(t.out_w, t.out_h, out.predefined_region, config, rng)) {
        fill_rect(out.pixels, hole->x0, hole->y0, hole->x0 + hole->side, hole->y0 + hole->side, config.cutout_fill,
                  config.cutout_fill, config.cutout_fill);
    }
    return out;
}

DetectionImage augment_detection(const DetectionImage& image, Rng& rng, const AugmentConfig& config) {
    const double factor = uniform(rng, config.scale_min, config.scale_max);
    const bool flip = bernoulli(rng, config.flip_prob);
    const auto t = make_transform(image.pixels.width, image.pixels.height, factor, flip);
    DetectionImage out;
    out.image_id = image.image_id;
    out.pixels = apply_transform(image.pixels, t);
    for (const auto& a : image.annotations) {
        const Box b = clip_box(t.apply(a.box), t.out_w, t.out_h);
        if (b.w >= 2.0 && b.h >= 2.0) out.annotations.push_back({b, a.category});
    }
    return out;
}

namespace {

double place_crop_origin(double lo, double hi, double extent, double crop, Rng& rng) {
    // Window [o, o + crop] inside [0, extent]; keep the whole [lo, hi] span when possible.
    const double max_o = extent - crop;
    if (max_o <= 0) return 0.0;
    const double a = std::max(0.0, hi - crop);
    const double b = std::min(max_o, lo);
    if (a <= b) return uniform(rng, a, b);
    return std::clamp(0.5 * (lo + hi) - 0.5 * crop, 0.0, max_o);
}

}  // namespace

MosaicImage mosaic_at(std::span<const WeakImage> images, int out_size, int center_x, int center_y, Rng& rng) {
    if (images.size() != 4) throw invalid_argument("mosaic: exactly 4 images required");
    if (out_size < 32 || out_size % 2 != 0) throw invalid_argument("mosaic: out_size must be even and >= 32");
    if (center_x <= 0 || center_x >= out_size || center_y <= 0 || center_y >= out_size)
        throw invalid_argument("mosaic: center must be strictly inside the canvas");
    MosaicImage m;
    m.pixels = Image(out_size, out_size);
    m.center_x = center_x;
    m.center_y = center_y;
    const std::array<Box, 4> quads{
        Box::from_corners(0, 0, center_x, center_y),
        Box::from_corners(center_x, 0, out_size, center_y),
        Box::from_corners(0, center_y, center_x, out_size),
        Box::from_corners(center_x, center_y, out_size, out_size),
    };
    for (int q = 0; q < 4; ++q) {
        const WeakImage& src = images[static_cast<std::size_t>(q)];
        const int w = src.pixels.width, h = src.pixels.height;
        const Box& quad = quads[static_cast<std::size_t>(q)];
        MosaicTile& tile = m.tiles[static_cast<std::size_t>(q)];
        tile.source_id = src.image_id;
        tile.label = src.label;
        tile.quadrant = quad;
        tile.scale = std::max(quad.w / w, quad.h / h);
        const double cw = quad.w / tile.scale, ch = quad.h / tile.scale;
        const Box region = src.predefined_region.value_or(Box::from_corners(0, 0, w, h));
        const double ox = place_crop_origin(region.x0(), region.x1(), w, cw, rng);
        const double oy = place_crop_origin(region.y0(), region.y1(), h, ch, rng);
        tile.source_crop = Box::from_corners(ox, oy, ox + cw, oy + ch);

        const int qx0 = static_cast<int>(quad.x0()), qy0 = static_cast<int>(quad.y0());
        for (int y = qy0; y < static_cast<int>(quad.y1()); ++y) {
            const double fy = std::clamp(oy + (y - qy0 + 0.5) / tile.scale - 0.5, 0.0, h - 1.0);
            const int y0 = static_cast<int>(fy);
            const int y1 = std::min(y0 + 1, h - 1);
            const double ly = fy - y0;
            for (int x = qx0; x < static_cast<int>(quad.x1()); ++x) {
                const double fx = std::clamp(ox + (x - qx0 + 0.5) / tile.scale - 0.5, 0.0, w - 1.0);
                const int x0 = static_cast<int>(fx);
                const int x1 = std::min(x0 + 1, w - 1);
                const double lx = fx - x0;
                for (int c = 0; c < 3; ++c) {
                    const auto& p = src.pixels;
                    const double v = (1 - ly) * ((1 - lx) * p.at(y0, x0, c) + lx * p.at(y0, x1, c)) +
                                     ly * ((1 - lx) * p.at(y1, x0, c) + lx * p.at(y1, x1, c));
                    m.pixels.at(y, x, c) = static_cast<float>(v);
                }
            }
        }

        if (src.predefined_region) {
            const Box& r = *src.predefined_region;
            const double x0 = std::max(r.x0(), tile.source_crop.x0()), x1 = std::min(r.x1(), tile.source_crop.x1());
            const double y0 = std::max(r.y0(), tile.source_crop.y0()), y1 = std::min(r.y1(), tile.source_crop.y1());
            const Box mapped = clip_box(Box::from_corners(tile.map_x(x0), tile.map_y(y0), tile.map_x(x1), tile.map_y(y1)),
                                        out_size, out_size);
            if (x1 > x0 && y1 > y0 && mapped.w >= 2.0 && mapped.h >= 2.0) tile.mapped_region = mapped;
        }
    }
    return m;
}

MosaicImage mosaic(std::span<const WeakImage> images, int out_size, Rng& rng) {
    if (images.size() != 4) throw invalid_argument("mosaic: exactly 4 images required");
    if (out_size < 32 || out_size % 2 != 0) throw invalid_argument("mosaic: out_size must be even and >= 32");
    const int cx = uniform_int(rng, out_size / 4, 3 * out_size / 4);
    const int cy = uniform_int(rng, out_size / 4, 3 * out_size / 4);
    return mosaic_at(images, out_size, cx, cy, rng);
}

PastedComposite paste_instance(const WeakImage& weak, const DetectionImage& target, Rng& rng,
                               const PasteConfig& config) {
    if (!weak.predefined_region) throw invalid_argument("paste_instance: weak image has no predefined region");
    const Box r = clip_box(*weak.predefined_region, weak.pixels.width, weak.pixels.height);
    const int cx0 = static_cast<int>(std::floor(r.x0())), cy0 = static_cast<int>(std::floor(r.y0()));
    const int cx1 = static_cast<int>(std::ceil(r.x1())), cy1 = static_cast<int>(std::ceil(r.y1()));
    if (cx1 - cx0 < 2 || cy1 - cy0 < 2) throw Error(ErrorCode::kUnplaceable, "paste_instance: region too small");
    const Image crop_px = crop(weak.pixels, cx0, cy0, cx1 - cx0, cy1 - cy0);

    const int W = target.pixels.width, H = target.pixels.height;
    double s = uniform(rng, config.min_scale, config.max_scale);
    const double longest = std::max(crop_px.width, crop_px.height) * s;
    const double limit = config.max_side_fraction * std::min(W, H);
    if (longest > limit) s *= limit / longest;
    const int pw = std::max(2, static_cast<int>(std::lround(crop_px.width * s)));
    const int ph = std::max(2, static_cast<int>(std::lround(crop_px.height * s)));
    if (pw > W || ph > H) throw Error(ErrorCode::kUnplaceable, "paste_instance: crop larger than target");

    std::vector<char> covered(static_cast<std::size_t>(W) * H, 0);
    for (const auto& a : target.annotations) {
        const int x0 = std::max(0, static_cast<int>(std::floor(a.box.x0())));
        const int y0 = std::max(0, static_cast<int>(std::floor(a.box.y0())));
        const int x1 = std::min(W, static_cast<int>(std::ceil(a.box.x1())));
        const int y1 = std::min(H, static_cast<int>(std::ceil(a.box.y1())));
        for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x) covered[static_cast<std::size_t>(y) * W + x] = 1;
    }
    const long free_area = std::count(covered.begin(), covered.end(), 0);
    if (free_area < static_cast<long>(pw) * ph)
        throw Error(ErrorCode::kUnplaceable, "paste_instance: not enough free area in target");

    for (int a = 0; a < config.attempts; ++a) {
        const int x0 = uniform_int(rng, 0, W - pw);
        const int y0 = uniform_int(rng, 0, H - ph);
        const Box pb = Box::from_corners(x0, y0, x0 + pw, y0 + ph);
        bool ok = true;
        for (const auto& ann : target.annotations) ok = ok && iou(pb, ann.box) <= config.max_iou;
        if (!ok) continue;
        PastedComposite out;
        out.patch = (pw == crop_px.width && ph == crop_px.height) ? crop_px : resize_bilinear(crop_px, ph, pw);
        out.pixels = target.pixels;
        paste(out.pixels, out.patch, x0, y0);
        out.paste_box = pb;
        out.source_id = weak.image_id;
        out.source_crop = Box::from_corners(cx0, cy0, cx1, cy1);
        out.label = weak.label;
        return out;
    }
    throw Error(ErrorCode::kUnplaceable, "paste_instance: no placement within the overlap limit");
}

}  // namespace clis
