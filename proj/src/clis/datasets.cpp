#include "clis/datasets.hpp"

#include <fstream>
#include <numeric>
#include <set>

#include "json.hpp"

namespace clis {

using nlohmann::json;

namespace {

constexpr std::array<const char*, 6> kShapeNames{"circle", "square", "triangle", "diamond", "cross", "ring"};

struct Hue {
    const char* name;
    std::array<float, 3> rgb;
};

constexpr std::array<Hue, 8> kPalette{{
    {"red", {0.90f, 0.12f, 0.10f}},
    {"green", {0.10f, 0.80f, 0.20f}},
    {"blue", {0.12f, 0.25f, 0.95f}},
    {"yellow", {0.95f, 0.90f, 0.10f}},
    {"magenta", {0.90f, 0.10f, 0.85f}},
    {"cyan", {0.10f, 0.90f, 0.90f}},
    {"orange", {1.00f, 0.55f, 0.05f}},
    {"white", {0.97f, 0.97f, 0.97f}},
}};

// Streams of the generator rng; image ids add on top of kImageStream.
constexpr std::uint64_t kCategoryStream = 1;
constexpr std::uint64_t kAssignStream = 2;
constexpr std::uint64_t kWeakLabelStream = 3;
constexpr std::uint64_t kValStream = 4;
constexpr std::uint64_t kImageStream = 1000;

std::vector<CategorySpec> make_categories(int k, Rng& rng) {
    std::vector<int> combos(kShapeNames.size() * kPalette.size() * 2);
    std::iota(combos.begin(), combos.end(), 0);
    std::shuffle(combos.begin(), combos.end(), rng);
    std::vector<CategorySpec> out;
    for (int i = 0; i < k; ++i) {
        const int code = combos[static_cast<std::size_t>(i)];
        const int shape = code % 6;
        const int hue = (code / 6) % 8;
        const int tex = code / 48;
        CategorySpec c;
        c.id = i;
        c.recipe.shape = static_cast<ShapeKind>(shape);
        c.recipe.color = kPalette[hue].rgb;
        c.recipe.texture = static_cast<Texture>(tex);
        c.name = std::string(kPalette[hue].name) + "-" + kShapeNames[shape] + (tex ? "-striped" : "");
        out.push_back(std::move(c));
    }
    return out;
}

void render_background(Image& img, Rng& rng) {
    std::normal_distribution<float> noise(0.0f, 0.03f);
    std::array<float, 3> base{};
    for (auto& b : base) b = static_cast<float>(uniform(rng, 0.25, 0.6));
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = base[c] + noise(rng);

    // Muted blobs and bars blended toward the base color.
    const int n = uniform_int(rng, 4, 8);
    for (int i = 0; i < n; ++i) {
        const bool bar = bernoulli(rng, 0.5);
        const int w = bar ? uniform_int(rng, 2, 4) : uniform_int(rng, 3, img.width / 4);
        const int h = bar ? uniform_int(rng, img.height / 4, img.height / 2) : uniform_int(rng, 3, img.height / 4);
        const bool transpose = bar && bernoulli(rng, 0.5);
        const int bw = transpose ? h : w;
        const int bh = transpose ? w : h;
        const int x0 = uniform_int(rng, 0, std::max(0, img.width - bw));
        const int y0 = uniform_int(rng, 0, std::max(0, img.height - bh));
        const float alpha = static_cast<float>(uniform(rng, 0.2, 0.4));
        std::array<float, 3> col{};
        for (auto& c : col) c = static_cast<float>(uniform(rng, 0.0, 1.0));
        for (int y = y0; y < std::min(img.height, y0 + bh); ++y)
            for (int x = x0; x < std::min(img.width, x0 + bw); ++x)
                for (int c = 0; c < 3; ++c) img.at(y, x, c) = (1 - alpha) * img.at(y, x, c) + alpha * col[c];
    }
}

bool shape_mask(ShapeKind shape, double u, double v) {
    switch (shape) {
        case ShapeKind::kCircle: return u * u + v * v <= 1.0;
        case ShapeKind::kSquare: return std::abs(u) <= 0.9 && std::abs(v) <= 0.9;
        case ShapeKind::kTriangle: return v <= 1.0 && std::abs(u) <= 0.5 * (v + 1.0);
        case ShapeKind::kDiamond: return std::abs(u) + std::abs(v) <= 1.0;
        case ShapeKind::kCross: return std::abs(u) <= 0.34 || std::abs(v) <= 0.34;
        case ShapeKind::kRing: {
            const double r2 = u * u + v * v;
            return r2 <= 1.0 && r2 >= 0.3;
        }
    }
    return false;
}

/// Integer-aligned box of random size/position with bounded IoU against `taken`.
std::optional<Box> sample_box(Rng& rng, int img_w, int img_h, int min_side, int max_side,
                              const std::vector<Box>& taken, double max_iou, int attempts = 60) {
    for (int a = 0; a < attempts; ++a) {
        const int side = uniform_int(rng, min_side, max_side);
        const double aspect = uniform(rng, 0.75, 1.33);
        const int w = std::clamp(static_cast<int>(std::lround(side * std::sqrt(aspect))), 4, img_w);
        const int h = std::clamp(static_cast<int>(std::lround(side / std::sqrt(aspect))), 4, img_h);
        const int x0 = uniform_int(rng, 0, img_w - w);
        const int y0 = uniform_int(rng, 0, img_h - h);
        const Box b = Box::from_corners(x0, y0, x0 + w, y0 + h);
        bool ok = true;
        for (const auto& t : taken) ok = ok && iou(b, t) <= max_iou;
        if (ok) return b;
    }
    return std::nullopt;
}

DetectionImage render_detection_image(int image_id, const std::vector<int>& cats,
                                      const std::vector<CategorySpec>& categories, int size, std::uint64_t seed) {
    Rng rng = make_rng(seed, kImageStream + static_cast<std::uint64_t>(image_id));
    DetectionImage out;
    out.image_id = image_id;
    out.pixels = Image(size, size);
    render_background(out.pixels, rng);
    std::vector<Box> taken;
    const int min_side = std::max(8, static_cast<int>(0.2 * size));
    const int max_side = std::max(min_side, static_cast<int>(0.55 * size));
    for (int c : cats) {
        auto b = sample_box(rng, size, size, min_side, max_side, taken, 0.15);
        if (!b) b = sample_box(rng, size, size, min_side / 2 + 2, min_side, taken, 0.3, 200);
        if (!b) throw Error(ErrorCode::kInternal, "benchmark: could not place instance");
        render_instance(out.pixels, *b, categories[static_cast<std::size_t>(c)].recipe, rng);
        taken.push_back(*b);
        out.annotations.push_back({*b, c});
    }
    quantize_u8(out.pixels);
    return out;
}

WeakImage render_weak_image(int image_id, int label, const std::vector<CategorySpec>& categories, int size,
                            std::uint64_t seed) {
    Rng rng = make_rng(seed, kImageStream + static_cast<std::uint64_t>(image_id));
    WeakImage out;
    out.image_id = image_id;
    out.label = label;
    out.pixels = Image(size, size);
    render_background(out.pixels, rng);
    const int k = static_cast<int>(categories.size());
    const auto main_box = sample_box(rng, size, size, static_cast<int>(0.35 * size), static_cast<int>(0.7 * size), {}, 1.0);
    out.true_box = *main_box;
    std::vector<Box> taken{*main_box};
    const int distractors = uniform_int(rng, 0, 2);
    std::vector<std::pair<Box, int>> extra;
    for (int i = 0; i < distractors; ++i) {
        int c = uniform_int(rng, 0, k - 2);
        if (c >= label) ++c;
        auto b = sample_box(rng, size, size, std::max(6, static_cast<int>(0.15 * size)),
                            std::max(8, static_cast<int>(0.3 * size)), taken, 0.0, 30);
        if (!b) continue;
        taken.push_back(*b);
        extra.emplace_back(*b, c);
    }
    render_instance(out.pixels, *main_box, categories[static_cast<std::size_t>(label)].recipe, rng);
    for (const auto& [b, c] : extra) render_instance(out.pixels, b, categories[static_cast<std::size_t>(c)].recipe, rng);
    quantize_u8(out.pixels);
    return out;
}

json detection_records(const std::vector<DetectionImage>& images) {
    json arr = json::array();
    for (const auto& img : images) {
        json boxes = json::array();
        json cats = json::array();
        for (const auto& a : img.annotations) {
            boxes.push_back({a.box.cx, a.box.cy, a.box.w, a.box.h});
            cats.push_back(a.category);
        }
        arr.push_back({{"image_id", img.image_id}, {"boxes", boxes}, {"categories", cats}});
    }
    return arr;
}

void write_json(const std::filesystem::path& path, const json& j) {
    std::ofstream f(path);
    if (!f) throw io_error("cannot write " + path.string());
    f << j.dump(1) << "\n";
}

json read_json(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw io_error("cannot read " + path.string());
    try {
        return json::parse(f);
    } catch (const json::exception& e) {
        throw io_error("malformed json in " + path.string() + ": " + e.what());
    }
}

Box box_from_json(const json& j) {
    if (!j.is_array() || j.size() != 4) throw io_error("box must be [cx,cy,w,h]");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

std::vector<DetectionImage> load_detection_records(const std::filesystem::path& dir, const json& arr) {
    std::vector<DetectionImage> out;
    for (const auto& r : arr) {
        DetectionImage img;
        img.image_id = r.at("image_id").get<int>();
        const auto& boxes = r.at("boxes");
        const auto& cats = r.at("categories");
        if (boxes.size() != cats.size()) throw io_error("annotation boxes/categories length mismatch");
        for (std::size_t i = 0; i < boxes.size(); ++i)
            img.annotations.push_back({box_from_json(boxes[i]), cats[i].get<int>()});
        img.pixels = read_png(dir / "images" / (std::to_string(img.image_id) + ".png"));
        out.push_back(std::move(img));
    }
    return out;
}

}  // namespace

const char* group_name(FrequencyGroup g) {
    switch (g) {
        case FrequencyGroup::kRare: return "rare";
        case FrequencyGroup::kCommon: return "common";
        case FrequencyGroup::kFrequent: return "frequent";
    }
    return "?";
}

FrequencyGroup parse_group(const std::string& name) {
    if (name == "rare") return FrequencyGroup::kRare;
    if (name == "common") return FrequencyGroup::kCommon;
    if (name == "frequent") return FrequencyGroup::kFrequent;
    throw invalid_argument("unknown frequency group: " + name);
}

std::vector<int> FrequencyGroups::members(FrequencyGroup g) const {
    std::vector<int> out;
    for (std::size_t c = 0; c < group.size(); ++c)
        if (group[c] == g) out.push_back(static_cast<int>(c));
    return out;
}

void render_instance(Image& img, const Box& box, const RenderRecipe& recipe, Rng& rng) {
    std::array<float, 3> col = recipe.color;
    for (auto& c : col) c = std::clamp(c + static_cast<float>(uniform(rng, -0.06, 0.06)), 0.0f, 1.0f);
    const double stripe = std::max(2.0, std::min(box.w, box.h) / 4.0);
    const int x0 = std::max(0, static_cast<int>(std::floor(box.x0())));
    const int y0 = std::max(0, static_cast<int>(std::floor(box.y0())));
    const int x1 = std::min(img.width, static_cast<int>(std::ceil(box.x1())));
    const int y1 = std::min(img.height, static_cast<int>(std::ceil(box.y1())));
    for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
            const double u = (x + 0.5 - box.cx) / (0.5 * box.w);
            const double v = (y + 0.5 - box.cy) / (0.5 * box.h);
            if (!shape_mask(recipe.shape, u, v)) continue;
            float k = 1.0f;
            if (recipe.texture == Texture::kStriped &&
                static_cast<int>(std::floor((x - box.x0() + y - box.y0()) / stripe)) % 2 == 1)
                k = 0.45f;
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = k * col[c];
        }
    }
}

std::vector<int> target_image_counts(const BenchmarkConfig& config) {
    std::vector<int> n(static_cast<std::size_t>(config.num_categories));
    for (int c = 0; c < config.num_categories; ++c) {
        const double v = config.max_images_per_category * std::pow(c + 1.0, -config.exponent);
        n[static_cast<std::size_t>(c)] = std::max(config.min_images_per_category, static_cast<int>(std::lround(v)));
    }
    return n;
}

FrequencyGroups assign_frequency_groups(const std::vector<DetectionImage>& images, int num_categories,
                                        double group_scale) {
    FrequencyGroups g;
    g.image_count.assign(static_cast<std::size_t>(num_categories), 0);
    for (const auto& img : images) {
        std::set<int> present;
        for (const auto& a : img.annotations) present.insert(a.category);
        for (int c : present)
            if (c >= 0 && c < num_categories) ++g.image_count[static_cast<std::size_t>(c)];
    }
    const double rare_max = 10.0 * group_scale;
    const double common_max = 100.0 * group_scale;
    for (int n : g.image_count) {
        // A category absent from the data lands in the rare bin.
        if (n <= rare_max) g.group.push_back(FrequencyGroup::kRare);
        else if (n <= common_max) g.group.push_back(FrequencyGroup::kCommon);
        else g.group.push_back(FrequencyGroup::kFrequent);
    }
    return g;
}

Benchmark generate_longtail_benchmark(const BenchmarkConfig& config) {
    const int K = config.num_categories;
    if (K < 3) throw invalid_argument("benchmark: need at least 3 categories");
    if (config.image_size < 32) throw invalid_argument("benchmark: image_size must be >= 32");
    if (config.num_detection_images <= 0) throw invalid_argument("benchmark: num_detection_images must be positive");
    if (config.max_instances < 1) throw invalid_argument("benchmark: max_instances must be >= 1");
    if (config.weak_multiplier < 0) throw invalid_argument("benchmark: weak_multiplier must be >= 0");

    const auto counts = target_image_counts(config);
    {
        // Bin the target counts directly to validate the exponent before rendering.
        std::vector<FrequencyGroup> bins;
        for (int n : counts) {
            if (n <= 10.0 * config.group_scale) bins.push_back(FrequencyGroup::kRare);
            else if (n <= 100.0 * config.group_scale) bins.push_back(FrequencyGroup::kCommon);
            else bins.push_back(FrequencyGroup::kFrequent);
        }
        for (auto g : {FrequencyGroup::kRare, FrequencyGroup::kCommon, FrequencyGroup::kFrequent})
            if (std::find(bins.begin(), bins.end(), g) == bins.end())
                throw invalid_argument(std::string("benchmark: exponent leaves the ") + group_name(g) +
                                       " group empty");
    }
    const int N = config.num_detection_images;
    const long total = std::accumulate(counts.begin(), counts.end(), 0L);
    if (total < N) throw invalid_argument("benchmark: category image counts cannot cover every image");
    if (total > static_cast<long>(N) * std::min(config.max_instances, K))
        throw invalid_argument("benchmark: too many category occurrences for max_instances");
    for (int n : counts)
        if (n > N) throw invalid_argument("benchmark: a category needs more images than exist");

    Benchmark bench;
    bench.group_scale = config.group_scale;
    {
        Rng rng = make_rng(config.seed, kCategoryStream);
        bench.categories = make_categories(K, rng);
    }

    // Category occurrences: first N fill one image each, the rest go to random
    // images that lack the category and have room.
    std::vector<std::vector<int>> per_image(static_cast<std::size_t>(N));
    {
        Rng rng = make_rng(config.seed, kAssignStream);
        std::vector<int> occ;
        for (int c = 0; c < K; ++c) occ.insert(occ.end(), static_cast<std::size_t>(counts[static_cast<std::size_t>(c)]), c);
        std::shuffle(occ.begin(), occ.end(), rng);
        for (int i = 0; i < N; ++i) per_image[static_cast<std::size_t>(i)].push_back(occ[static_cast<std::size_t>(i)]);
        const int cap = std::min(config.max_instances, K);
        for (std::size_t j = static_cast<std::size_t>(N); j < occ.size(); ++j) {
            const int c = occ[j];
            auto fits = [&](int i) {
                const auto& v = per_image[static_cast<std::size_t>(i)];
                return static_cast<int>(v.size()) < cap && std::find(v.begin(), v.end(), c) == v.end();
            };
            int chosen = -1;
            for (int a = 0; a < 64 && chosen < 0; ++a) {
                const int i = uniform_int(rng, 0, N - 1);
                if (fits(i)) chosen = i;
            }
            for (int i = 0; i < N && chosen < 0; ++i)
                if (fits(i)) chosen = i;
            if (chosen < 0) throw invalid_argument("benchmark: cannot pack category occurrences");
            per_image[static_cast<std::size_t>(chosen)].push_back(c);
        }
    }

    int next_id = 0;
    for (int i = 0; i < N; ++i)
        bench.train.push_back(render_detection_image(next_id++, per_image[static_cast<std::size_t>(i)],
                                                     bench.categories, config.image_size, config.seed));

    const int dropped = K - static_cast<int>(std::lround(config.weak_category_fraction * K));
    for (int c = std::clamp(dropped, 0, K - 1); c < K; ++c) bench.weak_categories.push_back(c);

    const int num_weak = static_cast<int>(std::lround(config.weak_multiplier * N));
    {
        Rng rng = make_rng(config.seed, kWeakLabelStream);
        std::vector<int> labels;
        while (static_cast<int>(labels.size()) < num_weak) {
            std::vector<int> round = bench.weak_categories;
            std::shuffle(round.begin(), round.end(), rng);
            labels.insert(labels.end(), round.begin(), round.end());
        }
        labels.resize(static_cast<std::size_t>(num_weak));
        for (int i = 0; i < num_weak; ++i)
            bench.weak.push_back(render_weak_image(next_id++, labels[static_cast<std::size_t>(i)], bench.categories,
                                                   config.image_size, config.seed));
    }

    {
        Rng rng = make_rng(config.seed, kValStream);
        for (int i = 0; i < config.num_val_images; ++i) {
            const int n = uniform_int(rng, 1, std::min(config.max_instances, K));
            std::vector<int> all(static_cast<std::size_t>(K));
            std::iota(all.begin(), all.end(), 0);
            std::shuffle(all.begin(), all.end(), rng);
            all.resize(static_cast<std::size_t>(n));
            bench.val.push_back(render_detection_image(next_id++, all, bench.categories, config.image_size, config.seed));
        }
    }

    bench.groups = assign_frequency_groups(bench.train, K, config.group_scale);
    return bench;
}

std::vector<double> repeat_factors(const std::vector<DetectionImage>& images, int num_categories,
                                   double threshold) {
    if (!(threshold > 0 && threshold < 1)) throw invalid_argument("repeat factor threshold must be in (0,1)");
    const auto groups = assign_frequency_groups(images, num_categories);
    const double n = static_cast<double>(images.size());
    std::vector<double> cat_r(static_cast<std::size_t>(num_categories), 1.0);
    for (int c = 0; c < num_categories; ++c) {
        const int cnt = groups.image_count[static_cast<std::size_t>(c)];
        if (cnt == 0) continue;
        cat_r[static_cast<std::size_t>(c)] = std::max(1.0, std::sqrt(threshold / (cnt / n)));
    }
    std::vector<double> out;
    out.reserve(images.size());
    for (const auto& img : images) {
        double r = 1.0;
        for (const auto& a : img.annotations) r = std::max(r, cat_r[static_cast<std::size_t>(a.category)]);
        out.push_back(r);
    }
    return out;
}

std::vector<int> repeat_factor_sample(const std::vector<DetectionImage>& images, int num_categories,
                                      double threshold, std::uint64_t seed) {
    const auto r = repeat_factors(images, num_categories, threshold);
    Rng rng(seed);
    std::vector<int> order;
    for (std::size_t i = 0; i < r.size(); ++i) {
        const double whole = std::floor(r[i]);
        int reps = static_cast<int>(whole);
        if (uniform(rng, 0.0, 1.0) < r[i] - whole) ++reps;
        order.insert(order.end(), static_cast<std::size_t>(reps), static_cast<int>(i));
    }
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

void write_benchmark(const std::filesystem::path& dir, const Benchmark& bench) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "images");
    for (const auto* set : {&bench.train, &bench.val})
        for (const auto& img : *set) write_png(dir / "images" / (std::to_string(img.image_id) + ".png"), img.pixels);
    for (const auto& img : bench.weak) write_png(dir / "images" / (std::to_string(img.image_id) + ".png"), img.pixels);

    write_json(dir / "annotations.json", detection_records(bench.train));
    write_json(dir / "val_annotations.json", detection_records(bench.val));
    write_weak_annotations(dir, bench.weak);

    json cats = json::array();
    for (const auto& c : bench.categories) {
        cats.push_back({{"id", c.id},
                        {"name", c.name},
                        {"group", group_name(bench.groups.group[static_cast<std::size_t>(c.id)])},
                        {"image_count", bench.groups.image_count[static_cast<std::size_t>(c.id)]},
                        {"weak", std::find(bench.weak_categories.begin(), bench.weak_categories.end(), c.id) !=
                                     bench.weak_categories.end()}});
    }
    write_json(dir / "categories.json", cats);
    write_json(dir / "benchmark.json", {{"group_scale", bench.group_scale}});
}

void write_weak_annotations(const std::filesystem::path& dir, const std::vector<WeakImage>& weak) {
    json arr = json::array();
    for (const auto& w : weak) {
        json pb = nullptr;
        if (w.predefined_region) {
            const Box& b = *w.predefined_region;
            pb = {b.cx, b.cy, b.w, b.h};
        }
        json rec = {{"image_id", w.image_id}, {"label", w.label}, {"predefined_box", pb}};
        if (w.true_box) rec["audit_box"] = {w.true_box->cx, w.true_box->cy, w.true_box->w, w.true_box->h};
        arr.push_back(std::move(rec));
    }
    write_json(dir / "weak_annotations.json", arr);
}

Benchmark read_benchmark(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw io_error("dataset directory not found: " + dir.string());
    Benchmark bench;
    const json meta = read_json(dir / "benchmark.json");
    bench.group_scale = meta.value("group_scale", 1.0);
    const json cats = read_json(dir / "categories.json");
    for (const auto& c : cats) {
        CategorySpec spec;
        spec.id = c.at("id").get<int>();
        spec.name = c.at("name").get<std::string>();
        if (spec.id != static_cast<int>(bench.categories.size())) throw io_error("categories.json ids must be dense");
        bench.categories.push_back(spec);
        bench.groups.group.push_back(parse_group(c.at("group").get<std::string>()));
        bench.groups.image_count.push_back(c.value("image_count", 0));
        if (c.value("weak", false)) bench.weak_categories.push_back(spec.id);
    }
    bench.train = load_detection_records(dir, read_json(dir / "annotations.json"));
    if (std::filesystem::exists(dir / "val_annotations.json"))
        bench.val = load_detection_records(dir, read_json(dir / "val_annotations.json"));
    for (const auto& r : read_json(dir / "weak_annotations.json")) {
        WeakImage w;
        w.image_id = r.at("image_id").get<int>();
        w.label = r.at("label").get<int>();
        if (!r.at("predefined_box").is_null()) w.predefined_region = box_from_json(r.at("predefined_box"));
        if (r.contains("audit_box")) w.true_box = box_from_json(r.at("audit_box"));
        w.pixels = read_png(dir / "images" / (std::to_string(w.image_id) + ".png"));
        bench.weak.push_back(std::move(w));
    }
    return bench;
}

}  // namespace clis
