#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "clis/common.hpp"
#include "clis/image.hpp"

namespace clis {

enum class ShapeKind : int { kCircle, kSquare, kTriangle, kDiamond, kCross, kRing };
enum class Texture : int { kSolid, kStriped };

struct RenderRecipe {
    ShapeKind shape = ShapeKind::kCircle;
    std::array<float, 3> color{1, 0, 0};
    Texture texture = Texture::kSolid;
};

struct CategorySpec {
    int id = 0;
    std::string name;
    RenderRecipe recipe;
};

struct InstanceAnnotation {
    Box box;
    int category = 0;
    bool operator==(const InstanceAnnotation&) const = default;
};

struct DetectionImage {
    int image_id = 0;
    Image pixels;
    std::vector<InstanceAnnotation> annotations;
};

struct WeakImage {
    int image_id = 0;
    Image pixels;
    int label = 0;
    std::optional<Box> predefined_region;
    /// Generator-side box of the labeled instance; audit only, never used for training.
    std::optional<Box> true_box;
};

enum class FrequencyGroup : int { kRare = 0, kCommon = 1, kFrequent = 2 };

const char* group_name(FrequencyGroup g);
FrequencyGroup parse_group(const std::string& name);

struct FrequencyGroups {
    std::vector<FrequencyGroup> group;  // indexed by category id
    std::vector<int> image_count;

    std::vector<int> members(FrequencyGroup g) const;
};

struct BenchmarkConfig {
    int num_categories = 20;
    /// Images per category follow max_images * (rank + 1)^-exponent, floored at min_images.
    double exponent = 1.77;
    int max_images_per_category = 400;
    int min_images_per_category = 2;
    int num_detection_images = 500;
    /// |D_i| = weak_multiplier * |D_d|.
    double weak_multiplier = 10.0;
    /// Fraction of categories that receive image-level data; the most frequent ones are left out.
    double weak_category_fraction = 0.9;
    int num_val_images = 300;
    int image_size = 64;
    int max_instances = 4;
    /// Multiplies the 10 / 100 image thresholds of the frequency bins.
    double group_scale = 1.0;
    std::uint64_t seed = 7;

    bool operator==(const BenchmarkConfig&) const = default;
};

struct Benchmark {
    std::vector<CategorySpec> categories;
    std::vector<DetectionImage> train;
    std::vector<WeakImage> weak;
    std::vector<DetectionImage> val;
    std::vector<int> weak_categories;
    FrequencyGroups groups;
    double group_scale = 1.0;
};

/// Target number of train images per category for a config.
std::vector<int> target_image_counts(const BenchmarkConfig& config);

Benchmark generate_longtail_benchmark(const BenchmarkConfig& config);

FrequencyGroups assign_frequency_groups(const std::vector<DetectionImage>& images, int num_categories,
                                        double group_scale = 1.0);

/// Per-image repeat factor max_c max(1, sqrt(threshold / f_c)).
std::vector<double> repeat_factors(const std::vector<DetectionImage>& images, int num_categories,
                                   double threshold);

/// One epoch of image indices (positions in `images`) with stochastic rounding of
/// the repeat factors, shuffled by seed.
std::vector<int> repeat_factor_sample(const std::vector<DetectionImage>& images, int num_categories,
                                      double threshold, std::uint64_t seed);

/// Renders one instance of a category into an image. Exposed for tests.
void render_instance(Image& img, const Box& box, const RenderRecipe& recipe, Rng& rng);

void write_benchmark(const std::filesystem::path& dir, const Benchmark& bench);
Benchmark read_benchmark(const std::filesystem::path& dir);
/// Rewrites weak_annotations.json only (used after region generation).
void write_weak_annotations(const std::filesystem::path& dir, const std::vector<WeakImage>& weak);

}  // namespace clis
