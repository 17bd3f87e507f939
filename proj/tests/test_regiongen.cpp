#include "clis/regiongen.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace clis;

namespace {
constexpr int kEagle = 3, kDog = 5;
}

TEST_CASE("category rank first picks the labeled category, not the top score") {
    const Box A = Box::from_corners(10, 10, 30, 40), B = Box::from_corners(50, 5, 90, 60);
    const std::vector<ScoredBox> preds{{A, kEagle, 0.3}, {B, kDog, 0.9}};
    const RegionChoice c = category_rank_first(preds, kEagle, 100, 100);
    CHECK(c.box == A);
    CHECK_FALSE(c.fallback);
    // The rule it replaces would have taken the dog box.
    REQUIRE(global_argmax(preds).has_value());
    CHECK(global_argmax(preds)->box == B);
    CHECK(global_argmax(preds)->box != c.box);
}

TEST_CASE("highest-scoring box of the label wins; first on ties") {
    const Box A = Box::from_corners(0, 0, 5, 5), B = Box::from_corners(10, 10, 20, 20), C = Box::from_corners(1, 1, 9, 9);
    CHECK(category_rank_first({{A, kEagle, 0.4}, {B, kEagle, 0.7}, {C, kDog, 0.95}}, kEagle, 32, 32).box == B);
    CHECK(category_rank_first({{A, kEagle, 0.7}, {B, kEagle, 0.7}}, kEagle, 32, 32).box == A);
}

TEST_CASE("no box of the label falls back to the whole image") {
    const RegionChoice c = category_rank_first({{Box::from_corners(0, 0, 5, 5), kDog, 0.99}}, kEagle, 64, 48);
    CHECK(c.fallback);
    CHECK(c.box == Box::from_corners(0, 0, 64, 48));
    CHECK(category_rank_first({}, kEagle, 64, 48).fallback);
    CHECK_FALSE(global_argmax({}).has_value());
}

TEST_CASE("choice depends only on the ranking within the label") {
    Rng rng = make_rng(51, 0);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<ScoredBox> preds;
        const int n = uniform_int(rng, 1, 12);
        for (int i = 0; i < n; ++i)
            preds.push_back({Box::from_corners(i, i, i + 10, i + 10), uniform_int(rng, 0, 3), uniform(rng, 0, 1)});
        auto shifted = preds;
        for (auto& p : shifted) p.score = std::log(p.score + 1e-3) * 2 + 7;
        CHECK(category_rank_first(preds, 1, 64, 64).box == category_rank_first(shifted, 1, 64, 64).box);
    }
}

TEST_CASE("regions from a detector are deterministic and inside the image") {
    const DetectorParams p = make_detector(testing::tiny_detector(4), 52);
    std::vector<WeakImage> weak(3);
    Rng rng = make_rng(53, 0);
    for (int i = 0; i < 3; ++i) {
        weak[static_cast<std::size_t>(i)].image_id = i;
        weak[static_cast<std::size_t>(i)].label = i;
        weak[static_cast<std::size_t>(i)].pixels = Image(64, 64);
        for (auto& v : weak[static_cast<std::size_t>(i)].pixels.data) v = static_cast<float>(uniform(rng, 0, 1));
    }
    auto again = weak;
    const RegionReport r1 = generate_predefined_regions(p, weak);
    const RegionReport r2 = generate_predefined_regions(p, again);
    CHECK(r1.total == 3);
    CHECK(r1.fallbacks == r2.fallbacks);
    for (std::size_t i = 0; i < 3; ++i) {
        REQUIRE(weak[i].predefined_region.has_value());
        CHECK(*weak[i].predefined_region == *again[i].predefined_region);
        CHECK(weak[i].predefined_region->inside(64, 64));
    }
}
