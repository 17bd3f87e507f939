#include <chrono>
#include <filesystem>

#include "clis/evalkit.hpp"
#include "doctest.h"
#include "oracles.hpp"
#include "support.hpp"

using namespace clis;
using namespace oracle;

TEST_CASE("iou examples") {
    const Box a = Box::from_corners(0, 0, 2, 2), b = Box::from_corners(1, 0, 3, 2);
    CHECK(iou(a, a) == 1.0);
    CHECK(iou(a, Box::from_corners(5, 5, 6, 6)) == 0.0);
    CHECK(iou(a, b) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(iou(a, b) == pixel_iou(a, b));
}

TEST_CASE("single-pair AP examples") {
    const auto groups = groups_of({FrequencyGroup::kRare});
    const Box g = Box::from_corners(0, 0, 10, 10);
    const std::vector<DetectionImage> gt{gt_image(0, {g})};
    CHECK(evaluate_ap({{0, 0, g, 0.9}}, gt, groups).AP == doctest::Approx(100.0));
    // 10 x 6 inside 10 x 10: IoU = 0.6, a hit at 0.5, 0.55 and 0.6 only.
    const Box d = Box::from_corners(0, 0, 10, 6);
    CHECK(iou(d, g) == doctest::Approx(0.6));
    const APReport r = evaluate_ap({{0, 0, d, 0.9}}, gt, groups);
    CHECK(r.AP == doctest::Approx(30.0).epsilon(1e-12));
    CHECK(r.AP_r == doctest::Approx(30.0).epsilon(1e-12));
    CHECK(evaluate_ap({}, gt, groups).AP == 0.0);
}

TEST_CASE("categories without ground truth stay out of the means") {
    const auto groups = groups_of({FrequencyGroup::kRare, FrequencyGroup::kCommon, FrequencyGroup::kFrequent});
    const Box g = Box::from_corners(0, 0, 10, 10);
    const std::vector<DetectionImage> gt{gt_image(0, {g}, 2)};
    const APReport r = evaluate_ap({{0, 2, g, 0.5}, {0, 0, g, 0.9}}, gt, groups);
    CHECK(std::isnan(r.categories[0].ap));
    CHECK(std::isnan(r.AP_r));
    CHECK(std::isnan(r.AP_c));
    CHECK(r.AP_f == doctest::Approx(100.0));
    CHECK(r.AP == doctest::Approx(100.0));
}

TEST_CASE("evaluator agrees with the brute-force oracle on small cases") {
    const auto t0 = std::chrono::steady_clock::now();
    const auto groups = groups_of({FrequencyGroup::kRare});
    Rng rng = make_rng(41, 0);
    int cases = 0;
    for (int n_gt = 1; n_gt <= 3; ++n_gt)
        for (int n_det = 0; n_det <= 4; ++n_det)
            for (int rep = 0; rep < 150; ++rep) {
                const auto [gt, dets] = corpus_case(rng, n_gt, n_det);
                const APReport r = evaluate_ap(dets, {gt_image(0, gt)}, groups);
                const double expect = oracle_category_ap(dets, gt);
                REQUIRE(r.categories[0].ap == doctest::Approx(expect).epsilon(1e-12));
                ++cases;
            }
    CHECK(cases == 3 * 5 * 150);
    CHECK(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() < 30.0);
}

TEST_CASE("AP properties") {
    const auto groups = groups_of({FrequencyGroup::kCommon});
    Rng rng = make_rng(42, 0);
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<Box> gt;
        for (int i = 0; i < 3; ++i) gt.push_back(random_box(rng));
        const std::vector<DetectionImage> gimg{gt_image(0, gt)};
        std::vector<Detection> dets;
        for (int i = 0; i < 4; ++i) dets.push_back({0, 0, random_box(rng), uniform(rng, 0.01, 0.99)});
        dets.push_back({0, 0, gt[0], uniform(rng, 0.01, 0.99)});
        const double ap = evaluate_ap(dets, gimg, groups).AP;

        auto rescaled = dets;
        for (auto& d : rescaled) d.score = std::exp(3 * d.score) - 0.5;
        CHECK(evaluate_ap(rescaled, gimg, groups).AP == doctest::Approx(ap).epsilon(1e-12));

        auto with_fp = dets;
        with_fp.push_back({0, 0, Box::from_corners(30, 30, 31, 31), 0.0});
        CHECK(evaluate_ap(with_fp, gimg, groups).AP <= ap + 1e-12);

        // A new GT that nothing overlaps, then a detection that hits it exactly.
        auto more_gt = gt;
        more_gt.push_back(Box::from_corners(40, 40, 50, 50));
        const std::vector<DetectionImage> gimg2{gt_image(0, more_gt)};
        const double before = evaluate_ap(dets, gimg2, groups).AP;
        auto with_tp = dets;
        with_tp.push_back({0, 0, more_gt.back(), uniform(rng, 0, 1)});
        CHECK(evaluate_ap(with_tp, gimg2, groups).AP >= before - 1e-12);
    }
}

TEST_CASE("inference scores, floor and cap") {
    InferenceConfig cfg;

    SUBCASE("score is sigmoid(objectness) times the class softmax") {
        HeadPredictions p;
        p.boxes = {Box::from_corners(0, 0, 10, 10)};
        p.objectness = {0.0};
        p.cls_logits = {{std::log(4.0), 0.0}};  // softmax 0.8 for class 0
        const auto d = compose_detections(p, 3, cfg);
        REQUIRE(d.size() == 1);
        CHECK(d[0].score == doctest::Approx(0.4).epsilon(1e-15));
        CHECK(d[0].image_id == 3);
        CHECK(d[0].category == 0);
    }
    SUBCASE("scores at or under the floor are dropped") {
        HeadPredictions p;
        p.boxes = {Box::from_corners(0, 0, 10, 10), Box::from_corners(20, 20, 30, 30)};
        p.objectness = {0.0, 0.0};
        const double q = 1e-4;  // class probability, so the score is 5e-5
        p.cls_logits = {{std::log(q / (1 - q)), 0.0}, {std::log(4.0), 0.0}};
        auto d = compose_detections(p, 0, cfg);
        REQUIRE(d.size() == 1);
        CHECK(d[0].score == doctest::Approx(0.4));
        // Exactly at the floor is excluded too.
        InferenceConfig at = cfg;
        at.score_floor = d[0].score;
        CHECK(compose_detections(p, 0, at).empty());
    }
    SUBCASE("400 surviving boxes are cut to the 300 best") {
        HeadPredictions p;
        Rng rng = make_rng(43, 0);
        for (int i = 0; i < 400; ++i) {
            const double x = (i % 20) * 20.0, y = (i / 20) * 20.0;
            p.boxes.push_back(Box::from_corners(x, y, x + 10, y + 10));
            p.objectness.push_back(uniform(rng, -3, 3));
            p.cls_logits.push_back({uniform(rng, -1, 1), -5.0});
        }
        const auto d = compose_detections(p, 0, cfg);
        REQUIRE(d.size() == 300);
        std::vector<double> all;
        for (std::size_t i = 0; i < 400; ++i) {
            const auto& z = p.cls_logits[i];
            all.push_back(sigmoid(p.objectness[i]) * std::exp(z[0]) / (std::exp(z[0]) + std::exp(z[1])));
        }
        std::sort(all.begin(), all.end(), std::greater<>());
        for (std::size_t i = 0; i < 300; ++i) CHECK(d[i].score == doctest::Approx(all[i]).epsilon(1e-12));
        for (const auto& x : d) CHECK(x.score > 1e-4);
    }
    SUBCASE("per-class NMS at 0.5") {
        HeadPredictions p;
        p.boxes = {Box::from_corners(0, 0, 10, 10), Box::from_corners(0, 0, 10, 8), Box::from_corners(0, 0, 10, 4)};
        p.objectness = {2.0, 1.0, 0.5};
        p.cls_logits = {{3.0, 0.0}, {3.0, 0.0}, {3.0, 0.0}};
        const auto d = compose_detections(p, 0, cfg);
        CHECK(d.size() == 2);  // IoU 0.8 suppressed, IoU 0.4 kept
    }
}

TEST_CASE("detector inference respects the output contract") {
    const DetectorParams p = make_detector(testing::tiny_detector(3), 44);
    Image img(64, 64, 0.3f);
    const auto d = infer(p, img, 5);
    CHECK(d.size() <= 300);
    for (const auto& x : d) {
        CHECK(x.score > 1e-4);
        CHECK(x.box.inside(64, 64));
    }
}

TEST_CASE("detections and AP reports round-trip through files") {
    const auto dir = std::filesystem::temp_directory_path() / "clis_test_eval";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    const std::vector<Detection> dets{{1, 2, Box::from_corners(0.5, 1.25, 9, 7), 0.625}, {3, 0, Box{5, 5, 2, 2}, 0.125}};
    write_detections(dir / "d.json", dets);
    const auto back = read_detections(dir / "d.json");
    REQUIRE(back.size() == 2);
    CHECK(back[0].box == dets[0].box);
    CHECK(back[1].score == 0.125);

    const auto groups = groups_of({FrequencyGroup::kRare, FrequencyGroup::kFrequent});
    const APReport r = evaluate_ap(dets, {gt_image(1, {Box::from_corners(0, 0, 9, 7)})}, groups);
    write_ap_report(dir / "ap.json", dir / "ap.csv", r);
    const APReport q = read_ap_report(dir / "ap.json");
    CHECK(q.AP == r.AP);
    CHECK(q.AP_r == r.AP_r);
    CHECK(std::isnan(q.AP_f));
    CHECK(std::isnan(q.categories[1].ap));
    CHECK(q.categories[0].per_threshold == r.categories[0].per_threshold);
    std::filesystem::remove_all(dir);
}
