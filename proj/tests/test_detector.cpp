#include <filesystem>
#include <set>

#include "clis/detector.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace clis;
using ag::Var;
using testing::gradient_error;
using testing::random_values;

namespace {

std::set<const ag::Node*> nodes(const std::vector<Var>& vs) {
    std::set<const ag::Node*> out;
    for (const auto& v : vs) out.insert(v.node());
    return out;
}

bool has_grad(const std::vector<Var>& vs) {
    for (const auto& v : vs)
        for (double g : v.grad())
            if (g != 0.0) return true;
    return false;
}

Image noise_image(int h, int w, std::uint64_t seed) {
    Rng rng = make_rng(seed, 0);
    Image img(h, w);
    for (auto& v : img.data) v = static_cast<float>(uniform(rng, 0, 1));
    return img;
}

}  // namespace

TEST_CASE("feature pyramid shapes and determinism") {
    const auto cfg = testing::tiny_detector();
    CHECK(cfg.strides() == std::vector<int>{8, 16});
    const DetectorParams p = make_detector(cfg, 1);
    const Image img = noise_image(128, 128, 2);
    const FeaturePyramid a = extract_features(p, img);
    REQUIRE(a.levels.size() == 2);
    CHECK(a.levels[0].shape() == ag::Shape{8, 16, 16});
    CHECK(a.levels[1].shape() == ag::Shape{8, 8, 8});
    const FeaturePyramid b = extract_features(p, img);
    for (int l = 0; l < 2; ++l)
        CHECK(std::equal(a.levels[l].value().begin(), a.levels[l].value().end(), b.levels[l].value().begin()));

    SUBCASE("zero image with zero biases gives zero features") {
        DetectorParams z = make_detector(cfg, 3);
        for (auto& c : z.backbone) std::fill(c.bias.mutable_value().begin(), c.bias.mutable_value().end(), 0.0);
        const FeaturePyramid f = extract_features(z, Image(64, 64, 0.0f));
        for (const auto& l : f.levels)
            for (double v : l.value()) CHECK(v == 0.0);
    }
}

TEST_CASE("rpn loss examples") {
    const auto cfg = testing::tiny_detector();
    Rng rng = make_rng(4, 0);

    SUBCASE("anchors equal to the GT give zero regression targets and loss") {
        const std::vector<Box> anchors{Box::from_corners(0, 0, 16, 16), Box::from_corners(32, 32, 56, 56),
                                       Box::from_corners(80, 0, 96, 40)};
        const std::vector<InstanceAnnotation> gt{{anchors[0], 0}, {anchors[1], 1}};
        const AnchorTargets t = assign_anchor_targets(anchors, gt, cfg, rng);
        REQUIRE(t.positives.size() == 2);
        for (const auto& d : t.reg_targets)
            for (double v : d) CHECK(v == 0.0);
        const RpnLoss l = rpn_loss(Var::zeros({3, 1}), Var::zeros({3, 4}), t, cfg.smooth_l1_beta);
        CHECK(l.reg.item() == 0.0);
    }
    SUBCASE("no overlapping anchors: all negative, no regression") {
        const std::vector<Box> anchors{Box::from_corners(0, 0, 16, 16), Box::from_corners(0, 20, 16, 36)};
        const std::vector<InstanceAnnotation> gt{{Box::from_corners(60, 60, 90, 90), 0}};
        const AnchorTargets t = assign_anchor_targets(anchors, gt, cfg, rng);
        CHECK(t.positives.empty());
        CHECK(t.sampled.size() == 2);
        for (double v : t.labels) CHECK(v == 0.0);
        const RpnLoss l = rpn_loss(Var::parameter({2, 1}, {0.3, -0.2}), Var::parameter({2, 4}, std::vector<double>(8, 0.5)), t,
                                   cfg.smooth_l1_beta);
        CHECK(l.reg.item() == 0.0);
    }
    SUBCASE("uniform logits over one positive and one negative anchor") {
        AnchorTargets t;
        t.sampled = {0, 1};
        t.labels = {1.0, 0.0};
        t.positives = {0};
        t.reg_targets = {Deltas{0, 0, 0, 0}};
        const RpnLoss l = rpn_loss(Var::zeros({2, 1}), Var::zeros({2, 4}), t, cfg.smooth_l1_beta);
        CHECK(l.cls.item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
        CHECK(l.reg.item() == 0.0);
    }
    SUBCASE("gradients of the rpn loss") {
        AnchorTargets t;
        t.sampled = {0, 2, 3};
        t.labels = {1.0, 0.0, 1.0};
        t.positives = {0, 3};
        t.reg_targets = {Deltas{0.1, -0.2, 0.05, 0.3}, Deltas{-0.4, 0.0, 0.2, -0.1}};
        const Var logits = Var::parameter({4, 1}, random_values(rng, 4));
        const Var deltas = Var::parameter({4, 4}, random_values(rng, 16));
        auto loss = [&] { return rpn_loss(logits, deltas, t, 1.0 / 9.0).total; };
        CHECK(gradient_error(logits, loss) < 1e-6);
        CHECK(gradient_error(deltas, loss) < 1e-4);
    }
}

TEST_CASE("box coding") {
    const Box a{50, 40, 10, 20};
    CHECK(decode_box({0, 0, 0, 0}, a) == a);
    const Box d = decode_box({0, 0, std::log(2.0), 0}, a);
    CHECK(d.w == doctest::Approx(20.0).epsilon(1e-15));
    CHECK(d.cx == 50);
    const Box g{47, 45, 14, 9};
    const Box r = decode_box(encode_box(g, a), a);
    CHECK(r.cx == doctest::Approx(g.cx));
    CHECK(r.cy == doctest::Approx(g.cy));
    CHECK(r.w == doctest::Approx(g.w));
    CHECK(r.h == doctest::Approx(g.h));
    // Huge log deltas are clamped rather than overflowing.
    CHECK(std::isfinite(decode_box({0, 0, 100, 100}, a).w));
}

TEST_CASE("pyramid level assignment") {
    const std::vector<int> s{8, 16};
    CHECK(level_for_box(Box{0, 0, 8, 8}, s) == 0);
    CHECK(level_for_box(Box{0, 0, 31, 31}, s) == 0);
    CHECK(level_for_box(Box{0, 0, 32, 32}, s) == 1);
    CHECK(level_for_box(Box{0, 0, 300, 300}, s) == 1);
}

TEST_CASE("localization head with zero weights") {
    const DetectorParams p = make_detector(testing::tiny_detector(), 5);
    LocSubnet loc = p.loc;
    loc.deltas.weight = Var::parameter(loc.deltas.weight.shape(), std::vector<double>(loc.deltas.weight.size(), 0.0));
    loc.deltas.bias = Var::parameter({4}, std::vector<double>(4, 0.0));
    loc.objectness.weight =
        Var::parameter(loc.objectness.weight.shape(), std::vector<double>(loc.objectness.weight.size(), 0.0));
    loc.objectness.bias = Var::parameter({1}, {0.75});
    Rng rng = make_rng(6, 0);
    const int in = p.loc.trunk->fc1.weight.dim(1);
    const LocOutput out = loc_forward(loc, Var::constant({3, in}, random_values(rng, 3 * static_cast<std::size_t>(in))));
    for (double v : out.deltas.value()) CHECK(v == 0.0);
    for (double v : out.objectness.value()) CHECK(v == 0.75);
}

TEST_CASE("task-specialized sub-networks are disjoint and gradient-isolated") {
    Rng rng = make_rng(7, 0);
    const auto cfg = testing::tiny_detector();
    const DetectorParams p = make_detector(cfg, 8);
    const auto loc_set = nodes(p.loc_parameters());
    const auto cls_set = nodes(p.cls_parameters());
    for (const auto* n : loc_set) CHECK(cls_set.count(n) == 0);

    const int in = p.loc.trunk->fc1.weight.dim(1);
    const Var roi = Var::constant({4, in}, random_values(rng, 4 * static_cast<std::size_t>(in)));

    p.zero_grad();
    const LocOutput lo = loc_forward(p.loc, roi);
    ag::backward(ag::add(ag::sum(lo.deltas), ag::sum(lo.objectness)));
    CHECK(has_grad(p.loc_parameters()));
    CHECK_FALSE(has_grad(p.cls_parameters()));

    p.zero_grad();
    ag::backward(ag::sum(incls_forward(p, roi).logits));
    CHECK(has_grad(p.cls_parameters()));
    CHECK_FALSE(has_grad(p.loc_parameters()));

    SUBCASE("without TSS the trunk is one shared parameter set") {
        auto c = cfg;
        c.task_specialized = false;
        const DetectorParams s = make_detector(c, 8);
        CHECK(s.loc.trunk.get() == s.cls->trunk.get());
        const auto shared = nodes(s.loc_parameters());
        int common = 0;
        for (const auto* n : nodes(s.cls_parameters())) common += static_cast<int>(shared.count(n));
        CHECK(common == 4);  // fc1 and fc2, weight and bias
    }
}

TEST_CASE("siamese classifier shares the instance classifier") {
    Rng rng = make_rng(9, 0);
    const auto cfg = testing::tiny_detector();
    const DetectorParams p = make_detector(cfg, 10);
    CHECK(p.imcls.get() == p.cls.get());
    CHECK(p.imcls_proj.get() == p.cls_proj.get());
    const int in = p.cls->trunk->fc1.weight.dim(1);
    const Var roi = Var::constant({5, in}, random_values(rng, 5 * static_cast<std::size_t>(in)));
    const auto a = cls_forward(*p.cls, roi).logits;
    const auto b = cls_forward(*p.imcls, roi).logits;
    CHECK(std::equal(a.value().begin(), a.value().end(), b.value().begin()));

    SUBCASE("without SS the image classifier is an independent copy") {
        auto c = cfg;
        c.siamese = false;
        const DetectorParams s = make_detector(c, 10);
        CHECK(s.imcls.get() != s.cls.get());
        CHECK(s.imcls->trunk->fc1.weight.node() != s.cls->trunk->fc1.weight.node());
        CHECK(s.named_parameters().size() > p.named_parameters().size());
    }
}

TEST_CASE("checkpoint round trip is bit-exact") {
    const auto dir = std::filesystem::temp_directory_path() / "clis_test_ckpt";
    std::filesystem::remove_all(dir);
    auto cfg = testing::tiny_detector(4);
    cfg.siamese = false;
    const DetectorParams p = make_detector(cfg, 11);
    save_checkpoint(dir, p);
    const DetectorParams q = load_checkpoint(dir);
    CHECK(q.config == p.config);
    const auto a = p.named_parameters(), b = q.named_parameters();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].first == b[i].first);
        CHECK(a[i].second.shape() == b[i].second.shape());
        CHECK(std::equal(a[i].second.value().begin(), a[i].second.value().end(), b[i].second.value().begin()));
    }
    const std::string h = checkpoint_hash(dir);
    save_checkpoint(dir, q);
    CHECK(checkpoint_hash(dir) == h);
    std::filesystem::remove_all(dir);
    CHECK_THROWS_AS(load_checkpoint(dir), Error);
}

TEST_CASE("head losses: values and gradients") {
    Rng rng = make_rng(12, 0);
    const auto cfg = testing::tiny_detector(3);
    const DetectorParams p = make_detector(cfg, 13);
    const int in = p.loc.trunk->fc1.weight.dim(1);
    const Var roi = Var::parameter({4, in}, random_values(rng, 4 * static_cast<std::size_t>(in)));
    RoiSample s;
    s.boxes.assign(4, Box{10, 10, 8, 8});
    s.labels = {0, 3, 2, 3};
    s.positives = {0, 2};
    s.reg_targets = {Deltas{0.1, 0.2, -0.1, 0.05}, Deltas{-0.3, 0.0, 0.2, 0.1}};
    auto total = [&] {
        const HeadLosses h = head_losses(loc_forward(p.loc, roi), incls_forward(p, roi), s, cfg);
        return ag::add_n({h.incls, h.loc, h.obj});
    };
    CHECK(gradient_error(roi, total) < 1e-4);
    CHECK(gradient_error(p.cls->logits.weight, total) < 1e-5);
    CHECK(gradient_error(p.loc.objectness.bias, total) < 1e-6);
}

TEST_CASE("training forward stays finite on random scenes") {
    const auto cfg = testing::tiny_detector(3);
    const DetectorParams p = make_detector(cfg, 14);
    Rng rng = make_rng(15, 0);
    for (int trial = 0; trial < 200; ++trial) {
        const int size = 32 * uniform_int(rng, 1, 3);
        const Image img = noise_image(size, size, static_cast<std::uint64_t>(trial));
        std::vector<InstanceAnnotation> gt;
        const int n = uniform_int(rng, 1, 3);
        for (int k = 0; k < n; ++k) {
            const double w = uniform(rng, 4, size), h = uniform(rng, 4, size);
            const double x = uniform(rng, 0, size - w), y = uniform(rng, 0, size - h);
            gt.push_back({Box::from_corners(x, y, x + w, y + h), uniform_int(rng, 0, 2)});
        }
        const DetectionForward f = detection_forward(p, img, gt, rng);
        for (const Var& v : {f.rpn.total, f.heads.incls, f.heads.loc, f.heads.obj}) REQUIRE(std::isfinite(v.item()));
    }
}
