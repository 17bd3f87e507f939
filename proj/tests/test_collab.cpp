#include <chrono>
#include <deque>
#include <limits>

#include "clis/collab.hpp"
#include "doctest.h"
#include "oracles.hpp"
#include "support.hpp"

using namespace clis;
using ag::Var;
using oracle::oracle_loss;
using oracle::unit;

namespace {

WeakImage region_image(int id, int label, std::uint64_t seed) {
    Rng rng = make_rng(seed, 0);
    WeakImage w;
    w.image_id = id;
    w.label = label;
    w.pixels = Image(64, 64);
    for (auto& v : w.pixels.data) v = static_cast<float>(uniform(rng, 0, 1));
    w.predefined_region = Box::from_corners(8, 12, 40, 52);
    return w;
}

}  // namespace

TEST_CASE("contrastive loss worked values") {
    const auto t0 = std::chrono::steady_clock::now();
    FeatureQueue empty(8, 2);
    const Var a = Var::parameter({2}, {1.0, 0.0});
    CHECK(std::abs(contrastive_loss(a, {0.6, 0.8}, empty, 0.2).item()) <= 1e-9);

    FeatureQueue q(8, 2);
    q.enqueue({{0.0, 1.0}});
    // f_i . f_d = 1, f_i . q = 0, tau = 0.2.
    CHECK(std::abs(contrastive_loss(a, {1.0, 0.0}, q, 0.2).item() - std::log1p(std::exp(-5.0))) <= 1e-9);
    CHECK(std::abs(std::log1p(std::exp(-5.0)) - 0.006715) < 5e-7);
    // f_i . f_d = 0 and f_i . q = 0: symmetric two-way softmax.
    for (double tau : {0.05, 0.2, 1.0, 7.0})
        CHECK(std::abs(contrastive_loss(a, {0.0, -1.0}, q, tau).item() - std::log(2.0)) <= 1e-9);

    CHECK_THROWS_AS(contrastive_loss(a, {1.0, 0.0}, q, 0.0), Error);
    CHECK_THROWS_AS(contrastive_loss(a, {1.0, 0.0, 0.0}, q, 0.2), Error);

    SUBCASE("matches the oracle and central differences on random unit configurations") {
        Rng rng = make_rng(21, 0);
        for (int trial = 0; trial < 100; ++trial) {
            const int dim = uniform_int(rng, 2, 16);
            const double tau = uniform(rng, 0.05, 1.0);
            FeatureQueue queue(64, dim);
            std::vector<std::vector<double>> qs;
            const int n = uniform_int(rng, 0, 20);
            for (int i = 0; i < n; ++i) qs.push_back(unit(rng, dim));
            queue.enqueue(qs);
            const auto fi0 = unit(rng, dim);
            const auto fd = unit(rng, dim);
            const Var fi = Var::parameter({dim}, fi0);
            CHECK(contrastive_loss(fi, fd, queue, tau).item() == doctest::Approx(oracle_loss(fi0, fd, qs, tau)).epsilon(1e-12));
            CHECK(testing::gradient_error(fi, [&] { return contrastive_loss(fi, fd, queue, tau); }) < 1e-4);
        }
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    CHECK(secs < 1.0);
}

TEST_CASE("contrastive loss falls as the positive similarity rises") {
    FeatureQueue q(8, 2);
    q.enqueue({{0.0, 1.0}, {-1.0, 0.0}});
    double prev = INFINITY;
    for (int k = 0; k <= 20; ++k) {
        const double th = M_PI * (1.0 - k / 20.0);
        const double l = contrastive_loss(Var::constant({2}, {1.0, 0.0}), {std::cos(th), std::sin(th)}, q, 0.2).item();
        CHECK(l < prev);
        prev = l;
    }
}

TEST_CASE("feature queue is a bounded FIFO") {
    FeatureQueue q(4, 1);
    q.enqueue({{1.0}, {-1.0}, {1.0}});
    CHECK(q.size() == 3);
    CHECK(q.entries() == std::deque<std::vector<double>>{{1.0}, {-1.0}, {1.0}});

    SUBCASE("capacity 4, [a,b,c] + [d,e] -> [b,c,d,e]") {
        FeatureQueue r(4, 2);
        const std::vector<double> a{1, 0}, b{0, 1}, c{-1, 0}, d{0, -1}, e{0.6, 0.8};
        r.enqueue({a, b, c});
        r.enqueue({d, e});
        CHECK(r.entries() == std::deque<std::vector<double>>{b, c, d, e});
    }
    SUBCASE("randomized sequences against a reference deque") {
        Rng rng = make_rng(22, 0);
        for (int run = 0; run < 10; ++run) {
            const std::size_t cap = static_cast<std::size_t>(uniform_int(rng, 0, 40));
            FeatureQueue fq(cap, 3);
            std::deque<std::vector<double>> ref;
            for (int op = 0; op < 1000; ++op) {
                std::vector<std::vector<double>> batch;
                const int n = uniform_int(rng, 0, 7);
                for (int i = 0; i < n; ++i) batch.push_back(unit(rng, 3));
                fq.enqueue(batch);
                for (auto& v : batch) ref.push_back(v);
                while (ref.size() > cap) ref.pop_front();
                REQUIRE(fq.size() == ref.size());
                REQUIRE(fq.size() <= cap);
            }
            CHECK(fq.entries() == ref);
        }
    }
    SUBCASE("bad rows are rejected") {
        CHECK_THROWS_AS(q.enqueue({{0.5}}), Error);
        CHECK_THROWS_AS(q.enqueue({{1.0, 0.0}}), Error);
    }
}

TEST_CASE("momentum update is an exact EMA") {
    const Var online = Var::parameter({3}, {0.0, 0.0, 0.0});
    for (double m : {0.0, 0.999, 1.0}) {
        const Var mom = Var::constant({3}, {1.0, 1.0, 1.0});
        momentum_update({online}, {mom}, m);
        for (double v : mom.value()) CHECK(v == m * 1.0 + (1.0 - m) * 0.0);
    }
    const Var mom = Var::constant({3}, {1.0, 1.0, 1.0});
    momentum_update({online}, {mom}, 0.999);
    CHECK(mom.value()[0] == 0.999);

    SUBCASE("detector-level update follows the classification branch") {
        const DetectorParams p = make_detector(testing::tiny_detector(), 23);
        MomentumBranch b = make_momentum_branch(p, 0.0);
        for (const auto& v : b.parameters()) CHECK_FALSE(v.requires_grad());
        auto w = p.cls->trunk->fc1.weight;
        w.mutable_value()[0] += 0.5;
        momentum_update(p, b);
        CHECK(b.trunk.fc1.weight.value()[0] == w.value()[0]);
        b.m = 1.0;
        const double keep = b.trunk.fc1.weight.value()[0];
        w.mutable_value()[0] += 0.5;
        momentum_update(p, b);
        CHECK(b.trunk.fc1.weight.value()[0] == keep);
        CHECK_THROWS_AS(momentum_update({online}, {Var::constant({2}, {1, 1})}, 0.5), Error);
    }
}

TEST_CASE("projection head") {
    Rng rng = make_rng(24, 0);
    ProjectionHead head{{Var::parameter({6, 10}, testing::random_values(rng, 60)), Var::parameter({6}, std::vector<double>(6, 0.0))}};
    const auto x = testing::random_values(rng, 30);
    std::vector<double> x10(x);
    for (auto& v : x10) v *= 10;
    const Embeddings a = project(Var::constant({3, 10}, x), head);
    const Embeddings b = project(Var::constant({3, 10}, x10), head);
    REQUIRE(a.rows.shape() == ag::Shape{3, 6});
    for (int r = 0; r < 3; ++r) {
        double n = 0;
        for (int j = 0; j < 6; ++j) n += a.rows.value()[static_cast<std::size_t>(r * 6 + j)] * a.rows.value()[static_cast<std::size_t>(r * 6 + j)];
        CHECK(std::abs(std::sqrt(n) - 1.0) <= 1e-6);
    }
    for (std::size_t i = 0; i < 18; ++i) CHECK(a.rows.value()[i] == doctest::Approx(b.rows.value()[i]).epsilon(1e-12));

    const Embeddings z = project(Var::constant({1, 10}, std::vector<double>(10, 0.0)), head);
    CHECK(z.zero_rows == std::vector<bool>{true});
    CHECK(z.rows.value()[0] == 1.0);
}

TEST_CASE("image classification through the siamese sub-network") {
    auto cfg = testing::tiny_detector(10);
    DetectorParams p = make_detector(cfg, 25);

    std::vector<WeakView> views;
    for (int i = 0; i < 16; ++i) views.push_back(view_of(region_image(i, i % 10, static_cast<std::uint64_t>(i))));
    const ImclsOutput out = imcls_forward(p, views);
    CHECK(out.logits.shape() == ag::Shape{16, 11});
    const Var direct = incls_forward(p, out.roi).logits;
    CHECK(std::equal(direct.value().begin(), direct.value().end(), out.logits.value().begin()));

    // Zero classifier weights give uniform logits over K + 1 = 11 classes.
    std::fill(p.cls->logits.weight.mutable_value().begin(), p.cls->logits.weight.mutable_value().end(), 0.0);
    std::fill(p.cls->logits.bias.mutable_value().begin(), p.cls->logits.bias.mutable_value().end(), 0.0);
    CHECK(imcls_forward(p, views).loss.item() == doctest::Approx(std::log(11.0)).epsilon(1e-12));

    WeakImage bare = region_image(99, 1, 99);
    bare.predefined_region.reset();
    CHECK_THROWS_AS(view_of(bare), Error);
}

TEST_CASE("contrastive pairs") {
    const auto cfg = testing::tiny_detector(4);
    const DetectorParams p = make_detector(cfg, 26);
    const MomentumBranch branch = make_momentum_branch(p, 0.999);
    Rng rng = make_rng(27, 0);
    const int in = p.cls->trunk->fc1.weight.dim(1);
    // Same pooled scene features for both views and an untouched momentum copy.
    const Var roi = Var::constant({2, in}, testing::random_values(rng, 2 * static_cast<std::size_t>(in), 0, 1));
    const Embeddings fi = project(cls_forward(*p.imcls, roi).features, *p.imcls_proj);
    const auto fd = momentum_embed(branch, roi);
    for (int r = 0; r < 2; ++r) {
        double d = 0;
        for (int j = 0; j < cfg.embed_dim; ++j) d += fi.rows.value()[static_cast<std::size_t>(r * cfg.embed_dim + j)] * fd[static_cast<std::size_t>(r)][static_cast<std::size_t>(j)];
        CHECK(d == doctest::Approx(1.0).epsilon(1e-12));
    }

    FeatureQueue queue(16, cfg.embed_dim);
    std::vector<std::vector<double>> negs;
    for (int i = 0; i < 5; ++i) negs.push_back(unit(rng, cfg.embed_dim));
    queue.enqueue(negs);
    const ContrastiveResult res = contrastive_step(fi, fd, fd, {3, 8}, queue, 0.2);
    CHECK(res.pairs.size() == 2);  // t = 2
    CHECK_FALSE(res.no_pairs);
    double expect = 0;
    for (const auto& pr : res.pairs) expect += oracle_loss(pr.f_i, pr.f_d, negs, 0.2) / 2;
    CHECK(res.loss.item() == doctest::Approx(expect).epsilon(1e-12));
    CHECK(queue.size() == 9);

    auto broken = fd;
    broken[1][0] = std::numeric_limits<double>::quiet_NaN();
    try {
        contrastive_step(fi, broken, fd, {3, 8}, queue, 0.2);
        FAIL("expected a numerical error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::kNumerical);
    }
    CHECK(queue.size() == 9);

    const ContrastiveResult none = contrastive_step({}, {}, {}, {}, queue, 0.2);
    CHECK(none.no_pairs);
    CHECK(none.loss.item() == 0.0);
    CHECK(queue.size() == 9);
}
