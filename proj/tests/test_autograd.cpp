#include "doctest.h"
#include "support.hpp"

using namespace clis;
using ag::Var;
using testing::gradient_error;
using testing::random_values;

TEST_CASE("conv2d matches a direct convolution and its gradients") {
    Rng rng = make_rng(1, 0);
    const Var x = Var::parameter({2, 5, 6}, random_values(rng, 60));
    const Var w = Var::parameter({3, 2, 3, 3}, random_values(rng, 54));
    const Var b = Var::parameter({3}, random_values(rng, 3));
    const Var y = ag::conv2d(x, w, b, 2, 1);
    REQUIRE(y.shape() == ag::Shape{3, 3, 3});
    // Direct evaluation of one output.
    const int o = 1, oy = 1, ox = 2;
    double ref = b.value()[o];
    for (int c = 0; c < 2; ++c)
        for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
                const int iy = oy * 2 - 1 + ky, ix = ox * 2 - 1 + kx;
                if (iy < 0 || iy >= 5 || ix < 0 || ix >= 6) continue;
                ref += w.value()[((o * 2 + c) * 3 + ky) * 3 + kx] * x.value()[(c * 5 + iy) * 6 + ix];
            }
    CHECK(y.value()[(o * 3 + oy) * 3 + ox] == doctest::Approx(ref).epsilon(1e-12));

    auto loss = [&] { return ag::sum(ag::relu(ag::conv2d(x, w, b, 2, 1))); };
    CHECK(gradient_error(x, loss) < 1e-6);
    CHECK(gradient_error(w, loss) < 1e-6);
    CHECK(gradient_error(b, loss) < 1e-6);
}

TEST_CASE("linear, gather and concat gradients") {
    Rng rng = make_rng(2, 0);
    const Var x = Var::parameter({4, 5}, random_values(rng, 20));
    const Var w = Var::parameter({3, 5}, random_values(rng, 15));
    const Var b = Var::parameter({3}, random_values(rng, 3));
    auto loss = [&] {
        const Var h = ag::linear(x, w, b);
        const Var g = ag::gather(h, {0, 4, 4, 11}, {2, 2});
        return ag::sum(ag::concat_rows({g, ag::scale(g, 3.0)}));
    };
    CHECK(gradient_error(x, loss) < 1e-6);
    CHECK(gradient_error(w, loss) < 1e-6);
    CHECK(gradient_error(b, loss) < 1e-6);
}

TEST_CASE("loss functions: values and gradients") {
    SUBCASE("uniform softmax gives log of the class count") {
        const Var z = Var::constant({2, 5}, std::vector<double>(10, 0.3));
        CHECK(ag::softmax_cross_entropy(z, {0, 4}).item() == doctest::Approx(std::log(5.0)).epsilon(1e-12));
    }
    SUBCASE("confident correct logit drives the loss to zero") {
        std::vector<double> v(5, 0.0);
        v[2] = 20.0;
        CHECK(ag::softmax_cross_entropy(Var::constant({1, 5}, v), {2}).item() < 1e-8);
    }
    SUBCASE("empty batch") {
        CHECK(ag::softmax_cross_entropy(Var::constant({0, 5}, {}), {}).item() == 0.0);
    }
    SUBCASE("binary cross entropy at zero logit") {
        const Var z = Var::constant({2, 1}, {0.0, 0.0});
        CHECK(ag::bce_with_logits(z, {1.0, 0.0}).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }
    SUBCASE("smooth L1 regions") {
        const Var p = Var::constant({3}, {0.05, 1.0, -2.0});
        // beta = 0.1: 0.5 * 0.05^2 / 0.1, then |d| - 0.05 twice.
        const double expect = (0.5 * 0.0025 / 0.1 + 0.95 + 1.95) / 2.0;
        CHECK(ag::smooth_l1(p, {0.0, 0.0, 0.0}, 0.1, 2.0).item() == doctest::Approx(expect).epsilon(1e-12));
    }
    SUBCASE("gradients") {
        Rng rng = make_rng(3, 0);
        const Var z = Var::parameter({4, 6}, random_values(rng, 24, -2, 2));
        CHECK(gradient_error(z, [&] { return ag::softmax_cross_entropy(z, {0, 5, 2, 2}); }) < 1e-6);
        CHECK(gradient_error(z, [&] { return ag::bce_with_logits(z, std::vector<double>(24, 0.3)); }) < 1e-6);
        const auto target = random_values(rng, 24, -0.2, 0.2);
        CHECK(gradient_error(z, [&] { return ag::smooth_l1(z, target, 1.0 / 9.0, 3.0); }) < 1e-4);
        CHECK(gradient_error(z, [&] { return ag::sum(ag::scale(ag::l2_normalize_rows(z), 2.0)); }) < 1e-6);
    }
}

TEST_CASE("l2 normalization flags zero rows") {
    std::vector<bool> flags;
    const Var y = ag::l2_normalize_rows(Var::constant({2, 3}, {0, 0, 0, 3, 4, 0}), &flags);
    CHECK(flags == std::vector<bool>{true, false});
    CHECK(y.value()[0] == 1.0);
    CHECK(y.value()[1] == 0.0);
    CHECK(y.value()[3] == doctest::Approx(0.6));
    CHECK(y.value()[4] == doctest::Approx(0.8));
}

TEST_CASE("roi_align on constant and ramp features") {
    SUBCASE("constant map pools to the constant") {
        const Var f = Var::constant({2, 8, 8}, std::vector<double>(128, 0.7));
        const Var out = ag::roi_align({f}, {4}, {Box::from_corners(3, 5, 20, 29)}, {0}, 3);
        REQUIRE(out.shape() == ag::Shape{1, 18});
        for (double v : out.value()) CHECK(v == doctest::Approx(0.7).epsilon(1e-15));
    }
    SUBCASE("linear ramp equals the closed-form sample") {
        // f(y, x) = 2x + 3y, which bilinear interpolation reproduces exactly away from the clamp.
        std::vector<double> v(100);
        for (int y = 0; y < 10; ++y)
            for (int x = 0; x < 10; ++x) v[static_cast<std::size_t>(y * 10 + x)] = 2.0 * x + 3.0 * y;
        const Var f = Var::constant({1, 10, 10}, v);
        const Box b = Box::from_corners(4, 4, 12, 16);  // every sample lands inside the map
        const int P = 2, stride = 2;
        const Var out = ag::roi_align({f}, {stride}, {b}, {0}, P);
        for (int i = 0; i < P; ++i)
            for (int j = 0; j < P; ++j) {
                const double fx = (b.x0() + (j + 0.5) * b.w / P) / stride - 0.5;
                const double fy = (b.y0() + (i + 0.5) * b.h / P) / stride - 0.5;
                CHECK(out.value()[static_cast<std::size_t>(i * P + j)] == doctest::Approx(2 * fx + 3 * fy).epsilon(1e-12));
            }
    }
    SUBCASE("degenerate boxes are rejected") {
        const Var f = Var::constant({1, 4, 4}, std::vector<double>(16, 1.0));
        CHECK_THROWS_AS(ag::roi_align({f}, {4}, {Box::from_corners(0, 0, 1, 5)}, {0}, 2), Error);
    }
    SUBCASE("gradient reaches the features") {
        Rng rng = make_rng(4, 0);
        const Var f0 = Var::parameter({2, 6, 6}, random_values(rng, 72));
        const Var f1 = Var::parameter({2, 3, 3}, random_values(rng, 18));
        const std::vector<Box> boxes{Box::from_corners(2.3, 4.1, 17.9, 20.5), Box::from_corners(1, 1, 23, 22)};
        auto loss = [&] { return ag::sum(ag::relu(ag::roi_align({f0, f1}, {4, 8}, boxes, {0, 1}, 3))); };
        CHECK(gradient_error(f0, loss) < 1e-6);
        CHECK(gradient_error(f1, loss) < 1e-6);
    }
}

TEST_CASE("constants and detached values do not record a graph") {
    const Var p = Var::parameter({2}, {1.0, 2.0});
    const Var c = Var::constant({2}, {3.0, 4.0});
    CHECK_FALSE(ag::add(c, c).requires_grad());
    CHECK(ag::add(p, c).requires_grad());
    CHECK_FALSE(ag::add(p.detach(), c).requires_grad());
}
