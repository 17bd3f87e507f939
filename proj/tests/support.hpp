#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "clis/autograd.hpp"
#include "clis/detector.hpp"

namespace testing {

using clis::ag::Var;

/// ||a - n|| / max(||a||, ||n||) for an analytic and a central-difference gradient.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& n) {
    double d = 0, na = 0, nn = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        d += (a[i] - n[i]) * (a[i] - n[i]);
        na += a[i] * a[i];
        nn += n[i] * n[i];
    }
    const double denom = std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
    return std::sqrt(d) / denom;
}

/// Analytic gradient of `loss()` w.r.t. `param` next to its central difference.
inline double gradient_error(Var param, const std::function<Var()>& loss, double h = 1e-6) {
    param.zero_grad();
    clis::ag::backward(loss());
    std::vector<double> analytic(param.grad().begin(), param.grad().end());
    if (analytic.empty()) analytic.assign(param.size(), 0.0);
    std::vector<double> numeric(param.size());
    auto v = param.mutable_value();
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double keep = v[i];
        v[i] = keep + h;
        const double up = loss().item();
        v[i] = keep - h;
        const double down = loss().item();
        v[i] = keep;
        numeric[i] = (up - down) / (2 * h);
    }
    return relative_error(analytic, numeric);
}

inline std::vector<double> random_values(clis::Rng& rng, std::size_t n, double lo = -1, double hi = 1) {
    std::vector<double> v(n);
    for (auto& x : v) x = clis::uniform(rng, lo, hi);
    return v;
}

inline clis::DetectorConfig tiny_detector(int num_classes = 3) {
    clis::DetectorConfig c;
    c.num_classes = num_classes;
    c.backbone_channels = {4, 8, 8, 8};
    c.pool_size = 3;
    c.hidden = 16;
    c.embed_dim = 8;
    c.rpn_batch = 16;
    c.roi_batch = 8;
    c.rpn_pre_nms = 50;
    c.rpn_post_nms = 16;
    return c;
}

inline clis::BenchmarkConfig tiny_benchmark() {
    clis::BenchmarkConfig b;
    b.num_categories = 6;
    b.max_images_per_category = 40;
    b.num_detection_images = 60;
    b.weak_multiplier = 1.0;
    b.num_val_images = 12;
    b.group_scale = 0.2;
    return b;
}

}  // namespace testing
