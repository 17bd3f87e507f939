#pragma once

#include <array>
#include <numeric>
#include <vector>

#include "clis/common.hpp"

namespace clis {

using Deltas = std::array<double, 4>;

/// Largest log-size delta accepted when decoding; keeps exp() finite.
inline constexpr double kMaxLogDelta = 4.135166556742356;  // log(1000 / 16)

/// (dx, dy, dw, dh) with dx = (gx - ax) / aw, dw = log(gw / aw).
inline Deltas encode_box(const Box& target, const Box& anchor) {
    return {(target.cx - anchor.cx) / anchor.w, (target.cy - anchor.cy) / anchor.h, std::log(target.w / anchor.w),
            std::log(target.h / anchor.h)};
}

inline Box decode_box(const Deltas& d, const Box& anchor) {
    const double dw = std::min(d[2], kMaxLogDelta);
    const double dh = std::min(d[3], kMaxLogDelta);
    return {anchor.cx + d[0] * anchor.w, anchor.cy + d[1] * anchor.h, anchor.w * std::exp(dw), anchor.h * std::exp(dh)};
}

/// Greedy NMS; returns kept indices in descending score order (stable on ties).
inline std::vector<int> nms(const std::vector<Box>& boxes, const std::vector<double>& scores, double iou_threshold) {
    std::vector<int> order(boxes.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores[a] > scores[b]; });
    std::vector<char> removed(boxes.size(), 0);
    std::vector<int> keep;
    for (std::size_t i = 0; i < order.size(); ++i) {
        const int a = order[i];
        if (removed[a]) continue;
        keep.push_back(a);
        for (std::size_t j = i + 1; j < order.size(); ++j) {
            const int b = order[j];
            if (!removed[b] && iou(boxes[a], boxes[b]) > iou_threshold) removed[b] = 1;
        }
    }
    return keep;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace clis
