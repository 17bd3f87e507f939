#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace clis {

enum class ErrorCode : int {
    kOk = 0,
    kInvalidArgument = 1,
    kIo = 2,
    kNumerical = 3,
    kUnplaceable = 4,
    kStage = 5,
    kInternal = 6,
};

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

inline Error invalid_argument(const std::string& what) { return Error(ErrorCode::kInvalidArgument, what); }
inline Error io_error(const std::string& what) { return Error(ErrorCode::kIo, what); }

/// Axis-aligned box in pixel coordinates, stored as center and size.
struct Box {
    double cx = 0, cy = 0, w = 0, h = 0;

    double x0() const { return cx - 0.5 * w; }
    double y0() const { return cy - 0.5 * h; }
    double x1() const { return cx + 0.5 * w; }
    double y1() const { return cy + 0.5 * h; }
    double area() const { return w * h; }

    static Box from_corners(double x0, double y0, double x1, double y1) {
        return {0.5 * (x0 + x1), 0.5 * (y0 + y1), x1 - x0, y1 - y0};
    }

    bool inside(double width, double height, double eps = 1e-9) const {
        return x0() >= -eps && y0() >= -eps && x1() <= width + eps && y1() <= height + eps;
    }

    bool operator==(const Box&) const = default;
};

inline double intersection_area(const Box& a, const Box& b) {
    const double iw = std::min(a.x1(), b.x1()) - std::max(a.x0(), b.x0());
    const double ih = std::min(a.y1(), b.y1()) - std::max(a.y0(), b.y0());
    if (iw <= 0 || ih <= 0) return 0.0;
    return iw * ih;
}

inline double iou(const Box& a, const Box& b) {
    const double inter = intersection_area(a, b);
    const double uni = a.area() + b.area() - inter;
    return uni > 0 ? inter / uni : 0.0;
}

inline Box clip_box(const Box& b, double width, double height) {
    const double x0 = std::clamp(b.x0(), 0.0, width);
    const double y0 = std::clamp(b.y0(), 0.0, height);
    const double x1 = std::clamp(b.x1(), 0.0, width);
    const double y1 = std::clamp(b.y1(), 0.0, height);
    return Box::from_corners(x0, y0, x1, y1);
}

using Rng = std::mt19937_64;

/// Independent stream for a (seed, purpose) pair so that consumers never share draws.
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    return Rng(seq);
}

inline double uniform(Rng& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline int uniform_int(Rng& rng, int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(rng);
}

inline bool bernoulli(Rng& rng, double p) { return std::bernoulli_distribution(p)(rng); }

}  // namespace clis
