#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <vector>

#include "clis/detector.hpp"

namespace clis {

struct Detection {
    int image_id = 0;
    int category = 0;
    Box box;
    double score = 0;
};

struct InferenceConfig {
    /// Scores must be strictly greater than this to survive; nullopt disables the floor.
    std::optional<double> score_floor = 1e-4;
    /// Per-image cap; nullopt keeps everything.
    std::optional<int> max_detections = 300;
    double nms_iou = 0.5;
};

/// Per-box head outputs before scoring.
struct HeadPredictions {
    std::vector<Box> boxes;                       // decoded, clipped
    std::vector<double> objectness;               // logits
    std::vector<std::vector<double>> cls_logits;  // K + 1 per box, background last
};

/// score(box, c) = sigmoid(objectness) * softmax(cls_logits)[c] for every foreground c,
/// then per-class greedy NMS, the floor, and the cap (highest scores first).
std::vector<Detection> compose_detections(const HeadPredictions& preds, int image_id, const InferenceConfig& config);

HeadPredictions predict_heads(const DetectorParams& params, const Image& image);
std::vector<Detection> infer(const DetectorParams& params, const Image& image, int image_id,
                             const InferenceConfig& config = {});

inline constexpr std::array<double, 10> kIouThresholds{0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95};

struct CategoryAp {
    int category = 0;
    FrequencyGroup group = FrequencyGroup::kRare;
    int num_gt = 0;
    /// Mean over the IoU thresholds, 0..100; NaN when the category has no ground truth.
    double ap = 0;
    std::array<double, 10> per_threshold{};
};

struct APReport {
    double AP = 0, AP_r = 0, AP_c = 0, AP_f = 0;
    std::vector<CategoryAp> categories;
};

/// 101-point interpolated AP of one category at one threshold, from detections already
/// matched: `tp[i]` says whether the i-th detection in descending score order was a hit.
double interpolated_ap(const std::vector<bool>& tp, int num_gt);

/// Greedy matching in descending score order (ties keep input order); each detection takes the
/// unmatched GT of its image with the highest IoU >= threshold, lowest GT index on ties.
/// Returns the hit flag per detection in that order.
std::vector<bool> greedy_match(const std::vector<Detection>& dets, const std::vector<DetectionImage>& gt, int category,
                               double threshold);

/// Categories without ground truth are left out of every mean.
APReport evaluate_ap(const std::vector<Detection>& detections, const std::vector<DetectionImage>& gt,
                     const FrequencyGroups& groups);

void write_detections(const std::filesystem::path& path, const std::vector<Detection>& dets);
std::vector<Detection> read_detections(const std::filesystem::path& path);
void write_ap_report(const std::filesystem::path& json_path, const std::filesystem::path& csv_path,
                     const APReport& report);
APReport read_ap_report(const std::filesystem::path& json_path);

}  // namespace clis
