#pragma once

#include <string>

#include "json.hpp"
#include "clis/trainer.hpp"

namespace clis {

struct ExperimentConfig {
    std::string name = "desk";
    BenchmarkConfig data;
    DetectorConfig model;
    TrainConfig train;
    /// Schedule for the all-off baseline that feeds region generation.
    int baseline_iterations = 3000;
    AblationSwitches switches;
    std::uint64_t seed = 7;
    std::string output_dir = "runs";

    bool operator==(const ExperimentConfig&) const = default;
};

ExperimentConfig desk_preset();
ExperimentConfig paper_scale_preset();
/// "desk" or "paper-scale".
ExperimentConfig preset(const std::string& name);

/// Throws invalid_argument on sizes that cannot run.
void validate(const ExperimentConfig& config);

nlohmann::json to_json(const ExperimentConfig& config);
/// Missing keys keep their defaults; unknown keys are rejected.
ExperimentConfig experiment_from_json(const nlohmann::json& j);

ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const ExperimentConfig& config);

/// Applies `key=value` with a dotted key such as `train.alpha=0.2`. The value is parsed as
/// JSON when possible and must keep the type of the field it replaces.
void apply_override(ExperimentConfig& config, const std::string& assignment);

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(BenchmarkConfig, num_categories, exponent, max_images_per_category,
                                                min_images_per_category, num_detection_images, weak_multiplier,
                                                weak_category_fraction, num_val_images, image_size, max_instances,
                                                group_scale, seed)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DetectorConfig, num_classes, backbone_channels, pool_size, hidden,
                                                embed_dim, anchor_scales, rpn_pre_nms, rpn_post_nms, rpn_nms_iou,
                                                pos_iou, neg_iou, rpn_batch, rpn_pos_fraction, roi_batch,
                                                roi_pos_fraction, smooth_l1_beta, min_box_size, task_specialized,
                                                siamese)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AugmentConfig, scale_min, scale_max, flip_prob, cutout_fraction,
                                                cutout_max_region_cover, cutout_attempts, cutout_fill)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(PasteConfig, max_iou, attempts, min_scale, max_scale,
                                                max_side_fraction)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, iterations, batch_detection, weak_per_detection,
                                                picked_per_detection, alpha, beta, tau, queue_capacity, momentum_m,
                                                base_lr, lr_reference_batch, sgd_momentum, weight_decay,
                                                lr_decay_points, lr_decay_factor, warmup_iterations, rfs_threshold,
                                                mosaic_size, data_fraction, augment, paste)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AblationSwitches, use_TSS, use_SS, use_CLR, use_ILS)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ExperimentConfig, name, data, model, train, baseline_iterations,
                                                switches, seed, output_dir)

}  // namespace clis
