#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "clis/autograd.hpp"
#include "clis/boxes.hpp"
#include "clis/datasets.hpp"

namespace clis {

struct DetectorConfig {
    /// Foreground categories K; classifiers emit K + 1 logits with background last.
    int num_classes = 20;
    /// One stride-2 3x3 conv per block; the last two blocks form the pyramid.
    std::vector<int> backbone_channels{16, 32, 64, 64};
    int pool_size = 7;
    int hidden = 256;
    int embed_dim = 128;
    /// Anchor sides as multiples of the level stride, aspect ratio 1.
    std::vector<double> anchor_scales{2.0, 3.0, 4.0};
    int rpn_pre_nms = 300;
    int rpn_post_nms = 64;
    double rpn_nms_iou = 0.7;
    double pos_iou = 0.5;
    double neg_iou = 0.4;
    int rpn_batch = 64;
    double rpn_pos_fraction = 0.5;
    int roi_batch = 32;
    double roi_pos_fraction = 0.25;
    double smooth_l1_beta = 1.0 / 9.0;
    double min_box_size = 2.0;
    /// Separate fc trunks for localization and instance classification.
    bool task_specialized = true;
    /// Image classification reuses the instance-classification sub-network.
    bool siamese = true;

    int num_levels() const { return 2; }
    std::vector<int> strides() const;
    int anchors_per_location() const { return static_cast<int>(anchor_scales.size()); }
    bool operator==(const DetectorConfig&) const = default;
};

struct Linear {
    ag::Var weight;  // [out, in]
    ag::Var bias;    // [out]
    ag::Var operator()(const ag::Var& x) const { return ag::linear(x, weight, bias); }
};

struct Conv {
    ag::Var weight;  // [out, in, k, k]
    ag::Var bias;
    int stride = 1;
    int pad = 0;
    ag::Var operator()(const ag::Var& x) const { return ag::conv2d(x, weight, bias, stride, pad); }
};

/// The "2fc" part of a sub-network.
struct Trunk {
    Linear fc1, fc2;
    ag::Var operator()(const ag::Var& roi) const { return ag::relu(fc2(ag::relu(fc1(roi)))); }
};

struct LocSubnet {
    std::shared_ptr<Trunk> trunk;
    Linear deltas;      // 4 class-agnostic box deltas
    Linear objectness;  // 1 foreground logit
};

struct ClsSubnet {
    std::shared_ptr<Trunk> trunk;
    Linear logits;  // K + 1
};

/// Projection to the contrastive embedding space (normalized by the caller).
struct ProjectionHead {
    Linear fc;
};

struct DetectorParams {
    DetectorConfig config;
    std::vector<Conv> backbone;
    Conv rpn_conv, rpn_obj, rpn_deltas;
    LocSubnet loc;
    /// Instance classification. With siamese on, imcls points to the same object.
    std::shared_ptr<ClsSubnet> cls;
    std::shared_ptr<ClsSubnet> imcls;
    std::shared_ptr<ProjectionHead> cls_proj;
    std::shared_ptr<ProjectionHead> imcls_proj;

    /// Unique parameters with stable names; shared objects appear once.
    std::vector<std::pair<std::string, ag::Var>> named_parameters() const;
    std::vector<ag::Var> loc_parameters() const;
    std::vector<ag::Var> cls_parameters() const;
    void zero_grad() const;
};

DetectorParams make_detector(const DetectorConfig& config, std::uint64_t seed);

/// Deep copy of a parameter as a fresh leaf.
ag::Var clone_parameter(const ag::Var& v);
Linear clone(const Linear& l);
Trunk clone(const Trunk& t);

struct FeaturePyramid {
    std::vector<ag::Var> levels;  // [C, H_l, W_l]
    std::vector<int> strides;
    int image_h = 0, image_w = 0;
};

FeaturePyramid extract_features(const DetectorParams& params, const Image& image);

struct Proposal {
    Box box;
    double score = 0;
};

/// Anchors in (level, y, x, scale) order.
std::vector<Box> make_anchors(const DetectorConfig& config, const FeaturePyramid& fp);

struct RpnOutput {
    std::vector<Box> anchors;
    ag::Var logits;  // [A, 1]
    ag::Var deltas;  // [A, 4]
};

RpnOutput rpn_forward(const DetectorParams& params, const FeaturePyramid& fp);

struct AnchorTargets {
    std::vector<int> sampled;         // anchor indices
    std::vector<double> labels;       // 1 / 0 per sampled anchor
    std::vector<int> positives;       // subset of sampled
    std::vector<Deltas> reg_targets;  // per positive
};

/// IoU >= pos_iou is foreground, < neg_iou background, the rest ignored.
AnchorTargets assign_anchor_targets(const std::vector<Box>& anchors, const std::vector<InstanceAnnotation>& gt,
                                    const DetectorConfig& config, Rng& rng);

struct RpnLoss {
    ag::Var cls;
    ag::Var reg;
    ag::Var total;
};

RpnLoss rpn_loss(const ag::Var& logits, const ag::Var& deltas, const AnchorTargets& targets, double beta);

/// Decodes, clips, filters, and NMS-reduces anchors into at most `top_n` proposals.
std::vector<Proposal> select_proposals(const RpnOutput& out, const FeaturePyramid& fp, const DetectorConfig& config,
                                       int top_n);

struct ProposalResult {
    std::vector<Proposal> proposals;
    std::optional<RpnLoss> loss;  // training mode only
};

/// Training mode when `gt` is given (requires rng for anchor sampling); eval mode otherwise.
ProposalResult propose_regions(const DetectorParams& params, const FeaturePyramid& fp,
                               const std::vector<InstanceAnnotation>* gt, Rng* rng);

/// Pyramid level for a box: floor(log2(sqrt(wh) / (2 * stride_0))) clamped to the level range.
int level_for_box(const Box& b, const std::vector<int>& strides);

ag::Var roi_features(const DetectorParams& params, const FeaturePyramid& fp, const std::vector<Box>& boxes);

struct LocOutput {
    ag::Var deltas;      // [N, 4]
    ag::Var objectness;  // [N, 1]
};

struct ClsOutput {
    ag::Var logits;    // [N, K + 1]
    ag::Var features;  // trunk output [N, hidden]
};

LocOutput loc_forward(const LocSubnet& loc, const ag::Var& roi);
ClsOutput cls_forward(const ClsSubnet& cls, const ag::Var& roi);
inline ClsOutput incls_forward(const DetectorParams& p, const ag::Var& roi) { return cls_forward(*p.cls, roi); }

struct RoiSample {
    std::vector<Box> boxes;
    std::vector<int> labels;          // category or K for background
    std::vector<int> positives;       // row indices into boxes
    std::vector<Deltas> reg_targets;  // per positive
};

RoiSample sample_rois(const std::vector<Proposal>& proposals, const std::vector<InstanceAnnotation>& gt,
                      const DetectorConfig& config, int image_w, int image_h, Rng& rng);

struct HeadLosses {
    ag::Var incls;
    ag::Var loc;
    ag::Var obj;
};

HeadLosses head_losses(const LocOutput& loc, const ClsOutput& cls, const RoiSample& sample, const DetectorConfig& config);

struct DetectionForward {
    FeaturePyramid features;
    RpnLoss rpn;
    HeadLosses heads;
};

/// Full training forward for one annotated image.
DetectionForward detection_forward(const DetectorParams& params, const Image& image,
                                   const std::vector<InstanceAnnotation>& gt, Rng& rng);

/// Flat little-endian float64 blob plus a JSON manifest of {name, shape, dtype, offset}.
void save_checkpoint(const std::filesystem::path& dir, const DetectorParams& params);
DetectorParams load_checkpoint(const std::filesystem::path& dir);
/// SHA-less content hash (FNV-1a 64) of the parameter blob, for provenance.
std::string checkpoint_hash(const std::filesystem::path& dir);

}  // namespace clis
