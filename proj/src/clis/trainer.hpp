#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <unordered_map>

#include "clis/augment.hpp"
#include "clis/collab.hpp"
#include "clis/detector.hpp"

namespace clis {

struct AblationSwitches {
    bool use_TSS = true;
    bool use_SS = true;
    bool use_CLR = true;
    bool use_ILS = true;

    /// Throws unless CLR => ILS and SS => ILS.
    void validate() const;
    bool operator==(const AblationSwitches&) const = default;
};

struct TrainConfig {
    int iterations = 3000;
    int batch_detection = 2;  // B_d
    int weak_per_detection = 16;  // s
    int picked_per_detection = 2;  // t
    double alpha = 0.1;
    double beta = 0.05;
    double tau = 0.2;
    int queue_capacity = 4096;
    double momentum_m = 0.999;
    double base_lr = 0.02;
    /// lr = base_lr * batch_detection / lr_reference_batch.
    int lr_reference_batch = 16;
    double sgd_momentum = 0.9;
    double weight_decay = 1e-4;
    std::vector<double> lr_decay_points{0.7, 0.9};
    double lr_decay_factor = 0.1;
    int warmup_iterations = 0;
    double rfs_threshold = 0.001;
    int mosaic_size = 128;
    /// Fraction of the weak set available to training.
    double data_fraction = 1.0;
    AugmentConfig augment;
    PasteConfig paste;

    double learning_rate(int step) const;
    bool operator==(const TrainConfig&) const = default;
};

/// Walks repeat-factor epochs of the detection set, reshuffling with a fresh seed per epoch.
class DetectionSampler {
public:
    DetectionSampler(const std::vector<DetectionImage>& images, int num_categories, double threshold,
                     std::uint64_t seed);
    int next();
    std::size_t epoch_length() const { return order_.size(); }

private:
    void refill();
    const std::vector<DetectionImage>* images_;
    int num_categories_;
    double threshold_;
    std::uint64_t seed_;
    std::uint64_t epoch_ = 0;
    std::vector<int> order_;
    std::size_t pos_ = 0;
};

struct MixedBatch {
    std::vector<int> detection;  // indices into D_d
    std::vector<int> weak;       // indices into the weak pool, s per detection image
    /// Positions in `weak` picked for contrastive pairs, t per detection image.
    std::vector<std::vector<int>> picked;
};

/// |weak| = s * B_d; detection images from the sampler, weak images uniform over the pool.
MixedBatch compose_batch(DetectionSampler& sampler, const std::vector<int>& weak_pool, int batch_detection, int s,
                         int t, Rng& weak_rng);

struct LossBreakdown {
    double L_rpn = 0, L_incls = 0, L_loc = 0, L_obj = 0, L_imcls = 0, L_con = 0;
    double total = 0;
};

/// total = L_rpn + L_incls + L_loc + L_obj + alpha * L_imcls + beta * L_con.
LossBreakdown total_loss(const LossBreakdown& parts, double alpha, double beta);

struct LossVars {
    ag::Var L_rpn, L_incls, L_loc, L_obj, L_imcls, L_con;
};
/// Same combination on graph values.
ag::Var total_loss(const LossVars& parts, double alpha, double beta);

/// SGD with momentum and L2 weight decay:
///   g = grad + wd * theta;  v = mu * v + g;  theta -= lr * v.
/// Parameters that received no gradient this step are left untouched.
class SgdMomentum {
public:
    SgdMomentum(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}
    void step(const std::vector<ag::Var>& params, double lr);

private:
    double momentum_, weight_decay_;
    std::unordered_map<const ag::Node*, std::vector<double>> velocity_;
};

struct StepRecord {
    int step = 0;
    LossBreakdown losses;
    double lr = 0;
    int pairs = 0;
};

struct TrainResult {
    DetectorParams params;
    std::vector<StepRecord> records;
    double mean_step_seconds = 0;
};

struct TrainOptions {
    /// JSON-lines metrics sink, one record per step; flushed as it goes.
    std::ostream* metrics = nullptr;
    /// Stops after this many steps (the schedule still follows `iterations`).
    std::optional<int> max_steps;
    std::function<void(const StepRecord&)> on_step;
};

/// Weak images need a predefined region when image-level supervision is on.
/// Throws Error(kNumerical) on a non-finite total, after logging the offending step.
TrainResult train(const TrainConfig& config, DetectorConfig detector, const Benchmark& data,
                  const AblationSwitches& switches, std::uint64_t seed, const TrainOptions& options = {});

/// The six ablation rows in table order: CLIS, w/o TSS, w/o SS, w/o CLR, w/o ILS, w/o TSS + ILS.
std::vector<std::pair<std::string, AblationSwitches>> ablation_rows();

}  // namespace clis
