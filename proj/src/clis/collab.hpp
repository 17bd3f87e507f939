#pragma once

#include <deque>
#include <vector>

#include "clis/augment.hpp"
#include "clis/detector.hpp"

namespace clis {

struct Embeddings {
    ag::Var rows;                 // [N, E], unit rows
    std::vector<bool> zero_rows;  // rows that hit the zero-vector fallback
};

/// fc followed by row-wise L2 normalization.
Embeddings project(const ag::Var& features, const ProjectionHead& head);

/// Bounded FIFO of unit-norm embeddings.
class FeatureQueue {
public:
    FeatureQueue(std::size_t capacity, int dim);

    /// Appends in order and evicts the oldest entries beyond capacity.
    void enqueue(const std::vector<std::vector<double>>& rows);
    void clear() { entries_.clear(); }

    std::size_t size() const { return entries_.size(); }
    std::size_t capacity() const { return capacity_; }
    int dim() const { return dim_; }
    const std::deque<std::vector<double>>& entries() const { return entries_; }

private:
    std::size_t capacity_;
    int dim_;
    std::deque<std::vector<double>> entries_;
};

/// -log(exp(fi.fd/tau) / (exp(fi.fd/tau) + sum_q exp(fi.q/tau))) for one query row.
/// f_i is [E] or [1, E]; f_d and the queue are constants, so only f_i gets a gradient.
ag::Var contrastive_loss(const ag::Var& f_i, const std::vector<double>& f_d, const FeatureQueue& queue, double tau);

/// Slowly updated copy of the classification trunk and its projection head.
/// Parameters are constants and never receive gradients.
struct MomentumBranch {
    Trunk trunk;
    ProjectionHead proj;
    double m = 0.999;

    std::vector<ag::Var> parameters() const;
};

/// Momentum copy of the parameters feeding the instance-classification embedding.
MomentumBranch make_momentum_branch(const DetectorParams& online, double m);
std::vector<ag::Var> momentum_sources(const DetectorParams& online);

/// theta_k <- m * theta_k + (1 - m) * theta_q, elementwise.
void momentum_update(const std::vector<ag::Var>& online, const std::vector<ag::Var>& momentum, double m);
void momentum_update(const DetectorParams& online, MomentumBranch& branch);

/// Unit embeddings from the momentum branch; input features are detached first.
std::vector<std::vector<double>> momentum_embed(const MomentumBranch& branch, const ag::Var& roi);

/// A canvas carrying one or more labeled regions for image-level supervision
/// (a mosaic of weak images, or a single augmented weak image).
struct WeakView {
    Image pixels;
    std::vector<std::optional<Box>> regions;
    std::vector<int> labels;
    std::vector<int> source_ids;
};

WeakView view_of(const MosaicImage& m);
WeakView view_of(const WeakImage& w);

struct ImclsOutput {
    ag::Var logits;    // [N, K + 1]
    ag::Var features;  // trunk output [N, hidden]
    ag::Var loss;      // mean softmax CE against the image labels
    /// (view, region) of each row.
    std::vector<std::pair<int, int>> rows;
    /// Backbone pyramid per view, kept for the momentum keys of the weak side.
    std::vector<FeaturePyramid> pyramids;
    ag::Var roi;  // pooled features [N, C*P*P]
};

/// Pools each region from the shared backbone and classifies it with the image-classification
/// sub-network. Regions that collapsed during mosaic cropping are skipped; a region that was
/// never assigned is an error.
ImclsOutput imcls_forward(const DetectorParams& params, const std::vector<WeakView>& views);

struct ContrastivePair {
    int instance_id = 0;
    std::vector<double> f_i;
    std::vector<double> f_d;
};

struct ContrastiveResult {
    ag::Var loss;  // mean over pairs, 0 when there are none
    std::vector<ContrastivePair> pairs;
    bool no_pairs = false;
};

/// Mean contrastive loss over pairs (row p of f_i pairs with f_d[p]); afterwards enqueues
/// the momentum keys of both views (f_d and key_i). A key that is not a finite unit vector
/// throws Error(kNumerical) and leaves the queue as it was.
ContrastiveResult contrastive_step(const Embeddings& f_i, const std::vector<std::vector<double>>& f_d,
                                   const std::vector<std::vector<double>>& key_i, const std::vector<int>& instance_ids,
                                   FeatureQueue& queue, double tau);

}  // namespace clis
