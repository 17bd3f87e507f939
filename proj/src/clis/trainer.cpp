#include "clis/trainer.hpp"

#include <chrono>
#include <limits>
#include <ostream>
#include <sstream>

#include "json.hpp"

namespace clis {

void AblationSwitches::validate() const {
    if (use_CLR && !use_ILS) throw invalid_argument("switches: contrastive regularization requires image-level supervision");
    if (use_SS && !use_ILS) throw invalid_argument("switches: the siamese branch requires image-level supervision");
}

double TrainConfig::learning_rate(int step) const {
    double lr = base_lr * batch_detection / lr_reference_batch;
    for (double p : lr_decay_points)
        if (step >= static_cast<int>(std::floor(p * iterations))) lr *= lr_decay_factor;
    if (step < warmup_iterations) lr *= static_cast<double>(step + 1) / warmup_iterations;
    return lr;
}

DetectionSampler::DetectionSampler(const std::vector<DetectionImage>& images, int num_categories, double threshold,
                                   std::uint64_t seed)
    : images_(&images), num_categories_(num_categories), threshold_(threshold), seed_(seed) {
    if (images.empty()) throw invalid_argument("sampler: empty detection set");
    refill();
}

void DetectionSampler::refill() {
    Rng r = make_rng(seed_, 0x5A3D + epoch_++);
    order_ = repeat_factor_sample(*images_, num_categories_, threshold_, r());
    pos_ = 0;
}

int DetectionSampler::next() {
    if (pos_ >= order_.size()) refill();
    return order_[pos_++];
}

MixedBatch compose_batch(DetectionSampler& sampler, const std::vector<int>& weak_pool, int batch_detection, int s,
                         int t, Rng& weak_rng) {
    if (batch_detection < 1) throw invalid_argument("compose_batch: batch_detection must be >= 1");
    if (s < 0 || t < 0) throw invalid_argument("compose_batch: s and t must be non-negative");
    if (t > s) throw invalid_argument("compose_batch: t must not exceed s");
    if (s > 0 && weak_pool.empty()) throw invalid_argument("compose_batch: weak pool is empty");
    MixedBatch b;
    for (int j = 0; j < batch_detection; ++j) {
        b.detection.push_back(sampler.next());
        const int base = static_cast<int>(b.weak.size());
        for (int k = 0; k < s; ++k)
            b.weak.push_back(uniform_int(weak_rng, 0, static_cast<int>(weak_pool.size()) - 1));
        std::vector<int> slots(static_cast<std::size_t>(s));
        std::iota(slots.begin(), slots.end(), base);
        for (int k = 0; k < t; ++k)
            std::swap(slots[static_cast<std::size_t>(k)], slots[static_cast<std::size_t>(uniform_int(weak_rng, k, s - 1))]);
        slots.resize(static_cast<std::size_t>(t));
        b.picked.push_back(std::move(slots));
    }
    return b;
}

LossBreakdown total_loss(const LossBreakdown& p, double alpha, double beta) {
    LossBreakdown out = p;
    out.total = p.L_rpn + p.L_incls + p.L_loc + p.L_obj + alpha * p.L_imcls + beta * p.L_con;
    return out;
}

ag::Var total_loss(const LossVars& p, double alpha, double beta) {
    return ag::add_n({p.L_rpn, p.L_incls, p.L_loc, p.L_obj, ag::scale(p.L_imcls, alpha), ag::scale(p.L_con, beta)});
}

void SgdMomentum::step(const std::vector<ag::Var>& params, double lr) {
    for (const auto& p : params) {
        const auto g = p.grad();
        if (g.empty()) continue;
        auto& v = velocity_[p.node()];
        if (v.empty()) v.assign(g.size(), 0.0);
        auto theta = ag::Var(p.ptr()).mutable_value();
        for (std::size_t i = 0; i < theta.size(); ++i) {
            v[i] = momentum_ * v[i] + (g[i] + weight_decay_ * theta[i]);
            theta[i] -= lr * v[i];
        }
    }
}

std::vector<std::pair<std::string, AblationSwitches>> ablation_rows() {
    return {
        {"CLIS", {true, true, true, true}},
        {"w/o TSS", {false, true, true, true}},
        {"w/o SS", {true, false, true, true}},
        {"w/o CLR", {true, true, false, true}},
        {"w/o ILS", {true, false, false, false}},
        {"w/o TSS + ILS", {false, false, false, false}},
    };
}

namespace {

ag::Var gather_rows(const ag::Var& x, const std::vector<int>& rows) {
    const int D = x.dim(1);
    std::vector<int> idx;
    idx.reserve(rows.size() * static_cast<std::size_t>(D));
    for (int r : rows)
        for (int d = 0; d < D; ++d) idx.push_back(r * D + d);
    return ag::gather(x, std::move(idx), {static_cast<int>(rows.size()), D});
}

ag::Var mean_of(const std::vector<ag::Var>& v) {
    if (v.empty()) return ag::Var::scalar(0.0);
    return ag::scale(ag::add_n(v), 1.0 / static_cast<double>(v.size()));
}

void write_record(std::ostream& os, const StepRecord& r) {
    nlohmann::json j = {{"step", r.step},
                        {"L_rpn", r.losses.L_rpn},
                        {"L_incls", r.losses.L_incls},
                        {"L_loc", r.losses.L_loc},
                        {"L_obj", r.losses.L_obj},
                        {"L_imcls", r.losses.L_imcls},
                        {"L_con", r.losses.L_con},
                        {"total", r.losses.total},
                        {"lr", r.lr}};
    os << j.dump() << "\n";
    os.flush();
}

}  // namespace

TrainResult train(const TrainConfig& config, DetectorConfig detector, const Benchmark& data,
                  const AblationSwitches& switches, std::uint64_t seed, const TrainOptions& options) {
    switches.validate();
    if (config.iterations < 1) throw invalid_argument("train: iterations must be >= 1");
    if (!(config.alpha >= 0 && config.beta >= 0)) throw invalid_argument("train: alpha and beta must be >= 0");
    detector.task_specialized = switches.use_TSS;
    detector.siamese = switches.use_SS;
    detector.num_classes = static_cast<int>(data.categories.size());

    TrainResult result;
    result.params = make_detector(detector, seed);
    DetectorParams& params = result.params;
    const auto all_params = [&] {
        std::vector<ag::Var> v;
        for (auto& [name, p] : params.named_parameters()) v.push_back(p);
        return v;
    }();

    std::vector<int> pool;
    if (switches.use_ILS) {
        std::vector<int> all(data.weak.size());
        std::iota(all.begin(), all.end(), 0);
        Rng r = make_rng(seed, 5);
        std::shuffle(all.begin(), all.end(), r);
        const auto keep = static_cast<std::size_t>(std::lround(config.data_fraction * static_cast<double>(all.size())));
        all.resize(std::min(all.size(), keep));
        for (int i : all)
            if (!data.weak[static_cast<std::size_t>(i)].predefined_region)
                throw Error(ErrorCode::kStage, "train: weak image " +
                                                   std::to_string(data.weak[static_cast<std::size_t>(i)].image_id) +
                                                   " has no predefined region; run regiongen first");
        pool = std::move(all);
    }
    const int s = pool.empty() ? 0 : config.weak_per_detection;
    const int t = switches.use_CLR ? std::min(config.picked_per_detection, s) : 0;

    DetectionSampler sampler(data.train, detector.num_classes, config.rfs_threshold, make_rng(seed, 1)());
    Rng weak_rng = make_rng(seed, 2);
    Rng det_rng = make_rng(seed, 3);
    Rng weak_aug_rng = make_rng(seed, 4);
    Rng paste_rng = make_rng(seed, 6);
    std::optional<MomentumBranch> branch;
    std::optional<FeatureQueue> queue;
    if (switches.use_CLR) {
        branch = make_momentum_branch(params, config.momentum_m);
        queue.emplace(static_cast<std::size_t>(config.queue_capacity), detector.embed_dim);
    }
    SgdMomentum opt(config.sgd_momentum, config.weight_decay);

    const int steps = options.max_steps ? std::min(*options.max_steps, config.iterations) : config.iterations;
    double elapsed = 0;
    for (int step = 0; step < steps; ++step) {
        const auto t0 = std::chrono::steady_clock::now();
        const MixedBatch batch = compose_batch(sampler, pool, config.batch_detection, s, t, weak_rng);

        // Image-level path: augmented weak images, tiled four to a mosaic.
        ImclsOutput imc;
        std::vector<int> row_of(batch.weak.size(), -1);
        if (s > 0) {
            std::vector<WeakImage> aug;
            for (int w : batch.weak)
                aug.push_back(augment_weak(data.weak[static_cast<std::size_t>(pool[static_cast<std::size_t>(w)])],
                                           weak_aug_rng, config.augment));
            std::vector<WeakView> views;
            std::vector<std::vector<int>> view_pos;
            std::size_t i = 0;
            for (; i + 4 <= aug.size(); i += 4) {
                views.push_back(view_of(mosaic(std::span<const WeakImage>(aug.data() + i, 4), config.mosaic_size,
                                               weak_aug_rng)));
                view_pos.push_back({static_cast<int>(i), static_cast<int>(i + 1), static_cast<int>(i + 2),
                                    static_cast<int>(i + 3)});
            }
            for (; i < aug.size(); ++i) {
                views.push_back(view_of(aug[i]));
                view_pos.push_back({static_cast<int>(i)});
            }
            imc = imcls_forward(params, views);
            for (std::size_t r = 0; r < imc.rows.size(); ++r) {
                const auto [v, k] = imc.rows[r];
                row_of[static_cast<std::size_t>(view_pos[static_cast<std::size_t>(v)][static_cast<std::size_t>(k)])] =
                    static_cast<int>(r);
            }
        }

        // Detection path, with picked weak instances pasted in as extra annotated objects.
        std::vector<ag::Var> rpn, incls, loc, obj;
        std::vector<std::vector<double>> f_d;
        std::vector<int> pair_rows, pair_ids;
        for (std::size_t j = 0; j < batch.detection.size(); ++j) {
            DetectionImage det =
                augment_detection(data.train[static_cast<std::size_t>(batch.detection[j])], det_rng, config.augment);
            std::vector<Box> paste_boxes;
            for (int p : batch.picked[j]) {
                if (row_of[static_cast<std::size_t>(p)] < 0) continue;
                const WeakImage& src =
                    data.weak[static_cast<std::size_t>(pool[static_cast<std::size_t>(batch.weak[static_cast<std::size_t>(p)])])];
                try {
                    PastedComposite c = paste_instance(src, det, paste_rng, config.paste);
                    det.pixels = std::move(c.pixels);
                    det.annotations.push_back({c.paste_box, c.label});
                    paste_boxes.push_back(c.paste_box);
                    pair_rows.push_back(row_of[static_cast<std::size_t>(p)]);
                    pair_ids.push_back(src.image_id);
                } catch (const Error& e) {
                    if (e.code() != ErrorCode::kUnplaceable) throw;
                }
            }
            DetectionForward fwd = detection_forward(params, det.pixels, det.annotations, det_rng);
            rpn.push_back(fwd.rpn.total);
            incls.push_back(fwd.heads.incls);
            loc.push_back(fwd.heads.loc);
            obj.push_back(fwd.heads.obj);
            if (!paste_boxes.empty()) {
                auto keys = momentum_embed(*branch, roi_features(params, fwd.features, paste_boxes));
                f_d.insert(f_d.end(), keys.begin(), keys.end());
            }
        }

        LossVars parts{mean_of(rpn), mean_of(incls), mean_of(loc), mean_of(obj),
                       imc.loss.defined() ? imc.loss : ag::Var::scalar(0.0), ag::Var::scalar(0.0)};
        int pairs = 0;
        if (switches.use_CLR && !f_d.empty()) {
            const Embeddings f_i = project(gather_rows(imc.features, pair_rows), *params.imcls_proj);
            const auto key_i = momentum_embed(*branch, gather_rows(imc.roi, pair_rows));
            try {
                ContrastiveResult cr = contrastive_step(f_i, f_d, key_i, pair_ids, *queue, config.tau);
                parts.L_con = cr.loss;
                pairs = static_cast<int>(cr.pairs.size());
            } catch (const Error& e) {
                if (e.code() != ErrorCode::kNumerical) throw;
                // Logged as a NaN step below, then the run stops.
                parts.L_con = ag::Var::scalar(std::numeric_limits<double>::quiet_NaN());
            }
        }
        const ag::Var total = total_loss(parts, config.alpha, config.beta);

        StepRecord rec;
        rec.step = step;
        rec.lr = config.learning_rate(step);
        rec.pairs = pairs;
        rec.losses = {parts.L_rpn.item(), parts.L_incls.item(), parts.L_loc.item(), parts.L_obj.item(),
                      parts.L_imcls.item(), parts.L_con.item(), total.item()};
        if (options.metrics) write_record(*options.metrics, rec);
        result.records.push_back(rec);
        if (options.on_step) options.on_step(rec);
        if (!std::isfinite(rec.losses.total)) {
            std::ostringstream msg;
            msg << "non-finite loss at step " << step << ": L_rpn=" << rec.losses.L_rpn
                << " L_incls=" << rec.losses.L_incls << " L_loc=" << rec.losses.L_loc << " L_obj=" << rec.losses.L_obj
                << " L_imcls=" << rec.losses.L_imcls << " L_con=" << rec.losses.L_con;
            throw Error(ErrorCode::kNumerical, msg.str());
        }

        params.zero_grad();
        ag::backward(total);
        opt.step(all_params, rec.lr);
        if (branch) momentum_update(params, *branch);
        elapsed += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
    result.mean_step_seconds = steps > 0 ? elapsed / steps : 0.0;
    return result;
}

}  // namespace clis
