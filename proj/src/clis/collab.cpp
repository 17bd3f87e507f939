#include "clis/collab.hpp"

namespace clis {

Embeddings project(const ag::Var& features, const ProjectionHead& head) {
    Embeddings e;
    e.rows = ag::l2_normalize_rows(head.fc(features), &e.zero_rows);
    return e;
}

namespace {

double norm(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

}  // namespace

FeatureQueue::FeatureQueue(std::size_t capacity, int dim) : capacity_(capacity), dim_(dim) {
    if (dim < 1) throw invalid_argument("queue: dim must be positive");
}

void FeatureQueue::enqueue(const std::vector<std::vector<double>>& rows) {
    for (const auto& r : rows) {
        if (static_cast<int>(r.size()) != dim_) throw invalid_argument("queue: embedding has the wrong dimension");
        if (std::abs(norm(r) - 1.0) > 1e-6) throw invalid_argument("queue: embedding is not unit norm");
    }
    if (capacity_ == 0) return;
    for (const auto& r : rows) {
        entries_.push_back(r);
        if (entries_.size() > capacity_) entries_.pop_front();
    }
}

ag::Var contrastive_loss(const ag::Var& f_i, const std::vector<double>& f_d, const FeatureQueue& queue, double tau) {
    if (!(tau > 0)) throw invalid_argument("contrastive_loss: temperature must be positive");
    const std::size_t E = f_i.size();
    if (f_d.size() != E) throw invalid_argument("contrastive_loss: f_i and f_d differ in size");
    if (queue.size() > 0 && static_cast<std::size_t>(queue.dim()) != E)
        throw invalid_argument("contrastive_loss: queue dimension mismatch");

    // Key 0 is the positive; keys are copied so the node is independent of later enqueues.
    auto keys = std::make_shared<std::vector<std::vector<double>>>();
    keys->reserve(queue.size() + 1);
    keys->push_back(f_d);
    for (const auto& q : queue.entries()) keys->push_back(q);

    const auto fi = f_i.value();
    std::vector<double> z(keys->size());
    for (std::size_t k = 0; k < keys->size(); ++k) {
        double d = 0;
        for (std::size_t j = 0; j < E; ++j) d += fi[j] * (*keys)[k][j];
        z[k] = d / tau;
    }
    const double zmax = *std::max_element(z.begin(), z.end());
    double denom = 0;
    for (double v : z) denom += std::exp(v - zmax);
    const double loss = zmax + std::log(denom) - z[0];
    auto probs = std::make_shared<std::vector<double>>(z.size());
    for (std::size_t k = 0; k < z.size(); ++k) (*probs)[k] = std::exp(z[k] - zmax) / denom;

    return ag::make_result({}, {loss}, {f_i}, [keys, probs, tau, E](ag::Node& self) {
        double* g = self.inputs[0]->ensure_grad();
        const double go = self.grad[0];
        for (std::size_t k = 0; k < keys->size(); ++k) {
            const double w = ((*probs)[k] - (k == 0 ? 1.0 : 0.0)) / tau * go;
            if (w == 0) continue;
            for (std::size_t j = 0; j < E; ++j) g[j] += w * (*keys)[k][j];
        }
    });
}

std::vector<ag::Var> MomentumBranch::parameters() const {
    return {trunk.fc1.weight, trunk.fc1.bias, trunk.fc2.weight, trunk.fc2.bias, proj.fc.weight, proj.fc.bias};
}

std::vector<ag::Var> momentum_sources(const DetectorParams& online) {
    const Trunk& t = *online.cls->trunk;
    const Linear& p = online.cls_proj->fc;
    return {t.fc1.weight, t.fc1.bias, t.fc2.weight, t.fc2.bias, p.weight, p.bias};
}

MomentumBranch make_momentum_branch(const DetectorParams& online, double m) {
    if (!(m >= 0 && m <= 1)) throw invalid_argument("momentum coefficient must lie in [0, 1]");
    auto copy = [](const ag::Var& v) {
        return ag::Var::constant(v.shape(), std::vector<double>(v.value().begin(), v.value().end()));
    };
    auto copy_linear = [&](const Linear& l) { return Linear{copy(l.weight), copy(l.bias)}; };
    const Trunk& t = *online.cls->trunk;
    return {{copy_linear(t.fc1), copy_linear(t.fc2)}, {copy_linear(online.cls_proj->fc)}, m};
}

void momentum_update(const std::vector<ag::Var>& online, const std::vector<ag::Var>& momentum, double m) {
    if (online.size() != momentum.size()) throw invalid_argument("momentum_update: parameter count mismatch");
    for (std::size_t i = 0; i < online.size(); ++i)
        if (online[i].shape() != momentum[i].shape()) throw invalid_argument("momentum_update: shape mismatch");
    for (std::size_t i = 0; i < online.size(); ++i) {
        const auto q = online[i].value();
        auto k = ag::Var(momentum[i].ptr()).mutable_value();
        for (std::size_t j = 0; j < k.size(); ++j) k[j] = m * k[j] + (1.0 - m) * q[j];
    }
}

void momentum_update(const DetectorParams& online, MomentumBranch& branch) {
    momentum_update(momentum_sources(online), branch.parameters(), branch.m);
}

std::vector<std::vector<double>> momentum_embed(const MomentumBranch& branch, const ag::Var& roi) {
    const ag::Var e = ag::l2_normalize_rows(branch.proj.fc(branch.trunk(roi.detach())));
    const int n = e.dim(0), d = e.dim(1);
    std::vector<std::vector<double>> out(static_cast<std::size_t>(n));
    for (int r = 0; r < n; ++r)
        out[static_cast<std::size_t>(r)].assign(e.value().begin() + static_cast<long>(r) * d,
                                                e.value().begin() + static_cast<long>(r + 1) * d);
    return out;
}

WeakView view_of(const MosaicImage& m) {
    WeakView v;
    v.pixels = m.pixels;
    for (const auto& t : m.tiles) {
        v.regions.push_back(t.mapped_region);
        v.labels.push_back(t.label);
        v.source_ids.push_back(t.source_id);
    }
    return v;
}

WeakView view_of(const WeakImage& w) {
    if (!w.predefined_region) throw invalid_argument("weak image has no predefined region; run regiongen first");
    return {w.pixels, {clip_box(*w.predefined_region, w.pixels.width, w.pixels.height)}, {w.label}, {w.image_id}};
}

ImclsOutput imcls_forward(const DetectorParams& params, const std::vector<WeakView>& views) {
    ImclsOutput out;
    std::vector<ag::Var> parts;
    std::vector<int> labels;
    for (std::size_t v = 0; v < views.size(); ++v) {
        const WeakView& view = views[v];
        FeaturePyramid fp = extract_features(params, view.pixels);
        std::vector<Box> boxes;
        for (std::size_t r = 0; r < view.regions.size(); ++r) {
            if (!view.regions[r]) continue;
            const Box& b = *view.regions[r];
            if (b.w <= 1.0 || b.h <= 1.0) continue;
            boxes.push_back(b);
            labels.push_back(view.labels[r]);
            out.rows.emplace_back(static_cast<int>(v), static_cast<int>(r));
        }
        if (!boxes.empty()) parts.push_back(roi_features(params, fp, boxes));
        out.pyramids.push_back(std::move(fp));
    }
    if (parts.empty()) {
        out.loss = ag::Var::scalar(0.0);
        return out;
    }
    out.roi = parts.size() == 1 ? parts.front() : ag::concat_rows(parts);
    const ClsOutput c = cls_forward(*params.imcls, out.roi);
    out.logits = c.logits;
    out.features = c.features;
    out.loss = ag::softmax_cross_entropy(c.logits, labels);
    return out;
}

ContrastiveResult contrastive_step(const Embeddings& f_i, const std::vector<std::vector<double>>& f_d,
                                   const std::vector<std::vector<double>>& key_i, const std::vector<int>& instance_ids,
                                   FeatureQueue& queue, double tau) {
    ContrastiveResult r;
    if (f_d.empty()) {
        r.loss = ag::Var::scalar(0.0);
        r.no_pairs = true;
        return r;
    }
    const int P = static_cast<int>(f_d.size());
    if (!f_i.rows.defined() || f_i.rows.dim(0) != P) throw invalid_argument("contrastive_step: pair count mismatch");
    // A diverging model yields NaN or overflowed keys; report that as numerical, not as a bad queue row.
    for (const auto* rows : {&f_d, &key_i})
        for (const auto& k : *rows)
            if (!(std::abs(norm(k) - 1.0) <= 1e-6))
                throw Error(ErrorCode::kNumerical, "contrastive_step: key embedding is not finite and unit norm");
    const int E = f_i.rows.dim(1);
    std::vector<ag::Var> terms;
    for (int p = 0; p < P; ++p) {
        std::vector<int> idx(static_cast<std::size_t>(E));
        std::iota(idx.begin(), idx.end(), p * E);
        const ag::Var row = ag::gather(f_i.rows, std::move(idx), {E});
        terms.push_back(contrastive_loss(row, f_d[static_cast<std::size_t>(p)], queue, tau));
        r.pairs.push_back({instance_ids.at(static_cast<std::size_t>(p)),
                           std::vector<double>(row.value().begin(), row.value().end()), f_d[static_cast<std::size_t>(p)]});
    }
    r.loss = ag::scale(ag::add_n(terms), 1.0 / P);
    queue.enqueue(f_d);
    queue.enqueue(key_i);
    return r;
}

}  // namespace clis
