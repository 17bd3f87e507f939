#include "clis/detector.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>
#include <unordered_set>

#include "clis/config.hpp"

namespace clis {

std::vector<int> DetectorConfig::strides() const {
    const int blocks = static_cast<int>(backbone_channels.size());
    return {1 << (blocks - 1), 1 << blocks};
}

namespace {

std::vector<double> normal_values(Rng& rng, std::size_t n, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> v(n);
    for (double& x : v) x = dist(rng);
    return v;
}

Linear make_linear(Rng& rng, int in, int out, double stddev) {
    return {ag::Var::parameter({out, in}, normal_values(rng, static_cast<std::size_t>(out) * in, stddev)),
            ag::Var::parameter({out}, std::vector<double>(static_cast<std::size_t>(out), 0.0))};
}

Conv make_conv(Rng& rng, int in, int out, int k, int stride, int pad, double stddev) {
    return {ag::Var::parameter({out, in, k, k}, normal_values(rng, static_cast<std::size_t>(out) * in * k * k, stddev)),
            ag::Var::parameter({out}, std::vector<double>(static_cast<std::size_t>(out), 0.0)), stride, pad};
}

double he(int fan_in) { return std::sqrt(2.0 / fan_in); }

Trunk make_trunk(Rng& rng, int in, int hidden) {
    return {make_linear(rng, in, hidden, he(in)), make_linear(rng, hidden, hidden, he(hidden))};
}

ClsSubnet make_cls(Rng& rng, const DetectorConfig& c, int roi_dim, std::shared_ptr<Trunk> trunk) {
    if (!trunk) trunk = std::make_shared<Trunk>(make_trunk(rng, roi_dim, c.hidden));
    return {std::move(trunk), make_linear(rng, c.hidden, c.num_classes + 1, 0.01)};
}

void validate(const DetectorConfig& c) {
    if (c.num_classes < 1) throw invalid_argument("detector: num_classes must be >= 1");
    if (c.backbone_channels.size() < 2) throw invalid_argument("detector: need at least 2 backbone blocks");
    const auto n = c.backbone_channels.size();
    if (c.backbone_channels[n - 1] != c.backbone_channels[n - 2])
        throw invalid_argument("detector: the two pyramid blocks must share a channel count");
    if (c.pool_size < 1 || c.hidden < 1 || c.embed_dim < 1) throw invalid_argument("detector: bad head sizes");
    if (c.anchor_scales.empty()) throw invalid_argument("detector: no anchor scales");
    if (!(c.neg_iou <= c.pos_iou)) throw invalid_argument("detector: neg_iou must not exceed pos_iou");
}

}  // namespace

ag::Var clone_parameter(const ag::Var& v) {
    return ag::Var::parameter(v.shape(), std::vector<double>(v.value().begin(), v.value().end()));
}

Linear clone(const Linear& l) { return {clone_parameter(l.weight), clone_parameter(l.bias)}; }
Trunk clone(const Trunk& t) { return {clone(t.fc1), clone(t.fc2)}; }

DetectorParams make_detector(const DetectorConfig& config, std::uint64_t seed) {
    validate(config);
    Rng rng = make_rng(seed, 0xDE7EC7);
    DetectorParams p;
    p.config = config;
    int in = 3;
    for (int ch : config.backbone_channels) {
        p.backbone.push_back(make_conv(rng, in, ch, 3, 2, 1, he(in * 9)));
        in = ch;
    }
    const int C = in;
    const int A = config.anchors_per_location();
    p.rpn_conv = make_conv(rng, C, C, 3, 1, 1, he(C * 9));
    p.rpn_obj = make_conv(rng, C, A, 1, 1, 0, 0.01);
    p.rpn_deltas = make_conv(rng, C, 4 * A, 1, 1, 0, 0.01);

    const int roi_dim = C * config.pool_size * config.pool_size;
    auto loc_trunk = std::make_shared<Trunk>(make_trunk(rng, roi_dim, config.hidden));
    p.loc = {loc_trunk, make_linear(rng, config.hidden, 4, 0.001), make_linear(rng, config.hidden, 1, 0.01)};
    p.cls = std::make_shared<ClsSubnet>(make_cls(rng, config, roi_dim, config.task_specialized ? nullptr : loc_trunk));
    p.cls_proj = std::make_shared<ProjectionHead>(
        ProjectionHead{make_linear(rng, config.hidden, config.embed_dim, std::sqrt(1.0 / config.hidden))});
    if (config.siamese) {
        p.imcls = p.cls;
        p.imcls_proj = p.cls_proj;
    } else {
        // Independent copy with identical starting values.
        auto own = std::make_shared<ClsSubnet>();
        own->trunk = (config.task_specialized || p.cls->trunk != p.loc.trunk)
                         ? std::make_shared<Trunk>(clone(*p.cls->trunk))
                         : std::make_shared<Trunk>(clone(*p.cls->trunk));
        own->logits = clone(p.cls->logits);
        p.imcls = std::move(own);
        p.imcls_proj = std::make_shared<ProjectionHead>(ProjectionHead{clone(p.cls_proj->fc)});
    }
    return p;
}

std::vector<std::pair<std::string, ag::Var>> DetectorParams::named_parameters() const {
    std::vector<std::pair<std::string, ag::Var>> out;
    std::unordered_set<const ag::Node*> seen;
    auto add = [&](const std::string& name, const ag::Var& v) {
        if (seen.insert(v.node()).second) out.emplace_back(name, v);
    };
    auto add_linear = [&](const std::string& name, const Linear& l) {
        add(name + ".weight", l.weight);
        add(name + ".bias", l.bias);
    };
    auto add_conv = [&](const std::string& name, const Conv& c) {
        add(name + ".weight", c.weight);
        add(name + ".bias", c.bias);
    };
    for (std::size_t i = 0; i < backbone.size(); ++i) add_conv("backbone." + std::to_string(i), backbone[i]);
    add_conv("rpn.conv", rpn_conv);
    add_conv("rpn.obj", rpn_obj);
    add_conv("rpn.deltas", rpn_deltas);
    const bool shared_trunk = loc.trunk == cls->trunk;
    const std::string loc_trunk_name = shared_trunk ? "shared" : "loc";
    add_linear(loc_trunk_name + ".fc1", loc.trunk->fc1);
    add_linear(loc_trunk_name + ".fc2", loc.trunk->fc2);
    add_linear("loc.deltas", loc.deltas);
    add_linear("loc.objectness", loc.objectness);
    add_linear("cls.fc1", cls->trunk->fc1);
    add_linear("cls.fc2", cls->trunk->fc2);
    add_linear("cls.logits", cls->logits);
    add_linear("cls_proj.fc", cls_proj->fc);
    if (imcls != cls) {
        add_linear("imcls.fc1", imcls->trunk->fc1);
        add_linear("imcls.fc2", imcls->trunk->fc2);
        add_linear("imcls.logits", imcls->logits);
    }
    if (imcls_proj != cls_proj) add_linear("imcls_proj.fc", imcls_proj->fc);
    return out;
}

std::vector<ag::Var> DetectorParams::loc_parameters() const {
    return {loc.trunk->fc1.weight, loc.trunk->fc1.bias, loc.trunk->fc2.weight, loc.trunk->fc2.bias,
            loc.deltas.weight,     loc.deltas.bias,     loc.objectness.weight, loc.objectness.bias};
}

std::vector<ag::Var> DetectorParams::cls_parameters() const {
    return {cls->trunk->fc1.weight, cls->trunk->fc1.bias, cls->trunk->fc2.weight,
            cls->trunk->fc2.bias,   cls->logits.weight,   cls->logits.bias};
}

void DetectorParams::zero_grad() const {
    for (auto& [name, v] : named_parameters()) v.node()->grad.clear();
}

FeaturePyramid extract_features(const DetectorParams& params, const Image& image) {
    FeaturePyramid fp;
    fp.image_h = image.height;
    fp.image_w = image.width;
    fp.strides = params.config.strides();
    ag::Var x = ag::Var::constant({3, image.height, image.width}, to_chw(image));
    const std::size_t n = params.backbone.size();
    for (std::size_t i = 0; i < n; ++i) {
        x = ag::relu(params.backbone[i](x));
        if (i + 2 >= n) fp.levels.push_back(x);
    }
    return fp;
}

std::vector<Box> make_anchors(const DetectorConfig& config, const FeaturePyramid& fp) {
    std::vector<Box> anchors;
    for (std::size_t l = 0; l < fp.levels.size(); ++l) {
        const int H = fp.levels[l].dim(1), W = fp.levels[l].dim(2);
        const double s = fp.strides[l];
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                for (double scale : config.anchor_scales)
                    anchors.push_back({(x + 0.5) * s, (y + 0.5) * s, scale * s, scale * s});
    }
    return anchors;
}

RpnOutput rpn_forward(const DetectorParams& params, const FeaturePyramid& fp) {
    RpnOutput out;
    out.anchors = make_anchors(params.config, fp);
    const int A = params.config.anchors_per_location();
    std::vector<ag::Var> logit_parts, delta_parts;
    for (const auto& level : fp.levels) {
        const int H = level.dim(1), W = level.dim(2), HW = H * W;
        const ag::Var t = ag::relu(params.rpn_conv(level));
        const ag::Var obj = params.rpn_obj(t);
        const ag::Var del = params.rpn_deltas(t);
        std::vector<int> oi, di;
        oi.reserve(static_cast<std::size_t>(HW) * A);
        di.reserve(static_cast<std::size_t>(HW) * A * 4);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                for (int a = 0; a < A; ++a) {
                    oi.push_back(a * HW + y * W + x);
                    for (int k = 0; k < 4; ++k) di.push_back((a * 4 + k) * HW + y * W + x);
                }
        const int n = HW * A;
        logit_parts.push_back(ag::gather(obj, std::move(oi), {n, 1}));
        delta_parts.push_back(ag::gather(del, std::move(di), {n, 4}));
    }
    out.logits = ag::concat_rows(logit_parts);
    out.deltas = ag::concat_rows(delta_parts);
    return out;
}

AnchorTargets assign_anchor_targets(const std::vector<Box>& anchors, const std::vector<InstanceAnnotation>& gt,
                                    const DetectorConfig& config, Rng& rng) {
    std::vector<int> pos, neg;
    std::vector<int> best(anchors.size(), -1);
    for (std::size_t i = 0; i < anchors.size(); ++i) {
        double m = 0;
        for (std::size_t g = 0; g < gt.size(); ++g) {
            const double v = iou(anchors[i], gt[g].box);
            if (v > m) {
                m = v;
                best[i] = static_cast<int>(g);
            }
        }
        if (m >= config.pos_iou) pos.push_back(static_cast<int>(i));
        else if (m < config.neg_iou) neg.push_back(static_cast<int>(i));
    }
    std::shuffle(pos.begin(), pos.end(), rng);
    std::shuffle(neg.begin(), neg.end(), rng);
    const auto max_pos = static_cast<std::size_t>(config.rpn_batch * config.rpn_pos_fraction);
    if (pos.size() > max_pos) pos.resize(max_pos);
    const std::size_t n_neg = std::min(neg.size(), static_cast<std::size_t>(config.rpn_batch) - pos.size());
    neg.resize(n_neg);

    AnchorTargets t;
    for (int i : pos) {
        t.sampled.push_back(i);
        t.labels.push_back(1.0);
        t.positives.push_back(i);
        t.reg_targets.push_back(encode_box(gt[static_cast<std::size_t>(best[static_cast<std::size_t>(i)])].box,
                                           anchors[static_cast<std::size_t>(i)]));
    }
    for (int i : neg) {
        t.sampled.push_back(i);
        t.labels.push_back(0.0);
    }
    return t;
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

std::vector<double> flatten(const std::vector<Deltas>& d) {
    std::vector<double> out;
    out.reserve(d.size() * 4);
    for (const auto& v : d) out.insert(out.end(), v.begin(), v.end());
    return out;
}

}  // namespace

RpnLoss rpn_loss(const ag::Var& logits, const ag::Var& deltas, const AnchorTargets& targets, double beta) {
    RpnLoss out;
    out.cls = targets.sampled.empty() ? ag::Var::scalar(0.0)
                                      : ag::bce_with_logits(gather_rows(logits, targets.sampled), targets.labels);
    const double norm = std::max<double>(1.0, static_cast<double>(targets.sampled.size()));
    out.reg = targets.positives.empty()
                  ? ag::Var::scalar(0.0)
                  : ag::smooth_l1(gather_rows(deltas, targets.positives), flatten(targets.reg_targets), beta, norm);
    out.total = ag::add_n({out.cls, out.reg});
    return out;
}

std::vector<Proposal> select_proposals(const RpnOutput& out, const FeaturePyramid& fp, const DetectorConfig& config,
                                       int top_n) {
    const auto lv = out.logits.value();
    const auto dv = out.deltas.value();
    std::vector<Box> boxes;
    std::vector<double> scores;
    for (std::size_t i = 0; i < out.anchors.size(); ++i) {
        const Deltas d{dv[i * 4], dv[i * 4 + 1], dv[i * 4 + 2], dv[i * 4 + 3]};
        const Box b = clip_box(decode_box(d, out.anchors[i]), fp.image_w, fp.image_h);
        // Written so that NaN boxes and scores from a diverging model are dropped too.
        if (!(b.w >= config.min_box_size && b.h >= config.min_box_size) || !std::isfinite(lv[i])) continue;
        boxes.push_back(b);
        scores.push_back(lv[i]);
    }
    std::vector<int> order(boxes.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores[a] > scores[b]; });
    if (order.size() > static_cast<std::size_t>(config.rpn_pre_nms)) order.resize(static_cast<std::size_t>(config.rpn_pre_nms));
    std::vector<Box> cand;
    std::vector<double> cand_scores;
    for (int i : order) {
        cand.push_back(boxes[static_cast<std::size_t>(i)]);
        cand_scores.push_back(scores[static_cast<std::size_t>(i)]);
    }
    std::vector<Proposal> result;
    for (int k : nms(cand, cand_scores, config.rpn_nms_iou)) {
        if (static_cast<int>(result.size()) >= top_n) break;
        result.push_back({cand[static_cast<std::size_t>(k)], sigmoid(cand_scores[static_cast<std::size_t>(k)])});
    }
    return result;
}

ProposalResult propose_regions(const DetectorParams& params, const FeaturePyramid& fp,
                               const std::vector<InstanceAnnotation>* gt, Rng* rng) {
    ProposalResult r;
    const RpnOutput out = rpn_forward(params, fp);
    if (gt) {
        if (!rng) throw invalid_argument("propose_regions: training mode needs an rng");
        const auto targets = assign_anchor_targets(out.anchors, *gt, params.config, *rng);
        r.loss = rpn_loss(out.logits, out.deltas, targets, params.config.smooth_l1_beta);
    }
    r.proposals = select_proposals(out, fp, params.config, params.config.rpn_post_nms);
    return r;
}

int level_for_box(const Box& b, const std::vector<int>& strides) {
    const double s = std::sqrt(std::max(b.w * b.h, 1e-12));
    const int l = static_cast<int>(std::floor(std::log2(s / (2.0 * strides.front()))));
    return std::clamp(l, 0, static_cast<int>(strides.size()) - 1);
}

ag::Var roi_features(const DetectorParams& params, const FeaturePyramid& fp, const std::vector<Box>& boxes) {
    std::vector<int> lv;
    lv.reserve(boxes.size());
    for (const auto& b : boxes) lv.push_back(level_for_box(b, fp.strides));
    return ag::roi_align(fp.levels, fp.strides, boxes, lv, params.config.pool_size);
}

LocOutput loc_forward(const LocSubnet& loc, const ag::Var& roi) {
    const ag::Var h = (*loc.trunk)(roi);
    return {loc.deltas(h), loc.objectness(h)};
}

ClsOutput cls_forward(const ClsSubnet& cls, const ag::Var& roi) {
    const ag::Var h = (*cls.trunk)(roi);
    return {cls.logits(h), h};
}

RoiSample sample_rois(const std::vector<Proposal>& proposals, const std::vector<InstanceAnnotation>& gt,
                      const DetectorConfig& config, int image_w, int image_h, Rng& rng) {
    std::vector<Box> cand;
    for (const auto& p : proposals) cand.push_back(p.box);
    for (const auto& g : gt) cand.push_back(clip_box(g.box, image_w, image_h));
    std::vector<int> pos, neg;
    std::vector<int> best(cand.size(), -1);
    for (std::size_t i = 0; i < cand.size(); ++i) {
        if (cand[i].w <= 1.0 || cand[i].h <= 1.0) continue;
        double m = 0;
        for (std::size_t g = 0; g < gt.size(); ++g) {
            const double v = iou(cand[i], gt[g].box);
            if (v > m) {
                m = v;
                best[i] = static_cast<int>(g);
            }
        }
        if (m >= config.pos_iou) pos.push_back(static_cast<int>(i));
        else if (m < config.neg_iou) neg.push_back(static_cast<int>(i));
    }
    std::shuffle(pos.begin(), pos.end(), rng);
    std::shuffle(neg.begin(), neg.end(), rng);
    const auto max_pos = static_cast<std::size_t>(config.roi_batch * config.roi_pos_fraction);
    if (pos.size() > max_pos) pos.resize(max_pos);
    neg.resize(std::min(neg.size(), static_cast<std::size_t>(config.roi_batch) - pos.size()));

    RoiSample s;
    for (int i : pos) {
        const auto& g = gt[static_cast<std::size_t>(best[static_cast<std::size_t>(i)])];
        s.positives.push_back(static_cast<int>(s.boxes.size()));
        s.boxes.push_back(cand[static_cast<std::size_t>(i)]);
        s.labels.push_back(g.category);
        s.reg_targets.push_back(encode_box(g.box, cand[static_cast<std::size_t>(i)]));
    }
    for (int i : neg) {
        s.boxes.push_back(cand[static_cast<std::size_t>(i)]);
        s.labels.push_back(config.num_classes);
    }
    return s;
}

HeadLosses head_losses(const LocOutput& loc, const ClsOutput& cls, const RoiSample& sample,
                       const DetectorConfig& config) {
    HeadLosses h;
    h.incls = ag::softmax_cross_entropy(cls.logits, sample.labels);
    std::vector<double> fg;
    fg.reserve(sample.labels.size());
    for (int l : sample.labels) fg.push_back(l == config.num_classes ? 0.0 : 1.0);
    h.obj = ag::bce_with_logits(loc.objectness, fg);
    const double norm = std::max<double>(1.0, static_cast<double>(sample.labels.size()));
    h.loc = sample.positives.empty()
                ? ag::Var::scalar(0.0)
                : ag::smooth_l1(gather_rows(loc.deltas, sample.positives), flatten(sample.reg_targets),
                                config.smooth_l1_beta, norm);
    return h;
}

DetectionForward detection_forward(const DetectorParams& params, const Image& image,
                                   const std::vector<InstanceAnnotation>& gt, Rng& rng) {
    DetectionForward out;
    out.features = extract_features(params, image);
    auto prop = propose_regions(params, out.features, &gt, &rng);
    out.rpn = *prop.loss;
    const RoiSample sample = sample_rois(prop.proposals, gt, params.config, image.width, image.height, rng);
    if (sample.boxes.empty()) {
        out.heads = {ag::Var::scalar(0.0), ag::Var::scalar(0.0), ag::Var::scalar(0.0)};
        return out;
    }
    const ag::Var roi = roi_features(params, out.features, sample.boxes);
    out.heads = head_losses(loc_forward(params.loc, roi), incls_forward(params, roi), sample, params.config);
    return out;
}

namespace {

std::uint64_t fnv1a(const char* data, std::size_t n, std::uint64_t h = 1469598103934665603ULL) {
    for (std::size_t i = 0; i < n; ++i) {
        h ^= static_cast<unsigned char>(data[i]);
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const DetectorParams& params) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest;
    manifest["config"] = params.config;
    manifest["params"] = nlohmann::json::array();
    std::ofstream blob(dir / "model.bin", std::ios::binary);
    if (!blob) throw io_error("cannot write checkpoint blob in " + dir.string());
    std::size_t offset = 0;
    for (const auto& [name, v] : params.named_parameters()) {
        manifest["params"].push_back({{"name", name}, {"shape", v.shape()}, {"dtype", "float64"}, {"offset", offset}});
        blob.write(reinterpret_cast<const char*>(v.value().data()),
                   static_cast<std::streamsize>(v.size() * sizeof(double)));
        offset += v.size();
    }
    blob.close();
    std::ofstream mf(dir / "model.json");
    mf << manifest.dump(1) << "\n";
}

DetectorParams load_checkpoint(const std::filesystem::path& dir) {
    std::ifstream mf(dir / "model.json");
    if (!mf) throw io_error("missing checkpoint manifest in " + dir.string());
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(mf);
    } catch (const nlohmann::json::exception& e) {
        throw io_error(std::string("malformed checkpoint manifest: ") + e.what());
    }
    DetectorParams p = make_detector(manifest.at("config").get<DetectorConfig>(), 0);
    std::ifstream blob(dir / "model.bin", std::ios::binary);
    if (!blob) throw io_error("missing checkpoint blob in " + dir.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(blob)), std::istreambuf_iterator<char>());
    std::unordered_map<std::string, nlohmann::json> entries;
    for (const auto& e : manifest.at("params")) entries[e.at("name").get<std::string>()] = e;
    for (auto& [name, v] : p.named_parameters()) {
        auto it = entries.find(name);
        if (it == entries.end()) throw io_error("checkpoint lacks parameter " + name);
        if (it->second.at("dtype").get<std::string>() != "float64") throw io_error("unsupported dtype for " + name);
        if (it->second.at("shape").get<std::vector<int>>() != v.shape()) throw io_error("shape mismatch for " + name);
        const auto off = it->second.at("offset").get<std::size_t>();
        if ((off + v.size()) * sizeof(double) > bytes.size()) throw io_error("checkpoint blob truncated at " + name);
        std::memcpy(v.mutable_value().data(), bytes.data() + off * sizeof(double), v.size() * sizeof(double));
    }
    return p;
}

std::string checkpoint_hash(const std::filesystem::path& dir) {
    std::ifstream blob(dir / "model.bin", std::ios::binary);
    if (!blob) throw io_error("missing checkpoint blob in " + dir.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(blob)), std::istreambuf_iterator<char>());
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << fnv1a(bytes.data(), bytes.size());
    return os.str();
}

}  // namespace clis
