#include "clis/evalkit.hpp"

#include <fstream>
#include <limits>
#include <map>

#include "json.hpp"

namespace clis {

std::vector<Detection> compose_detections(const HeadPredictions& preds, int image_id, const InferenceConfig& config) {
    const std::size_t n = preds.boxes.size();
    if (preds.objectness.size() != n || preds.cls_logits.size() != n)
        throw invalid_argument("compose_detections: prediction arrays differ in length");
    if (n == 0) return {};
    const int K = static_cast<int>(preds.cls_logits.front().size()) - 1;
    // [category][box]
    std::vector<std::vector<double>> scores(static_cast<std::size_t>(K), std::vector<double>(n));
    for (std::size_t i = 0; i < n; ++i) {
        const auto& z = preds.cls_logits[i];
        if (static_cast<int>(z.size()) != K + 1) throw invalid_argument("compose_detections: ragged logits");
        const double zmax = *std::max_element(z.begin(), z.end());
        double denom = 0;
        for (double v : z) denom += std::exp(v - zmax);
        const double obj = sigmoid(preds.objectness[i]);
        for (int c = 0; c < K; ++c)
            scores[static_cast<std::size_t>(c)][i] = obj * (std::exp(z[static_cast<std::size_t>(c)] - zmax) / denom);
    }
    std::vector<Detection> out;
    for (int c = 0; c < K; ++c) {
        const auto& sc = scores[static_cast<std::size_t>(c)];
        std::vector<Box> boxes;
        std::vector<double> s;
        for (std::size_t i = 0; i < n; ++i) {
            if (config.score_floor && !(sc[i] > *config.score_floor)) continue;
            boxes.push_back(preds.boxes[i]);
            s.push_back(sc[i]);
        }
        for (int k : nms(boxes, s, config.nms_iou))
            out.push_back({image_id, c, boxes[static_cast<std::size_t>(k)], s[static_cast<std::size_t>(k)]});
    }
    std::stable_sort(out.begin(), out.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
    if (config.max_detections && out.size() > static_cast<std::size_t>(*config.max_detections))
        out.resize(static_cast<std::size_t>(*config.max_detections));
    return out;
}

HeadPredictions predict_heads(const DetectorParams& params, const Image& image) {
    HeadPredictions p;
    const FeaturePyramid fp = extract_features(params, image);
    const auto prop = propose_regions(params, fp, nullptr, nullptr);
    if (prop.proposals.empty()) return p;
    std::vector<Box> boxes;
    for (const auto& q : prop.proposals) boxes.push_back(q.box);
    const ag::Var roi = roi_features(params, fp, boxes);
    const LocOutput loc = loc_forward(params.loc, roi);
    const ClsOutput cls = incls_forward(params, roi);
    const int C = cls.logits.dim(1);
    const auto dv = loc.deltas.value();
    const auto ov = loc.objectness.value();
    const auto lv = cls.logits.value();
    for (std::size_t i = 0; i < boxes.size(); ++i) {
        const Deltas d{dv[i * 4], dv[i * 4 + 1], dv[i * 4 + 2], dv[i * 4 + 3]};
        p.boxes.push_back(clip_box(decode_box(d, boxes[i]), image.width, image.height));
        p.objectness.push_back(ov[i]);
        p.cls_logits.emplace_back(lv.begin() + static_cast<long>(i) * C, lv.begin() + static_cast<long>(i + 1) * C);
    }
    return p;
}

std::vector<Detection> infer(const DetectorParams& params, const Image& image, int image_id,
                             const InferenceConfig& config) {
    return compose_detections(predict_heads(params, image), image_id, config);
}

double interpolated_ap(const std::vector<bool>& tp, int num_gt) {
    if (num_gt <= 0) return std::numeric_limits<double>::quiet_NaN();
    const std::size_t n = tp.size();
    std::vector<double> precision(n), recall(n);
    int hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
        hits += tp[i] ? 1 : 0;
        precision[i] = static_cast<double>(hits) / static_cast<double>(i + 1);
        recall[i] = static_cast<double>(hits) / num_gt;
    }
    for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
    double sum = 0;
    for (int k = 0; k <= 100; ++k) {
        const double r = k / 100.0;
        const auto it = std::lower_bound(recall.begin(), recall.end(), r);
        if (it != recall.end()) sum += precision[static_cast<std::size_t>(it - recall.begin())];
    }
    return sum / 101.0;
}

std::vector<bool> greedy_match(const std::vector<Detection>& dets, const std::vector<DetectionImage>& gt, int category,
                               double threshold) {
    std::map<int, const DetectionImage*> by_id;
    for (const auto& g : gt) by_id[g.image_id] = &g;
    std::vector<const Detection*> order;
    for (const auto& d : dets)
        if (d.category == category) order.push_back(&d);
    std::stable_sort(order.begin(), order.end(), [](const Detection* a, const Detection* b) { return a->score > b->score; });
    std::map<int, std::vector<char>> used;
    std::vector<bool> tp;
    tp.reserve(order.size());
    for (const Detection* d : order) {
        const auto it = by_id.find(d->image_id);
        int best = -1;
        double best_iou = threshold;
        if (it != by_id.end()) {
            const auto& anns = it->second->annotations;
            auto& u = used[d->image_id];
            u.resize(anns.size(), 0);
            for (std::size_t g = 0; g < anns.size(); ++g) {
                if (anns[g].category != category || u[g]) continue;
                const double v = iou(d->box, anns[g].box);
                if (v > best_iou || (best < 0 && v >= best_iou)) {
                    best_iou = v;
                    best = static_cast<int>(g);
                }
            }
            if (best >= 0) u[static_cast<std::size_t>(best)] = 1;
        }
        tp.push_back(best >= 0);
    }
    return tp;
}

APReport evaluate_ap(const std::vector<Detection>& detections, const std::vector<DetectionImage>& gt,
                     const FrequencyGroups& groups) {
    const int K = static_cast<int>(groups.group.size());
    std::vector<int> num_gt(static_cast<std::size_t>(K), 0);
    for (const auto& img : gt)
        for (const auto& a : img.annotations) {
            if (a.category < 0 || a.category >= K) throw invalid_argument("evaluate_ap: ground-truth category out of range");
            ++num_gt[static_cast<std::size_t>(a.category)];
        }
    APReport rep;
    std::array<double, 3> gsum{}, gcount{};
    double sum = 0, count = 0;
    for (int c = 0; c < K; ++c) {
        CategoryAp cat;
        cat.category = c;
        cat.group = groups.group[static_cast<std::size_t>(c)];
        cat.num_gt = num_gt[static_cast<std::size_t>(c)];
        if (cat.num_gt == 0) {
            cat.ap = std::numeric_limits<double>::quiet_NaN();
            cat.per_threshold.fill(cat.ap);
        } else {
            double acc = 0;
            for (std::size_t t = 0; t < kIouThresholds.size(); ++t) {
                cat.per_threshold[t] = 100.0 * interpolated_ap(greedy_match(detections, gt, c, kIouThresholds[t]), cat.num_gt);
                acc += cat.per_threshold[t];
            }
            cat.ap = acc / static_cast<double>(kIouThresholds.size());
            sum += cat.ap;
            count += 1;
            gsum[static_cast<std::size_t>(cat.group)] += cat.ap;
            gcount[static_cast<std::size_t>(cat.group)] += 1;
        }
        rep.categories.push_back(cat);
    }
    const double nan = std::numeric_limits<double>::quiet_NaN();
    rep.AP = count > 0 ? sum / count : nan;
    rep.AP_r = gcount[0] > 0 ? gsum[0] / gcount[0] : nan;
    rep.AP_c = gcount[1] > 0 ? gsum[1] / gcount[1] : nan;
    rep.AP_f = gcount[2] > 0 ? gsum[2] / gcount[2] : nan;
    return rep;
}

namespace {

nlohmann::json number(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }
double number(const nlohmann::json& j) {
    return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

}  // namespace

void write_detections(const std::filesystem::path& path, const std::vector<Detection>& dets) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& d : dets)
        arr.push_back({{"image_id", d.image_id},
                       {"category", d.category},
                       {"box", {d.box.x0(), d.box.y0(), d.box.x1(), d.box.y1()}},
                       {"score", d.score}});
    std::ofstream os(path);
    if (!os) throw io_error("cannot write " + path.string());
    os << arr.dump() << "\n";
}

std::vector<Detection> read_detections(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw io_error("cannot read " + path.string());
    std::vector<Detection> out;
    try {
        for (const auto& r : nlohmann::json::parse(is)) {
            const auto b = r.at("box").get<std::vector<double>>();
            if (b.size() != 4) throw io_error("detection box must have 4 numbers");
            out.push_back({r.at("image_id").get<int>(), r.at("category").get<int>(),
                           Box::from_corners(b[0], b[1], b[2], b[3]), r.at("score").get<double>()});
        }
    } catch (const nlohmann::json::exception& e) {
        throw io_error(std::string("malformed detections file: ") + e.what());
    }
    return out;
}

void write_ap_report(const std::filesystem::path& json_path, const std::filesystem::path& csv_path,
                     const APReport& report) {
    nlohmann::json j = {{"AP", number(report.AP)},
                        {"AP_r", number(report.AP_r)},
                        {"AP_c", number(report.AP_c)},
                        {"AP_f", number(report.AP_f)},
                        {"categories", nlohmann::json::array()}};
    std::ofstream csv(csv_path);
    if (!csv) throw io_error("cannot write " + csv_path.string());
    csv << "category,group,num_gt,AP\n";
    for (const auto& c : report.categories) {
        j["categories"].push_back(
            {{"category", c.category}, {"group", group_name(c.group)}, {"num_gt", c.num_gt}, {"AP", number(c.ap)}});
        csv << c.category << ',' << group_name(c.group) << ',' << c.num_gt << ',';
        if (std::isfinite(c.ap)) csv << c.ap;
        else csv << "nan";
        csv << "\n";
    }
    std::ofstream os(json_path);
    if (!os) throw io_error("cannot write " + json_path.string());
    os << j.dump(1) << "\n";
}

APReport read_ap_report(const std::filesystem::path& json_path) {
    std::ifstream is(json_path);
    if (!is) throw io_error("cannot read " + json_path.string());
    APReport r;
    try {
        const auto j = nlohmann::json::parse(is);
        r.AP = number(j.at("AP"));
        r.AP_r = number(j.at("AP_r"));
        r.AP_c = number(j.at("AP_c"));
        r.AP_f = number(j.at("AP_f"));
        for (const auto& c : j.at("categories")) {
            CategoryAp cat;
            cat.category = c.at("category").get<int>();
            cat.group = parse_group(c.at("group").get<std::string>());
            cat.num_gt = c.at("num_gt").get<int>();
            cat.ap = number(c.at("AP"));
            r.categories.push_back(cat);
        }
    } catch (const nlohmann::json::exception& e) {
        throw io_error(std::string("malformed AP report: ") + e.what());
    }
    return r;
}

}  // namespace clis
