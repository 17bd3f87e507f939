#include "clis/regiongen.hpp"

#include <fstream>

#include "json.hpp"

namespace clis {

RegionChoice category_rank_first(const std::vector<ScoredBox>& predictions, int label, int image_w, int image_h) {
    const ScoredBox* best = nullptr;
    for (const auto& p : predictions)
        if (p.category == label && (!best || p.score > best->score)) best = &p;
    if (!best) return {Box::from_corners(0, 0, image_w, image_h), true};
    return {best->box, false};
}

std::optional<ScoredBox> global_argmax(const std::vector<ScoredBox>& predictions) {
    const ScoredBox* best = nullptr;
    for (const auto& p : predictions)
        if (!best || p.score > best->score) best = &p;
    if (!best) return std::nullopt;
    return *best;
}

RegionReport generate_predefined_regions(const DetectorParams& baseline, std::vector<WeakImage>& weak) {
    InferenceConfig cfg;
    cfg.score_floor.reset();
    cfg.max_detections.reset();
    RegionReport rep;
    for (auto& w : weak) {
        std::vector<ScoredBox> preds;
        for (const auto& d : infer(baseline, w.pixels, w.image_id, cfg)) preds.push_back({d.box, d.category, d.score});
        const RegionChoice c = category_rank_first(preds, w.label, w.pixels.width, w.pixels.height);
        w.predefined_region = c.box;
        ++rep.total;
        rep.fallbacks += c.fallback ? 1 : 0;
    }
    rep.fallback_rate = rep.total > 0 ? static_cast<double>(rep.fallbacks) / rep.total : 0.0;
    return rep;
}

void write_region_report(const std::filesystem::path& path, const RegionReport& report,
                         const std::string& checkpoint_hash) {
    nlohmann::json j = {{"total", report.total},
                        {"fallbacks", report.fallbacks},
                        {"fallback_rate", report.fallback_rate},
                        {"checkpoint_hash", checkpoint_hash}};
    std::ofstream os(path);
    if (!os) throw io_error("cannot write " + path.string());
    os << j.dump(1) << "\n";
}

}  // namespace clis
