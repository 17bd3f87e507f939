#pragma once

#include <filesystem>
#include <vector>

#include "clis/evalkit.hpp"

namespace clis {

struct ScoredBox {
    Box box;
    int category = 0;
    double score = 0;
};

struct RegionChoice {
    Box box;
    /// True when no prediction carried the label and the whole image was used instead.
    bool fallback = false;
};

/// Highest-scoring box among predictions of `label`; first one wins on ties.
RegionChoice category_rank_first(const std::vector<ScoredBox>& predictions, int label, int image_w, int image_h);

/// The rule the category-rank-first choice replaces: the globally highest-scoring box.
std::optional<ScoredBox> global_argmax(const std::vector<ScoredBox>& predictions);

struct RegionReport {
    int total = 0;
    int fallbacks = 0;
    double fallback_rate = 0;
};

/// Fills predefined_region for every weak image from the detector's unfloored, uncapped predictions.
RegionReport generate_predefined_regions(const DetectorParams& baseline, std::vector<WeakImage>& weak);

void write_region_report(const std::filesystem::path& path, const RegionReport& report, const std::string& checkpoint_hash);

}  // namespace clis
