#include "clis/config.hpp"

#include <fstream>

namespace clis {

ExperimentConfig desk_preset() {
    ExperimentConfig c;
    c.name = "desk";
    c.train.iterations = 3000;
    c.baseline_iterations = 3000;
    c.train.batch_detection = 2;
    c.train.weak_per_detection = 16;
    c.train.picked_per_detection = 2;
    c.train.base_lr = 0.02;
    c.train.lr_reference_batch = 2;
    c.train.warmup_iterations = 100;
    c.train.rfs_threshold = 0.2;
    c.train.mosaic_size = 128;
    c.train.queue_capacity = 4096;
    return c;
}

ExperimentConfig paper_scale_preset() {
    ExperimentConfig c;
    c.name = "paper-scale";
    c.data.num_categories = 1203;
    c.data.num_detection_images = 100000;
    c.data.weak_multiplier = 1.2;
    c.data.num_val_images = 19800;
    c.data.image_size = 800;
    c.data.max_images_per_category = 10000;
    c.model.backbone_channels = {64, 128, 256, 256};
    c.model.hidden = 1024;
    c.model.rpn_post_nms = 1000;
    c.model.rpn_pre_nms = 2000;
    c.model.rpn_batch = 256;
    c.model.roi_batch = 512;
    c.train.iterations = 90000;
    c.baseline_iterations = 90000;
    c.train.batch_detection = 16;
    c.train.lr_reference_batch = 16;
    c.train.base_lr = 0.02;
    c.train.weak_per_detection = 16;
    c.train.picked_per_detection = 2;
    c.train.queue_capacity = 115712;
    c.train.tau = 0.2;
    c.train.alpha = 0.1;
    c.train.beta = 0.05;
    c.train.rfs_threshold = 0.001;
    c.train.mosaic_size = 448;
    return c;
}

ExperimentConfig preset(const std::string& name) {
    if (name == "desk") return desk_preset();
    if (name == "paper-scale") return paper_scale_preset();
    throw invalid_argument("unknown preset '" + name + "' (expected desk or paper-scale)");
}

void validate(const ExperimentConfig& c) {
    c.switches.validate();
    const auto& t = c.train;
    if (t.iterations < 1 || c.baseline_iterations < 1) throw invalid_argument("config: iterations must be >= 1");
    if (t.batch_detection < 1) throw invalid_argument("config: batch_detection must be >= 1");
    if (t.weak_per_detection < 0 || t.picked_per_detection < 0 || t.picked_per_detection > t.weak_per_detection)
        throw invalid_argument("config: need 0 <= t <= s");
    if (!(t.alpha >= 0) || !(t.beta >= 0)) throw invalid_argument("config: alpha and beta must be >= 0");
    if (!(t.tau > 0)) throw invalid_argument("config: tau must be positive");
    if (!(t.momentum_m >= 0 && t.momentum_m <= 1)) throw invalid_argument("config: momentum_m must lie in [0, 1]");
    if (t.queue_capacity < 0) throw invalid_argument("config: queue_capacity must be >= 0");
    if (!(t.data_fraction >= 0 && t.data_fraction <= 1)) throw invalid_argument("config: data_fraction must lie in [0, 1]");
    if (t.mosaic_size < 32 || t.mosaic_size % 2 != 0) throw invalid_argument("config: mosaic_size must be even and >= 32");
    if (!(t.base_lr > 0) || t.lr_reference_batch < 1) throw invalid_argument("config: bad learning rate");
    if (c.data.num_categories < 3) throw invalid_argument("config: need at least 3 categories");
    if (c.data.image_size < 32) throw invalid_argument("config: image_size must be >= 32");
}

nlohmann::json to_json(const ExperimentConfig& config) {
    nlohmann::json j = config;
    return j;
}

namespace {

void reject_unknown(const nlohmann::json& given, const nlohmann::json& reference, const std::string& path) {
    if (!given.is_object() || !reference.is_object()) return;
    for (const auto& [k, v] : given.items()) {
        const auto it = reference.find(k);
        if (it == reference.end()) throw invalid_argument("config: unknown key '" + path + k + "'");
        reject_unknown(v, *it, path + k + ".");
    }
}

}  // namespace

ExperimentConfig experiment_from_json(const nlohmann::json& j) {
    reject_unknown(j, to_json(ExperimentConfig{}), "");
    try {
        return j.get<ExperimentConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw invalid_argument(std::string("config: ") + e.what());
    }
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw io_error("cannot read config " + path.string());
    try {
        return experiment_from_json(nlohmann::json::parse(is));
    } catch (const nlohmann::json::parse_error& e) {
        throw invalid_argument(std::string("config: ") + e.what());
    }
}

void save_config(const std::filesystem::path& path, const ExperimentConfig& config) {
    std::ofstream os(path);
    if (!os) throw io_error("cannot write config " + path.string());
    os << to_json(config).dump(1) << "\n";
}

void apply_override(ExperimentConfig& config, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw invalid_argument("--set expects key=value, got '" + assignment + "'");
    const std::string key = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);

    nlohmann::json j = to_json(config);
    nlohmann::json* node = &j;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (!node->is_object() || !node->contains(part)) throw invalid_argument("--set: unknown key '" + key + "'");
        node = &(*node)[part];
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;
    const bool same_kind = (node->is_number() && value.is_number()) || (node->is_boolean() && value.is_boolean()) ||
                           (node->is_string() && value.is_string()) || (node->is_array() && value.is_array()) ||
                           (node->is_object() && value.is_object());
    if (!same_kind) throw invalid_argument("--set: value for '" + key + "' has the wrong type");
    if (node->is_number_integer() && !value.is_number_integer())
        throw invalid_argument("--set: '" + key + "' expects an integer");
    *node = value;
    config = experiment_from_json(j);
}

}  // namespace clis
