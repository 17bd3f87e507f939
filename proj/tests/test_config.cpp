#include <filesystem>

#include "clis/config.hpp"
#include "doctest.h"

using namespace clis;

TEST_CASE("presets validate and round-trip through JSON") {
    for (const char* name : {"desk", "paper-scale"}) {
        const ExperimentConfig c = preset(name);
        CHECK_NOTHROW(validate(c));
        CHECK(experiment_from_json(to_json(c)) == c);
    }
    CHECK_THROWS_AS(preset("laptop"), Error);

    const ExperimentConfig full = preset("paper-scale");
    CHECK(full.train.alpha == 0.1);
    CHECK(full.train.beta == 0.05);
    CHECK(full.train.tau == 0.2);
    CHECK(full.train.weak_per_detection == 16);
    CHECK(full.train.picked_per_detection == 2);
    CHECK(full.train.momentum_m == 0.999);
    CHECK(full.train.batch_detection == 16);
    CHECK(full.data.num_categories == 1203);

    const auto dir = std::filesystem::temp_directory_path() / "clis_test_config";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    ExperimentConfig c = preset("desk");
    c.train.alpha = 0.123456789012345;
    c.seed = 11;
    save_config(dir / "c.json", c);
    CHECK(load_config(dir / "c.json") == c);
    std::filesystem::remove_all(dir);
}

TEST_CASE("overrides") {
    ExperimentConfig c = preset("desk");
    apply_override(c, "train.alpha=0.2");
    CHECK(c.train.alpha == 0.2);
    apply_override(c, "train.weak_per_detection=4");
    CHECK(c.train.weak_per_detection == 4);
    apply_override(c, "switches.use_CLR=false");
    CHECK_FALSE(c.switches.use_CLR);
    apply_override(c, "name=trial");
    CHECK(c.name == "trial");
    apply_override(c, "model.backbone_channels=[8,8,16,16]");
    CHECK(c.model.backbone_channels == std::vector<int>{8, 8, 16, 16});

    const ExperimentConfig keep = c;
    CHECK_THROWS_AS(apply_override(c, "train.nope=1"), Error);
    CHECK_THROWS_AS(apply_override(c, "train.weak_per_detection=2.5"), Error);
    CHECK_THROWS_AS(apply_override(c, "train.alpha=\"x\""), Error);
    CHECK_THROWS_AS(apply_override(c, "no_equals_sign"), Error);
    CHECK(c == keep);
}

TEST_CASE("unknown keys and bad sizes are rejected") {
    nlohmann::json j = to_json(preset("desk"));
    j["train"]["alhpa"] = 0.3;
    CHECK_THROWS_AS(experiment_from_json(j), Error);

    ExperimentConfig c = preset("desk");
    c.train.picked_per_detection = c.train.weak_per_detection + 1;
    CHECK_THROWS_AS(validate(c), Error);
    c = preset("desk");
    c.train.tau = 0;
    CHECK_THROWS_AS(validate(c), Error);
}
