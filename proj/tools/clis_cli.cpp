#include <cstdio>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "clis/clis.h"

namespace {

struct ConfigDeleter {
    void operator()(clis_config* c) const { clis_config_free(c); }
};
using ConfigPtr = std::unique_ptr<clis_config, ConfigDeleter>;

void print_line(const char* line, void*) { std::cerr << line << std::endl; }

int fail(clis_status s) {
    std::cerr << "error (" << clis_status_name(s) << "): " << clis_last_error() << std::endl;
    return static_cast<int>(s);
}

std::string json_field(const clis_config* cfg, const std::string& key) {
    char* text = nullptr;
    if (clis_config_to_json(cfg, &text) != CLIS_OK) return "";
    const std::string all(text);
    clis_string_free(text);
    const auto at = all.find("\"" + key + "\":");
    if (at == std::string::npos) return "";
    const auto q0 = all.find('"', at + key.size() + 3);
    const auto q1 = all.find('"', q0 + 1);
    return all.substr(q0 + 1, q1 - q0 - 1);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Collaborative long-tailed detection: data generation, training, region generation, evaluation"};
    app.require_subcommand(1);

    std::string config_path, preset = "desk";
    std::optional<std::uint64_t> seed;
    bool resume = false;
    std::vector<std::string> overrides;
    app.add_option("--config", config_path, "JSON experiment config (applied over the preset)");
    app.add_option("--preset", preset, "Base preset")->check(CLI::IsMember({"desk", "paper-scale"}));
    app.add_option("--seed", seed, "Experiment seed");
    app.add_flag("--resume", resume, "Reuse finished stages found on disk");
    app.add_option("--set", overrides, "Override a config field, e.g. --set train.alpha=0.2")->take_all();

    std::string data_dir, run_dir, checkpoint_dir, reports_dir, report_path, tag = "eval", parameter;
    bool baseline = false;
    std::vector<std::uint64_t> seeds{7, 11, 13};
    std::vector<double> values;

    auto* generate = app.add_subcommand("generate", "Write the synthetic long-tailed benchmark");
    generate->add_option("--out", data_dir, "Output directory")->required();

    auto* train = app.add_subcommand("train", "Train one detector on an existing benchmark");
    train->add_option("--data", data_dir, "Benchmark directory")->required();
    train->add_option("--run", run_dir, "Run directory")->required();
    train->add_flag("--baseline", baseline, "Train with every switch off (region-generation baseline)");

    auto* regiongen = app.add_subcommand("regiongen", "Fill predefined regions of the weak images");
    regiongen->add_option("--checkpoint", checkpoint_dir, "Baseline checkpoint directory")->required();
    regiongen->add_option("--data", data_dir, "Benchmark directory")->required();
    regiongen->add_option("--report", report_path, "Where to write regiongen_report.json")->required();

    auto* eval = app.add_subcommand("eval", "Run inference on the val split and compute AP");
    eval->add_option("--checkpoint", checkpoint_dir, "Checkpoint directory")->required();
    eval->add_option("--data", data_dir, "Benchmark directory")->required();
    eval->add_option("--reports", reports_dir, "Report directory")->required();
    eval->add_option("--tag", tag, "File prefix for the reports");

    auto* pipeline = app.add_subcommand("pipeline", "generate, baseline, regiongen, CLIS, evaluate, compare");

    auto* ablate = app.add_subcommand("ablate", "Run the six ablation configurations over seeds");
    ablate->add_option("--seeds", seeds, "Seeds")->delimiter(',');

    auto* sweep = app.add_subcommand("sweep", "One run per value of a hyper-parameter");
    sweep->add_option("--param", parameter, "alpha, beta, s, t or data_fraction")
        ->required()
        ->check(CLI::IsMember({"alpha", "beta", "s", "t", "data_fraction"}));
    sweep->add_option("--values", values, "Values")->required()->delimiter(',');

    auto* report = app.add_subcommand("report", "Rebuild the comparison report of a pipeline run");
    report->add_option("--run", run_dir, "Pipeline run directory (runs/<name>)")->required();

    CLI11_PARSE(app, argc, argv);

    if (report->parsed()) {
        char* text = nullptr;
        if (auto s = clis_report(run_dir.c_str(), &text); s != CLIS_OK) return fail(s);
        std::cout << text;
        clis_string_free(text);
        return 0;
    }

    clis_config* raw = nullptr;
    clis_status s = config_path.empty() ? clis_config_preset(preset.c_str(), &raw)
                                        : clis_config_load(config_path.c_str(), &raw);
    if (s != CLIS_OK) return fail(s);
    ConfigPtr cfg(raw);
    if (seed && (s = clis_config_set(cfg.get(), ("seed=" + std::to_string(*seed)).c_str())) != CLIS_OK) return fail(s);
    for (const auto& o : overrides)
        if ((s = clis_config_set(cfg.get(), o.c_str())) != CLIS_OK) return fail(s);

    if (generate->parsed()) {
        s = clis_generate(cfg.get(), data_dir.c_str(), resume, print_line, nullptr);
    } else if (train->parsed()) {
        s = clis_train(cfg.get(), data_dir.c_str(), run_dir.c_str(), baseline, resume, print_line, nullptr);
    } else if (regiongen->parsed()) {
        double rate = 0;
        s = clis_regiongen(checkpoint_dir.c_str(), data_dir.c_str(), report_path.c_str(), &rate, print_line, nullptr);
        if (s == CLIS_OK) std::cout << "fallback_rate " << rate << "\n";
    } else if (eval->parsed()) {
        clis_ap_summary ap{};
        s = clis_eval(checkpoint_dir.c_str(), data_dir.c_str(), reports_dir.c_str(), tag.c_str(), &ap, print_line, nullptr);
        if (s == CLIS_OK) std::printf("AP %.2f AP_r %.2f AP_c %.2f AP_f %.2f\n", ap.ap, ap.ap_r, ap.ap_c, ap.ap_f);
    } else if (pipeline->parsed()) {
        clis_ap_summary b{}, c{};
        s = clis_run_pipeline(cfg.get(), resume, &b, &c, print_line, nullptr);
        if (s == CLIS_OK) {
            std::printf("baseline AP %.2f AP_r %.2f AP_c %.2f AP_f %.2f\n", b.ap, b.ap_r, b.ap_c, b.ap_f);
            std::printf("CLIS     AP %.2f AP_r %.2f AP_c %.2f AP_f %.2f\n", c.ap, c.ap_r, c.ap_c, c.ap_f);
        }
    } else if (ablate->parsed()) {
        s = clis_ablate(cfg.get(), seeds.data(), seeds.size(), resume, print_line, nullptr);
        if (s == CLIS_OK)
            std::cout << "wrote " << json_field(cfg.get(), "output_dir") << "/" << json_field(cfg.get(), "name")
                      << "/reports/ablation.csv\n";
    } else if (sweep->parsed()) {
        s = clis_sweep(cfg.get(), parameter.c_str(), values.data(), values.size(), resume, print_line, nullptr);
        if (s == CLIS_OK)
            std::cout << "wrote " << json_field(cfg.get(), "output_dir") << "/" << json_field(cfg.get(), "name")
                      << "/sweep_" << parameter << "/reports/sweep_" << parameter << ".csv\n";
    }
    return s == CLIS_OK ? 0 : fail(s);
}
