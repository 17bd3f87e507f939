#include "clis/harness.hpp"

#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace clis {

namespace fs = std::filesystem;

namespace {

void say(const LogFn& log, const std::string& msg) {
    if (log) log(msg);
}

nlohmann::json number(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

std::string fmt(double v, int precision = 2) {
    if (!std::isfinite(v)) return "NaN";
    std::ostringstream os;
    os << std::fixed << std::setprecision(precision) << v;
    return os.str();
}

template <typename F>
auto run_stage(const std::string& stage, const fs::path& artifacts, F&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const Error& e) {
        throw Error(e.code(), "stage '" + stage + "' failed [" + artifacts.string() + "]: " + e.what());
    } catch (const std::exception& e) {
        throw Error(ErrorCode::kStage, "stage '" + stage + "' failed [" + artifacts.string() + "]: " + e.what());
    }
}

nlohmann::json read_json(const fs::path& p) {
    std::ifstream is(p);
    if (!is) throw io_error("cannot read " + p.string());
    try {
        return nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw io_error("malformed " + p.string() + ": " + e.what());
    }
}

void write_json(const fs::path& p, const nlohmann::json& j) {
    std::ofstream os(p);
    if (!os) throw io_error("cannot write " + p.string());
    os << j.dump(1) << "\n";
}

nlohmann::json summary_json(const TrainSummary& s) {
    return {{"status", s.status},
            {"steps", s.steps},
            {"mean_step_seconds", s.mean_step_seconds},
            {"checkpoint_hash", s.checkpoint_hash},
            {"message", s.message}};
}

TrainSummary summary_from(const nlohmann::json& j) {
    return {j.at("status").get<std::string>(), j.at("steps").get<int>(), j.at("mean_step_seconds").get<double>(),
            j.at("checkpoint_hash").get<std::string>(), j.at("message").get<std::string>()};
}

nlohmann::json headline(const APReport& r) {
    return {{"AP", number(r.AP)}, {"AP_r", number(r.AP_r)}, {"AP_c", number(r.AP_c)}, {"AP_f", number(r.AP_f)}};
}

APReport nan_report() {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    APReport r;
    r.AP = r.AP_r = r.AP_c = r.AP_f = nan;
    return r;
}

constexpr AblationSwitches kAllOff{false, false, false, false};

std::string slug(const std::string& label) {
    std::string s;
    for (char c : label) {
        if (std::isalnum(static_cast<unsigned char>(c))) s += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        else if (!s.empty() && s.back() != '_') s += '_';
    }
    while (!s.empty() && s.back() == '_') s.pop_back();
    return s;
}

}  // namespace

Benchmark stage_generate(const BenchmarkConfig& config, const fs::path& dir, bool resume, const LogFn& log) {
    if (resume && fs::exists(dir / "benchmark.json")) {
        say(log, "generate: reusing " + dir.string());
        return read_benchmark(dir);
    }
    say(log, "generate: writing benchmark to " + dir.string());
    write_benchmark(dir, generate_longtail_benchmark(config));
    // Always hand back what is on disk so fresh and resumed runs see identical data.
    return read_benchmark(dir);
}

TrainSummary stage_train(const ExperimentConfig& config, const Benchmark& data, const AblationSwitches& switches,
                         int iterations, const fs::path& run_dir, bool resume, const LogFn& log) {
    const fs::path summary_path = run_dir / "summary.json";
    if (resume && fs::exists(summary_path)) {
        TrainSummary s = summary_from(read_json(summary_path));
        if (s.status == "nan" || fs::exists(run_dir / "checkpoints" / "model.bin")) {
            say(log, "train: reusing " + run_dir.string());
            return s;
        }
    }
    fs::create_directories(run_dir / "checkpoints");
    ExperimentConfig run = config;
    run.switches = switches;
    run.train.iterations = iterations;
    save_config(run_dir / "config.json", run);
    std::ofstream metrics(run_dir / "metrics.jsonl", std::ios::trunc);
    if (!metrics) throw io_error("cannot write " + (run_dir / "metrics.jsonl").string());
    TrainOptions opts;
    opts.metrics = &metrics;
    if (log) {
        const int every = std::max(1, iterations / 10);
        opts.on_step = [&](const StepRecord& r) {
            if (r.step % every == 0 || r.step + 1 == iterations)
                log("train " + run_dir.filename().string() + " step " + std::to_string(r.step) + " total " +
                    fmt(r.losses.total, 4) + " lr " + fmt(r.lr, 5));
        };
    }
    TrainSummary s;
    try {
        TrainResult res = train(run.train, run.model, data, switches, run.seed, opts);
        save_checkpoint(run_dir / "checkpoints", res.params);
        s = {"ok", static_cast<int>(res.records.size()), res.mean_step_seconds,
             checkpoint_hash(run_dir / "checkpoints"), ""};
    } catch (const Error& e) {
        if (e.code() != ErrorCode::kNumerical) throw;
        say(log, std::string("train: diverged: ") + e.what());
        s = {"nan", 0, 0.0, "", e.what()};
    }
    write_json(summary_path, summary_json(s));
    return s;
}

RegionReport stage_regiongen(const fs::path& checkpoint_dir, const fs::path& data_dir, Benchmark& data,
                             const fs::path& report_path, bool resume, const LogFn& log) {
    if (resume && fs::exists(report_path)) {
        say(log, "regiongen: reusing " + report_path.string());
        const auto j = read_json(report_path);
        data = read_benchmark(data_dir);
        return {j.at("total").get<int>(), j.at("fallbacks").get<int>(), j.at("fallback_rate").get<double>()};
    }
    const DetectorParams baseline = load_checkpoint(checkpoint_dir);
    say(log, "regiongen: " + std::to_string(data.weak.size()) + " weak images");
    const RegionReport rep = generate_predefined_regions(baseline, data.weak);
    write_weak_annotations(data_dir, data.weak);
    fs::create_directories(report_path.parent_path());
    write_region_report(report_path, rep, checkpoint_hash(checkpoint_dir));
    data = read_benchmark(data_dir);
    return rep;
}

APReport stage_eval(const fs::path& checkpoint_dir, const Benchmark& data, const fs::path& reports_dir,
                    const std::string& tag, bool resume, const LogFn& log) {
    const fs::path json_path = reports_dir / (tag + "_ap.json");
    if (resume && fs::exists(json_path)) {
        say(log, "eval: reusing " + json_path.string());
        return read_ap_report(json_path);
    }
    fs::create_directories(reports_dir);
    const DetectorParams params = load_checkpoint(checkpoint_dir);
    std::vector<Detection> dets;
    for (const auto& img : data.val) {
        auto d = infer(params, img.pixels, img.image_id);
        dets.insert(dets.end(), d.begin(), d.end());
    }
    write_detections(reports_dir / (tag + "_detections.json"), dets);
    const APReport rep = evaluate_ap(dets, data.val, data.groups);
    write_ap_report(json_path, reports_dir / (tag + "_ap.csv"), rep);
    say(log, "eval " + tag + ": AP " + fmt(rep.AP) + " AP_r " + fmt(rep.AP_r) + " AP_c " + fmt(rep.AP_c) + " AP_f " +
                 fmt(rep.AP_f));
    return rep;
}

namespace {

struct SeedContext {
    fs::path root;
    Benchmark data;
    TrainSummary baseline;
    RegionReport regions;
};

/// Data, all-off baseline and predefined regions for one seed.
SeedContext prepare_seed(const ExperimentConfig& config, const fs::path& root, const PipelineOptions& o) {
    SeedContext ctx;
    ctx.root = root;
    fs::create_directories(root / "reports");
    BenchmarkConfig bc = config.data;
    bc.seed = config.seed;
    ctx.data = run_stage("generate", root / "data", [&] { return stage_generate(bc, root / "data", o.resume, o.log); });
    ctx.baseline = run_stage("baseline", root / "baseline", [&] {
        return stage_train(config, ctx.data, kAllOff, config.baseline_iterations, root / "baseline", o.resume, o.log);
    });
    if (ctx.baseline.status != "ok")
        throw Error(ErrorCode::kStage, "stage 'baseline' diverged [" + (root / "baseline").string() + "]: " +
                                           ctx.baseline.message);
    ctx.regions = run_stage("regiongen", root / "data", [&] {
        return stage_regiongen(root / "baseline" / "checkpoints", root / "data", ctx.data,
                               root / "reports" / "regiongen_report.json", o.resume, o.log);
    });
    return ctx;
}

}  // namespace

PipelineResult run_pipeline(const ExperimentConfig& config, const PipelineOptions& o) {
    validate(config);
    const fs::path root = fs::path(config.output_dir) / config.name;
    fs::create_directories(root);
    save_config(root / "config.json", config);
    SeedContext ctx = prepare_seed(config, root, o);

    PipelineResult r;
    r.dir = root;
    r.baseline_train = ctx.baseline;
    r.baseline_hash = ctx.baseline.checkpoint_hash;
    r.regions = ctx.regions;
    r.clis_train = run_stage("train", root / "clis", [&] {
        return stage_train(config, ctx.data, config.switches, config.train.iterations, root / "clis", o.resume, o.log);
    });
    if (r.clis_train.status != "ok")
        throw Error(ErrorCode::kNumerical,
                    "stage 'train' diverged [" + (root / "clis").string() + "]: " + r.clis_train.message);
    r.baseline = run_stage("eval", root / "reports", [&] {
        return stage_eval(root / "baseline" / "checkpoints", ctx.data, root / "reports", "baseline", o.resume, o.log);
    });
    r.clis = run_stage("eval", root / "reports", [&] {
        return stage_eval(root / "clis" / "checkpoints", ctx.data, root / "reports", "clis", o.resume, o.log);
    });
    say(o.log, write_comparison_report(root));
    return r;
}

std::string write_comparison_report(const fs::path& run_dir) {
    const fs::path reports = run_dir / "reports";
    const APReport base = read_ap_report(reports / "baseline_ap.json");
    const APReport clis = read_ap_report(reports / "clis_ap.json");
    const auto base_summary = read_json(run_dir / "baseline" / "summary.json");
    const auto clis_summary = read_json(run_dir / "clis" / "summary.json");
    const auto regions = read_json(reports / "regiongen_report.json");
    nlohmann::json j = {{"baseline", headline(base)},
                        {"clis", headline(clis)},
                        {"delta",
                         {{"AP", number(clis.AP - base.AP)},
                          {"AP_r", number(clis.AP_r - base.AP_r)},
                          {"AP_c", number(clis.AP_c - base.AP_c)},
                          {"AP_f", number(clis.AP_f - base.AP_f)}}},
                        {"baseline_checkpoint_hash", base_summary.at("checkpoint_hash")},
                        {"regiongen_checkpoint_hash", regions.at("checkpoint_hash")},
                        {"regiongen_fallback_rate", regions.at("fallback_rate")},
                        {"step_time_ratio", base_summary.at("mean_step_seconds").get<double>() > 0
                                                ? number(clis_summary.at("mean_step_seconds").get<double>() /
                                                         base_summary.at("mean_step_seconds").get<double>())
                                                : nlohmann::json(nullptr)}};
    write_json(reports / "comparison.json", j);
    std::ofstream csv(reports / "comparison.csv");
    if (!csv) throw io_error("cannot write comparison.csv");
    csv << "model,AP,AP_r,AP_c,AP_f\n";
    csv << "baseline," << fmt(base.AP) << ',' << fmt(base.AP_r) << ',' << fmt(base.AP_c) << ',' << fmt(base.AP_f) << "\n";
    csv << "CLIS," << fmt(clis.AP) << ',' << fmt(clis.AP_r) << ',' << fmt(clis.AP_c) << ',' << fmt(clis.AP_f) << "\n";
    csv << "delta," << fmt(clis.AP - base.AP) << ',' << fmt(clis.AP_r - base.AP_r) << ',' << fmt(clis.AP_c - base.AP_c)
        << ',' << fmt(clis.AP_f - base.AP_f) << "\n";

    std::ostringstream os;
    os << std::left << std::setw(10) << "model" << std::setw(8) << "AP" << std::setw(8) << "AP_r" << std::setw(8)
       << "AP_c" << std::setw(8) << "AP_f" << "\n";
    auto row = [&](const std::string& name, double a, double r, double c, double f) {
        os << std::setw(10) << name << std::setw(8) << fmt(a) << std::setw(8) << fmt(r) << std::setw(8) << fmt(c)
           << std::setw(8) << fmt(f) << "\n";
    };
    row("baseline", base.AP, base.AP_r, base.AP_c, base.AP_f);
    row("CLIS", clis.AP, clis.AP_r, clis.AP_c, clis.AP_f);
    row("delta", clis.AP - base.AP, clis.AP_r - base.AP_r, clis.AP_c - base.AP_c, clis.AP_f - base.AP_f);
    os << "baseline checkpoint " << base_summary.at("checkpoint_hash").get<std::string>() << " (regiongen used "
       << regions.at("checkpoint_hash").get<std::string>() << ")\n";
    return os.str();
}

AblationResult run_ablation(const ExperimentConfig& config, const std::vector<std::uint64_t>& seeds,
                            const PipelineOptions& o) {
    validate(config);
    if (seeds.empty()) throw invalid_argument("ablate: no seeds given");
    const fs::path root = fs::path(config.output_dir) / config.name;
    fs::create_directories(root / "reports");
    save_config(root / "config.json", config);
    const auto rows = ablation_rows();
    AblationResult res;
    res.seeds = seeds;
    for (const auto& [label, sw] : rows) res.labels.push_back(label);
    res.reports.assign(rows.size(), {});
    res.status.assign(rows.size(), {});

    for (std::uint64_t seed : seeds) {
        ExperimentConfig sc = config;
        sc.seed = seed;
        const fs::path sroot = root / ("seed_" + std::to_string(seed));
        SeedContext ctx = prepare_seed(sc, sroot, o);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const auto& [label, sw] = rows[i];
            fs::path run_dir = sroot / slug(label);
            TrainSummary ts;
            if (sw == kAllOff && sc.baseline_iterations == sc.train.iterations) {
                // Same switches, seed and schedule as the baseline: that checkpoint is this row.
                run_dir = sroot / "baseline";
                ts = ctx.baseline;
            } else {
                ts = run_stage("train", run_dir, [&] {
                    return stage_train(sc, ctx.data, sw, sc.train.iterations, run_dir, o.resume, o.log);
                });
            }
            APReport rep = nan_report();
            if (ts.status == "ok")
                rep = run_stage("eval", sroot / "reports", [&] {
                    return stage_eval(run_dir / "checkpoints", ctx.data, sroot / "reports", slug(label), o.resume, o.log);
                });
            res.reports[i].push_back(rep);
            res.status[i].push_back(ts.status);
        }
    }

    auto mean = [&](std::size_t row, double APReport::*field) {
        double s = 0;
        for (const auto& r : res.reports[row]) s += r.*field;
        return s / static_cast<double>(res.reports[row].size());
    };
    nlohmann::json j = {{"seeds", seeds}, {"rows", nlohmann::json::array()}};
    std::ofstream csv(root / "reports" / "ablation.csv");
    if (!csv) throw io_error("cannot write ablation.csv");
    csv << "config,seed,AP,AP_r,AP_c,AP_f,status\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
        nlohmann::json per_seed = nlohmann::json::array();
        for (std::size_t k = 0; k < seeds.size(); ++k) {
            const APReport& r = res.reports[i][k];
            per_seed.push_back({{"seed", seeds[k]}, {"status", res.status[i][k]}, {"report", headline(r)}});
            csv << res.labels[i] << ',' << seeds[k] << ',' << fmt(r.AP) << ',' << fmt(r.AP_r) << ',' << fmt(r.AP_c)
                << ',' << fmt(r.AP_f) << ',' << res.status[i][k] << "\n";
        }
        const double mAP = mean(i, &APReport::AP), mr = mean(i, &APReport::AP_r), mc = mean(i, &APReport::AP_c),
                     mf = mean(i, &APReport::AP_f);
        csv << res.labels[i] << ",mean," << fmt(mAP) << ',' << fmt(mr) << ',' << fmt(mc) << ',' << fmt(mf) << ",\n";
        j["rows"].push_back({{"config", res.labels[i]},
                             {"per_seed", per_seed},
                             {"mean", {{"AP", number(mAP)}, {"AP_r", number(mr)}, {"AP_c", number(mc)}, {"AP_f", number(mf)}}}});
    }
    // Row order: 0 CLIS, 1 w/o TSS, 2 w/o SS, 3 w/o CLR, 4 w/o ILS, 5 w/o TSS + ILS.
    const double clis_r = mean(0, &APReport::AP_r);
    j["direction"] = {{"AP_r CLIS - w/o ILS", number(clis_r - mean(4, &APReport::AP_r))},
                      {"AP CLIS - w/o ILS", number(mean(0, &APReport::AP) - mean(4, &APReport::AP))},
                      {"AP_r CLIS >= w/o CLR", clis_r >= mean(3, &APReport::AP_r)},
                      {"AP_r CLIS >= w/o SS", clis_r >= mean(2, &APReport::AP_r)},
                      {"AP CLIS - w/o TSS", number(mean(0, &APReport::AP) - mean(1, &APReport::AP))}};
    write_json(root / "reports" / "ablation.json", j);
    return res;
}

std::vector<SweepRow> run_sweep(const ExperimentConfig& config, const std::string& parameter,
                                const std::vector<double>& values, const PipelineOptions& o) {
    validate(config);
    if (values.empty()) throw invalid_argument("sweep: no values given");
    auto apply = [&](ExperimentConfig& c, double v) {
        auto as_int = [&] {
            if (v < 0 || v != std::floor(v)) throw invalid_argument("sweep: " + parameter + " needs non-negative integers");
            return static_cast<int>(v);
        };
        if (parameter == "alpha") c.train.alpha = v;
        else if (parameter == "beta") c.train.beta = v;
        else if (parameter == "s") {
            c.train.weak_per_detection = as_int();
            c.train.picked_per_detection = std::min(c.train.picked_per_detection, c.train.weak_per_detection);
        } else if (parameter == "t") c.train.picked_per_detection = as_int();
        else if (parameter == "data_fraction") c.train.data_fraction = v;
        else throw invalid_argument("sweep: unknown parameter '" + parameter + "' (alpha, beta, s, t, data_fraction)");
        validate(c);
    };
    for (double v : values) {
        ExperimentConfig probe = config;
        apply(probe, v);
    }

    const fs::path root = fs::path(config.output_dir) / config.name / ("sweep_" + parameter);
    fs::create_directories(root / "reports");
    save_config(root / "config.json", config);
    SeedContext ctx = prepare_seed(config, root, o);

    std::vector<SweepRow> rows;
    for (double v : values) {
        ExperimentConfig c = config;
        apply(c, v);
        std::ostringstream name;
        name << parameter << "_" << v;
        const fs::path run_dir = root / "points" / name.str();
        const TrainSummary ts = run_stage("train", run_dir, [&] {
            return stage_train(c, ctx.data, c.switches, c.train.iterations, run_dir, o.resume, o.log);
        });
        SweepRow row;
        row.value = v;
        row.status = ts.status;
        row.report = nan_report();
        if (ts.status == "ok") {
            row.report = run_stage("eval", root / "reports", [&] {
                return stage_eval(run_dir / "checkpoints", ctx.data, root / "reports", name.str(), o.resume, o.log);
            });
            row.mean_step_seconds = ts.mean_step_seconds;
            row.step_time_ratio =
                ctx.baseline.mean_step_seconds > 0 ? ts.mean_step_seconds / ctx.baseline.mean_step_seconds : 0.0;
        } else {
            row.mean_step_seconds = row.step_time_ratio = std::numeric_limits<double>::quiet_NaN();
        }
        rows.push_back(row);
    }

    std::ofstream csv(root / "reports" / ("sweep_" + parameter + ".csv"));
    if (!csv) throw io_error("cannot write sweep csv");
    csv << parameter << ",AP,AP_r,AP_c,AP_f,mean_step_seconds,step_time_ratio,status\n";
    nlohmann::json j = {{"parameter", parameter},
                        {"baseline_mean_step_seconds", ctx.baseline.mean_step_seconds},
                        {"rows", nlohmann::json::array()}};
    for (const auto& r : rows) {
        csv << r.value << ',' << fmt(r.report.AP) << ',' << fmt(r.report.AP_r) << ',' << fmt(r.report.AP_c) << ','
            << fmt(r.report.AP_f) << ',' << fmt(r.mean_step_seconds, 4) << ',' << fmt(r.step_time_ratio, 3) << ','
            << r.status << "\n";
        j["rows"].push_back({{"value", r.value},
                             {"status", r.status},
                             {"report", headline(r.report)},
                             {"mean_step_seconds", number(r.mean_step_seconds)},
                             {"step_time_ratio", number(r.step_time_ratio)}});
    }
    write_json(root / "reports" / ("sweep_" + parameter + ".json"), j);
    return rows;
}

}  // namespace clis
