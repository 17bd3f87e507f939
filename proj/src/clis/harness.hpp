#pragma once

#include <filesystem>
#include <functional>
#include <string>

#include "clis/config.hpp"
#include "clis/evalkit.hpp"
#include "clis/regiongen.hpp"

namespace clis {

using LogFn = std::function<void(const std::string&)>;

struct PipelineOptions {
    bool resume = false;
    LogFn log;
};

/// Output of one training stage as found on disk.
struct TrainSummary {
    std::string status;  // "ok" or "nan"
    int steps = 0;
    double mean_step_seconds = 0;
    std::string checkpoint_hash;
    std::string message;
};

/// Generates the benchmark into `dir`, or loads it when resuming and it is already there.
Benchmark stage_generate(const BenchmarkConfig& config, const std::filesystem::path& dir, bool resume, const LogFn& log = {});

/// Trains into `run_dir` (metrics.jsonl, checkpoints/, summary.json). A non-finite loss is
/// recorded as status "nan" instead of being thrown.
TrainSummary stage_train(const ExperimentConfig& config, const Benchmark& data, const AblationSwitches& switches,
                         int iterations, const std::filesystem::path& run_dir, bool resume, const LogFn& log = {});

/// Region generation with the checkpoint in `checkpoint_dir`; rewrites the weak annotations in `data_dir`.
RegionReport stage_regiongen(const std::filesystem::path& checkpoint_dir, const std::filesystem::path& data_dir,
                             Benchmark& data, const std::filesystem::path& report_path, bool resume,
                             const LogFn& log = {});

/// Inference over the val split plus AP evaluation; writes detections and the AP report.
APReport stage_eval(const std::filesystem::path& checkpoint_dir, const Benchmark& data,
                    const std::filesystem::path& reports_dir, const std::string& tag, bool resume,
                    const LogFn& log = {});

struct PipelineResult {
    std::filesystem::path dir;
    APReport baseline;
    APReport clis;
    RegionReport regions;
    std::string baseline_hash;
    TrainSummary baseline_train;
    TrainSummary clis_train;
};

/// generate -> baseline -> regiongen -> CLIS -> evaluate both -> comparison report,
/// under <output_dir>/<name>/.
PipelineResult run_pipeline(const ExperimentConfig& config, const PipelineOptions& options = {});

struct AblationResult {
    std::vector<std::string> labels;
    std::vector<std::uint64_t> seeds;
    /// [row][seed]
    std::vector<std::vector<APReport>> reports;
    std::vector<std::vector<std::string>> status;
};

/// The six ablation rows per seed, sharing the generated data, baseline and regions of each seed.
/// Writes reports/ablation.{csv,json} under <output_dir>/<name>/.
AblationResult run_ablation(const ExperimentConfig& config, const std::vector<std::uint64_t>& seeds,
                            const PipelineOptions& options = {});

struct SweepRow {
    double value = 0;
    std::string status;
    APReport report;
    double mean_step_seconds = 0;
    double step_time_ratio = 0;
};

/// One CLIS run per value of alpha, beta, s, t or data_fraction; seeds fixed. Diverged runs become
/// NaN rows. Writes reports/sweep_<parameter>.{csv,json}.
std::vector<SweepRow> run_sweep(const ExperimentConfig& config, const std::string& parameter,
                                const std::vector<double>& values, const PipelineOptions& options = {});

/// Rebuilds reports/comparison.{csv,json} of a finished pipeline directory from its on-disk AP reports.
std::string write_comparison_report(const std::filesystem::path& run_dir);

}  // namespace clis
