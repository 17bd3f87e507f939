#include "clis/clis.h"

#include <cstring>
#include <string>

#include "clis/harness.hpp"

struct clis_config {
    clis::ExperimentConfig value;
};

struct clis_detector {
    clis::DetectorParams params;
};

namespace {

thread_local std::string g_last_error;

clis_status to_status(clis::ErrorCode c) { return static_cast<clis_status>(static_cast<int>(c)); }

template <typename F>
clis_status guarded(F&& fn) {
    try {
        fn();
        g_last_error.clear();
        return CLIS_OK;
    } catch (const clis::Error& e) {
        g_last_error = e.what();
        return to_status(e.code());
    } catch (const std::bad_alloc&) {
        g_last_error = "out of memory";
        return CLIS_ERR_INTERNAL;
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return CLIS_ERR_INTERNAL;
    }
}

void require(const void* p, const char* what) {
    if (!p) throw clis::invalid_argument(std::string(what) + " must not be NULL");
}

clis::LogFn logger(clis_log_fn fn, void* user) {
    if (!fn) return {};
    return [fn, user](const std::string& line) { fn(line.c_str(), user); };
}

char* dup(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (!out) throw std::bad_alloc();
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

clis_ap_summary summary(const clis::APReport& r) { return {r.AP, r.AP_r, r.AP_c, r.AP_f}; }

}  // namespace

extern "C" {

const char* clis_last_error(void) { return g_last_error.c_str(); }

const char* clis_status_name(clis_status status) {
    switch (status) {
        case CLIS_OK: return "ok";
        case CLIS_ERR_INVALID_ARGUMENT: return "invalid argument";
        case CLIS_ERR_IO: return "io error";
        case CLIS_ERR_NUMERICAL: return "numerical error";
        case CLIS_ERR_UNPLACEABLE: return "unplaceable";
        case CLIS_ERR_STAGE: return "stage failure";
        case CLIS_ERR_INTERNAL: return "internal error";
    }
    return "unknown";
}

clis_status clis_config_preset(const char* name, clis_config** out) {
    return guarded([&] {
        require(name, "name");
        require(out, "out");
        *out = new clis_config{clis::preset(name)};
    });
}

clis_status clis_config_load(const char* path, clis_config** out) {
    return guarded([&] {
        require(path, "path");
        require(out, "out");
        *out = new clis_config{clis::load_config(path)};
    });
}

clis_status clis_config_set(clis_config* config, const char* assignment) {
    return guarded([&] {
        require(config, "config");
        require(assignment, "assignment");
        clis::ExperimentConfig next = config->value;
        clis::apply_override(next, assignment);
        config->value = std::move(next);
    });
}

clis_status clis_config_save(const clis_config* config, const char* path) {
    return guarded([&] {
        require(config, "config");
        require(path, "path");
        clis::save_config(path, config->value);
    });
}

clis_status clis_config_to_json(const clis_config* config, char** out_json) {
    return guarded([&] {
        require(config, "config");
        require(out_json, "out_json");
        *out_json = dup(clis::to_json(config->value).dump(1));
    });
}

void clis_config_free(clis_config* config) { delete config; }
void clis_string_free(char* s) { std::free(s); }

clis_status clis_generate(const clis_config* config, const char* data_dir, int resume, clis_log_fn log, void* user) {
    return guarded([&] {
        require(config, "config");
        require(data_dir, "data_dir");
        clis::BenchmarkConfig bc = config->value.data;
        bc.seed = config->value.seed;
        clis::stage_generate(bc, data_dir, resume != 0, logger(log, user));
    });
}

clis_status clis_train(const clis_config* config, const char* data_dir, const char* run_dir, int baseline, int resume,
                       clis_log_fn log, void* user) {
    return guarded([&] {
        require(config, "config");
        require(data_dir, "data_dir");
        require(run_dir, "run_dir");
        const auto& c = config->value;
        clis::validate(c);
        const clis::Benchmark data = clis::read_benchmark(data_dir);
        const clis::AblationSwitches sw = baseline ? clis::AblationSwitches{false, false, false, false} : c.switches;
        const int iters = baseline ? c.baseline_iterations : c.train.iterations;
        const auto s = clis::stage_train(c, data, sw, iters, run_dir, resume != 0, logger(log, user));
        if (s.status != "ok") throw clis::Error(clis::ErrorCode::kNumerical, s.message);
    });
}

clis_status clis_regiongen(const char* checkpoint_dir, const char* data_dir, const char* report_path,
                           double* fallback_rate, clis_log_fn log, void* user) {
    return guarded([&] {
        require(checkpoint_dir, "checkpoint_dir");
        require(data_dir, "data_dir");
        require(report_path, "report_path");
        clis::Benchmark data = clis::read_benchmark(data_dir);
        const auto rep = clis::stage_regiongen(checkpoint_dir, data_dir, data, report_path, false, logger(log, user));
        if (fallback_rate) *fallback_rate = rep.fallback_rate;
    });
}

clis_status clis_eval(const char* checkpoint_dir, const char* data_dir, const char* reports_dir, const char* tag,
                      clis_ap_summary* out, clis_log_fn log, void* user) {
    return guarded([&] {
        require(checkpoint_dir, "checkpoint_dir");
        require(data_dir, "data_dir");
        require(reports_dir, "reports_dir");
        require(tag, "tag");
        const clis::Benchmark data = clis::read_benchmark(data_dir);
        const auto rep = clis::stage_eval(checkpoint_dir, data, reports_dir, tag, false, logger(log, user));
        if (out) *out = summary(rep);
    });
}

clis_status clis_run_pipeline(const clis_config* config, int resume, clis_ap_summary* baseline, clis_ap_summary* clis,
                              clis_log_fn log, void* user) {
    return guarded([&] {
        require(config, "config");
        const auto r = clis::run_pipeline(config->value, {resume != 0, logger(log, user)});
        if (baseline) *baseline = summary(r.baseline);
        if (clis) *clis = summary(r.clis);
    });
}

clis_status clis_ablate(const clis_config* config, const uint64_t* seeds, size_t num_seeds, int resume,
                        clis_log_fn log, void* user) {
    return guarded([&] {
        require(config, "config");
        require(seeds, "seeds");
        clis::run_ablation(config->value, std::vector<std::uint64_t>(seeds, seeds + num_seeds),
                           {resume != 0, logger(log, user)});
    });
}

clis_status clis_sweep(const clis_config* config, const char* parameter, const double* values, size_t num_values,
                       int resume, clis_log_fn log, void* user) {
    return guarded([&] {
        require(config, "config");
        require(parameter, "parameter");
        require(values, "values");
        clis::run_sweep(config->value, parameter, std::vector<double>(values, values + num_values),
                        {resume != 0, logger(log, user)});
    });
}

clis_status clis_report(const char* run_dir, char** out_text) {
    return guarded([&] {
        require(run_dir, "run_dir");
        require(out_text, "out_text");
        *out_text = dup(clis::write_comparison_report(run_dir));
    });
}

clis_status clis_detector_load(const char* checkpoint_dir, clis_detector** out) {
    return guarded([&] {
        require(checkpoint_dir, "checkpoint_dir");
        require(out, "out");
        *out = new clis_detector{clis::load_checkpoint(checkpoint_dir)};
    });
}

clis_status clis_detector_infer_png(const clis_detector* detector, const char* png_path, clis_detection* out,
                                    size_t capacity, size_t* count) {
    return guarded([&] {
        require(detector, "detector");
        require(png_path, "png_path");
        require(count, "count");
        if (capacity > 0) require(out, "out");
        const auto dets = clis::infer(detector->params, clis::read_png(png_path), 0);
        *count = dets.size();
        for (size_t i = 0; i < dets.size() && i < capacity; ++i)
            out[i] = {dets[i].category, dets[i].box.x0(), dets[i].box.y0(), dets[i].box.x1(), dets[i].box.y1(),
                      dets[i].score};
    });
}

void clis_detector_free(clis_detector* detector) { delete detector; }

}  // extern "C"
