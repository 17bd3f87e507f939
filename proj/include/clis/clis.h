#ifndef CLIS_CLIS_H
#define CLIS_CLIS_H

#include <stddef.h>
#include <stdint.h>

#if defined(CLIS_BUILDING_LIBRARY)
#define CLIS_API __attribute__((visibility("default")))
#else
#define CLIS_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum clis_status {
    CLIS_OK = 0,
    CLIS_ERR_INVALID_ARGUMENT = 1,
    CLIS_ERR_IO = 2,
    CLIS_ERR_NUMERICAL = 3,
    CLIS_ERR_UNPLACEABLE = 4,
    CLIS_ERR_STAGE = 5,
    CLIS_ERR_INTERNAL = 6
} clis_status;

typedef struct clis_config clis_config;
typedef struct clis_detector clis_detector;

typedef struct clis_ap_summary {
    double ap, ap_r, ap_c, ap_f; /* 0..100, NaN when a group has no ground truth */
} clis_ap_summary;

typedef struct clis_detection {
    int category;
    double x0, y0, x1, y1;
    double score;
} clis_detection;

/* Receives progress lines; may be NULL. */
typedef void (*clis_log_fn)(const char* line, void* user);

/* Message of the last failed call on this thread ("" if none). */
CLIS_API const char* clis_last_error(void);
CLIS_API const char* clis_status_name(clis_status status);

/* Configuration. "desk" or "paper-scale" presets; JSON files; key=value overrides. */
CLIS_API clis_status clis_config_preset(const char* name, clis_config** out);
CLIS_API clis_status clis_config_load(const char* path, clis_config** out);
CLIS_API clis_status clis_config_set(clis_config* config, const char* assignment);
CLIS_API clis_status clis_config_save(const clis_config* config, const char* path);
/* Caller frees *out_json with clis_string_free. */
CLIS_API clis_status clis_config_to_json(const clis_config* config, char** out_json);
CLIS_API void clis_config_free(clis_config* config);
CLIS_API void clis_string_free(char* s);

/* Individual stages. */
CLIS_API clis_status clis_generate(const clis_config* config, const char* data_dir, int resume, clis_log_fn log,
                                   void* user);
/* baseline != 0 trains with every switch off; otherwise with the config's switches. */
CLIS_API clis_status clis_train(const clis_config* config, const char* data_dir, const char* run_dir, int baseline,
                                int resume, clis_log_fn log, void* user);
CLIS_API clis_status clis_regiongen(const char* checkpoint_dir, const char* data_dir, const char* report_path,
                                    double* fallback_rate, clis_log_fn log, void* user);
CLIS_API clis_status clis_eval(const char* checkpoint_dir, const char* data_dir, const char* reports_dir,
                               const char* tag, clis_ap_summary* out, clis_log_fn log, void* user);

/* Orchestration under <output_dir>/<name>/. */
CLIS_API clis_status clis_run_pipeline(const clis_config* config, int resume, clis_ap_summary* baseline,
                                       clis_ap_summary* clis, clis_log_fn log, void* user);
CLIS_API clis_status clis_ablate(const clis_config* config, const uint64_t* seeds, size_t num_seeds, int resume,
                                 clis_log_fn log, void* user);
CLIS_API clis_status clis_sweep(const clis_config* config, const char* parameter, const double* values,
                                size_t num_values, int resume, clis_log_fn log, void* user);
/* Caller frees *out_text with clis_string_free. */
CLIS_API clis_status clis_report(const char* run_dir, char** out_text);

/* Trained detector. */
CLIS_API clis_status clis_detector_load(const char* checkpoint_dir, clis_detector** out);
/* Writes up to `capacity` detections, highest score first; *count receives the total available. */
CLIS_API clis_status clis_detector_infer_png(const clis_detector* detector, const char* png_path, clis_detection* out,
                                             size_t capacity, size_t* count);
CLIS_API void clis_detector_free(clis_detector* detector);

#ifdef __cplusplus
}
#endif

#endif
