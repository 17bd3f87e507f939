/* Exercises the C interface from plain C. */
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "clis/clis.h"

static int failures = 0;

#define EXPECT(cond)                                                  \
    do {                                                              \
        if (!(cond)) {                                                \
            fprintf(stderr, "%s:%d: expected %s\n", __FILE__, __LINE__, #cond); \
            ++failures;                                               \
        }                                                             \
    } while (0)

static void quiet(const char* line, void* user) {
    (void)line;
    ++*(int*)user;
}

static const char* kTiny[] = {
    "data.num_categories=6",  "data.max_images_per_category=40", "data.num_detection_images=60",
    "data.weak_multiplier=1", "data.num_val_images=6",           "data.group_scale=0.2",
    "model.backbone_channels=[4,8,8,8]", "model.hidden=16",      "model.embed_dim=8",
    "model.pool_size=3",      "baseline_iterations=2",           "train.iterations=2",
    "train.weak_per_detection=2", "train.batch_detection=1",    "train.mosaic_size=64",
};

int main(int argc, char** argv) {
    const char* scratch = argc > 1 ? argv[1] : "capi_scratch";
    char data[512], run[512], ckpt[512], reports[512], report[512], png[512];
    snprintf(data, sizeof data, "%s/data", scratch);
    snprintf(run, sizeof run, "%s/baseline", scratch);
    snprintf(ckpt, sizeof ckpt, "%s/baseline/checkpoints", scratch);
    snprintf(reports, sizeof reports, "%s/reports", scratch);
    snprintf(report, sizeof report, "%s/regiongen_report.json", scratch);
    snprintf(png, sizeof png, "%s/data/images/0.png", scratch);

    clis_config* cfg = NULL;
    EXPECT(clis_config_preset("desk", &cfg) == CLIS_OK);
    EXPECT(clis_config_preset("nonsense", &cfg) == CLIS_ERR_INVALID_ARGUMENT);
    EXPECT(strlen(clis_last_error()) > 0);
    EXPECT(clis_config_preset(NULL, &cfg) == CLIS_ERR_INVALID_ARGUMENT);

    EXPECT(clis_config_set(cfg, "train.alpha=0.2") == CLIS_OK);
    EXPECT(clis_config_set(cfg, "train.alpha=\"high\"") == CLIS_ERR_INVALID_ARGUMENT);
    char* json = NULL;
    EXPECT(clis_config_to_json(cfg, &json) == CLIS_OK);
    EXPECT(json && strstr(json, "\"alpha\": 0.2") != NULL);
    clis_string_free(json);
    EXPECT(strcmp(clis_status_name(CLIS_ERR_IO), "io error") == 0);

    for (size_t i = 0; i < sizeof kTiny / sizeof kTiny[0]; ++i) EXPECT(clis_config_set(cfg, kTiny[i]) == CLIS_OK);

    int lines = 0;
    EXPECT(clis_generate(cfg, data, 0, quiet, &lines) == CLIS_OK);
    EXPECT(clis_train(cfg, data, run, 1, 0, quiet, &lines) == CLIS_OK);
    double rate = -1;
    EXPECT(clis_regiongen(ckpt, data, report, &rate, quiet, &lines) == CLIS_OK);
    EXPECT(rate >= 0 && rate <= 1);
    clis_ap_summary ap;
    EXPECT(clis_eval(ckpt, data, reports, "baseline", &ap, NULL, NULL) == CLIS_OK);
    EXPECT(ap.ap >= 0 && ap.ap <= 100);
    EXPECT(lines > 0);

    clis_detector* det = NULL;
    EXPECT(clis_detector_load("/nonexistent/checkpoint", &det) == CLIS_ERR_IO);
    EXPECT(clis_detector_load(ckpt, &det) == CLIS_OK);
    size_t count = 0;
    clis_detection out[300];
    EXPECT(clis_detector_infer_png(det, png, out, 300, &count) == CLIS_OK);
    EXPECT(count <= 300);
    for (size_t i = 0; i < count && i < 300; ++i) EXPECT(out[i].score > 1e-4);
    EXPECT(clis_detector_infer_png(det, png, NULL, 0, &count) == CLIS_OK);
    clis_detector_free(det);
    clis_config_free(cfg);

    if (failures) fprintf(stderr, "%d check(s) failed\n", failures);
    return failures ? 1 : 0;
}
