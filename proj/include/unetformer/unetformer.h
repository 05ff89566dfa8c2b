#ifndef UNETFORMER_H
#define UNETFORMER_H

/* C interface to the volumetric segmentation library. All configuration
 * crosses the boundary as JSON strings; results come back as malloc-style
 * strings owned by the library and released with uvf_string_free. Every
 * function returns UVF_OK on success; on failure uvf_last_error() holds a
 * thread-local diagnostic. */

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#define UVF_OK 0
#define UVF_ERROR 1      /* runtime failure; see uvf_last_error() */
#define UVF_BAD_ARG 2    /* malformed config or null argument */

const char* uvf_version(void);

/* Thread-local message describing the most recent failure. */
const char* uvf_last_error(void);

void uvf_string_free(char* s);

/* ---- task runners (one per CLI subcommand) ----
 * config_json: task configuration object; NULL or "" means all defaults.
 * report_json (optional out): JSON report string. */
int uvf_run_gradcheck(const char* config_json, char** report_json);
int uvf_run_shapes(const char* config_json, char** report_json);
int uvf_run_params(const char* config_json, char** report_json);
int uvf_run_pretrain(const char* config_json, char** report_json);
int uvf_run_sweep(const char* config_json, char** report_json);
int uvf_run_train(const char* config_json, char** report_json);
int uvf_run_infer(const char* config_json, char** report_json);
int uvf_run_eval(const char* config_json, char** report_json);
int uvf_run_mask_demo(const char* config_json, char** report_json);

/* ---- embedded use: opaque model handle ---- */
typedef struct uvf_model uvf_model;

/* config_json: {"encoder": {...}, "decoder": {...}, "seed": n} */
uvf_model* uvf_model_create(const char* config_json);
void uvf_model_free(uvf_model* m);

int uvf_model_parameter_count(const uvf_model* m, int64_t* out);
int uvf_model_num_classes(const uvf_model* m, int64_t* out);

/* Load a checkpoint file; strict != 0 rejects any unmatched parameter. */
int uvf_model_load_checkpoint(uvf_model* m, const char* path, int strict);

/* Full-volume forward pass. volume: dims[0]*dims[1]*dims[2] doubles, each
 * extent divisible by 32. probs_out: num_classes * voxels doubles, class-major,
 * softmax applied. */
int uvf_model_predict(const uvf_model* m, const double* volume, const int64_t dims[3],
                      double* probs_out);

#ifdef __cplusplus
}
#endif

#endif /* UNETFORMER_H */
