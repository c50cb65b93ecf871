/* C interface to the GLSTR salient-object detector.
 *
 * Every function returns a glstr_status. On failure the message is available
 * from glstr_last_error() until the next call on the same thread. Strings
 * returned through char** out-parameters are owned by the caller and must be
 * released with glstr_free_string().
 */
#ifndef GLSTR_H
#define GLSTR_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define GLSTR_API __declspec(dllexport)
#else
#define GLSTR_API __attribute__((visibility("default")))
#endif

typedef enum glstr_status {
  GLSTR_OK = 0,
  GLSTR_ERR_INVALID_ARGUMENT = 1, /* bad input value, shape or index */
  GLSTR_ERR_CONFIG = 2,           /* invalid configuration or checkpoint/config mismatch */
  GLSTR_ERR_IO = 3,               /* unreadable or unwritable file */
  GLSTR_ERR_DIVERGED = 4,         /* training produced a non-finite loss */
  GLSTR_ERR_RUNTIME = 5           /* anything else */
} glstr_status;

typedef struct glstr_model glstr_model;

GLSTR_API const char* glstr_version(void);
GLSTR_API const char* glstr_last_error(void);
GLSTR_API void glstr_free_string(char* s);

/* Resolves a preset name ("tiny", "reference"), JSON file path or inline JSON
 * plus dotted overrides given as a JSON object of strings, e.g.
 * {"decoder.density": "2"}. overrides_json may be NULL. */
GLSTR_API glstr_status glstr_config_resolve(const char* source, const char* overrides_json, char** out_json);

/* Trainable decoder scalars for the model section of a resolved config. */
GLSTR_API glstr_status glstr_decoder_parameter_count(const char* config_json, uint64_t* out_count);

/* Model lifetime. A non-empty train.init_checkpoint in the config is applied
   after random initialisation, as in training. */
GLSTR_API glstr_status glstr_model_create(const char* config_json, uint64_t seed, glstr_model** out);
GLSTR_API glstr_status glstr_model_load(const char* checkpoint_path, glstr_model** out);
GLSTR_API glstr_status glstr_model_save(const glstr_model* model, const char* checkpoint_path);
GLSTR_API void glstr_model_free(glstr_model* model);
/* {"model": {...}, "parameters": n, "decoder_parameters": n, "input_size": n, "grid": n} */
GLSTR_API glstr_status glstr_model_info(const glstr_model* model, char** out_json);

/* Evaluation-mode inference on an RGB image of input_size x input_size,
 * interleaved row-major doubles in [0, 1]. out_final receives H*W values;
 * out_sides (may be NULL) receives 12*H*W values, side map (s, j) at
 * offset ((s-1)*4 + (j-1))*H*W. */
GLSTR_API glstr_status glstr_model_predict(const glstr_model* model, const double* rgb, size_t height, size_t width,
                                           double* out_final, double* out_sides);

/* Predicts every image in images_dir (resized to input_size), writes 8-bit
 * maps named <stem>.png into out_dir at the source resolution. Per-image
 * forward time is averaged into *mean_seconds when non-NULL. */
GLSTR_API glstr_status glstr_predict_dir(const glstr_model* model, const char* images_dir, const char* out_dir,
                                         size_t* out_count, double* mean_seconds);

/* Head-averaged attention of `token` (0-based, row-major grid) at `layer`
 * (1-based). out_grid receives grid*grid values summing to 1. When
 * heatmap_path is non-NULL a colourised overlay at image resolution is
 * written there. */
GLSTR_API glstr_status glstr_attention_map(const glstr_model* model, const char* image_path, size_t layer,
                                           size_t token, const char* heatmap_path, double* out_grid,
                                           size_t* out_grid_size);

/* Trains on data_dir/{images,masks}. run_dir receives train_log.jsonl,
 * checkpoints/epoch_XXXX.ckpt and final.ckpt. resume_checkpoint may be NULL.
 * max_steps = 0 runs the whole schedule. The summary JSON holds the loss
 * curve and final checkpoint path. */
GLSTR_API glstr_status glstr_train(const char* config_json, const char* data_dir, const char* run_dir,
                                   const char* resume_checkpoint, uint64_t max_steps, int verbose,
                                   char** out_summary_json);

/* Stem-matched evaluation of 8-bit prediction maps against masks.
 * mode is "adaptive" or "max_sweep"; dataset_name may be NULL. */
GLSTR_API glstr_status glstr_evaluate(const char* pred_dir, const char* gt_dir, const char* mode,
                                      const char* dataset_name, char** out_report_json, char** out_csv);

/* Synthetic shapes dataset. spec_json fields: count, canvas, shape
 * (disk|polygon|blob|mixed), background (flat|gradient|noise|mixed), seed. */
GLSTR_API glstr_status glstr_synth(const char* spec_json, const char* out_dir, char** out_manifest_json);

#ifdef __cplusplus
}
#endif

#endif /* GLSTR_H */
