#ifndef SMOOTHFOLEY_H
#define SMOOTHFOLEY_H

/* Generated by cbindgen from crates/ffi. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. The numeric values match the CLI exit codes where they overlap.
 */
typedef enum SfStatus {
  SF_STATUS_OK = 0,
  SF_STATUS_IO = 1,
  SF_STATUS_CONFIG = 2,
  SF_STATUS_CONTRACT = 3,
  SF_STATUS_MISSING_PREREQUISITE = 4,
  SF_STATUS_NULL_POINTER = 5,
  SF_STATUS_INVALID_UTF8 = 6,
  SF_STATUS_PANIC = 7,
} SfStatus;

typedef struct SfConfig SfConfig;

typedef struct SfPipeline SfPipeline;

typedef struct SfReport SfReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *sf_version(void);

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next failing call on the same thread.
 */
const char *sf_last_error(void);

struct SfConfig *sf_config_default(void);

/**
 * Parse TOML text (NULL means empty) and apply `n_overrides` `key=value` strings.
 *
 * # Safety
 * `toml` must be NULL or a valid C string; `overrides` must point to
 * `n_overrides` valid C strings; `out` must be writable.
 */
enum SfStatus sf_config_from_toml(const char *toml,
                                  const char *const *overrides,
                                  size_t n_overrides,
                                  struct SfConfig **out_config);

/**
 * # Safety
 * `path` must be a valid C string and `out_config` writable.
 */
enum SfStatus sf_config_load(const char *path, struct SfConfig **out_config);

/**
 * Apply one `section.key=value` override in place. On failure the config is unchanged.
 *
 * # Safety
 * `config` must be a live handle and `assignment` a valid C string.
 */
enum SfStatus sf_config_set(struct SfConfig *config, const char *assignment);

/**
 * Write the 16-hex-digit config hash plus NUL into `buf` (needs 17 bytes).
 *
 * # Safety
 * `config` must be a live handle and `buf` writable for `len` bytes.
 */
enum SfStatus sf_config_hash(const struct SfConfig *config, char *buf, size_t len);

/**
 * # Safety
 * `config` must be NULL or a handle not yet freed.
 */
void sf_config_free(struct SfConfig *config);

/**
 * New pipeline over a copy of `config`; NULL if `config` is NULL.
 *
 * # Safety
 * `config` must be NULL or a live handle.
 */
struct SfPipeline *sf_pipeline_new(const struct SfConfig *config);

/**
 * Run one stage by its CLI name, e.g. `"gen-corpus"` or `"train-backbone"`.
 *
 * # Safety
 * `pipeline` must be a live handle and `stage` a valid C string.
 */
enum SfStatus sf_pipeline_run(const struct SfPipeline *pipeline, const char *stage);

/**
 * Run `evaluate` and hand back the report.
 *
 * # Safety
 * `pipeline` must be a live handle and `out_report` writable.
 */
enum SfStatus sf_pipeline_evaluate(const struct SfPipeline *pipeline, struct SfReport **out_report);

/**
 * # Safety
 * `pipeline` must be NULL or a handle not yet freed.
 */
void sf_pipeline_free(struct SfPipeline *pipeline);

/**
 * Load a `report.json` written by `evaluate`.
 *
 * # Safety
 * `path` must be a valid C string and `out_report` writable.
 */
enum SfStatus sf_report_load(const char *path, struct SfReport **out_report);

/**
 * Number of rows; 0 for NULL.
 *
 * # Safety
 * `report` must be NULL or a live handle.
 */
size_t sf_report_len(const struct SfReport *report);

/**
 * Value of `metric`; `SF_STATUS_CONTRACT` if absent.
 *
 * # Safety
 * `report` must be a live handle, `metric` a valid C string, `out_value` writable.
 */
enum SfStatus sf_report_value(const struct SfReport *report, const char *metric, double *out_value);

/**
 * # Safety
 * `report` must be NULL or a handle not yet freed.
 */
void sf_report_free(struct SfReport *report);

/**
 * Fréchet distance between two Gaussians with row-major `dim x dim` covariances.
 *
 * # Safety
 * Means must hold `dim` values and covariances `dim * dim`; `out_value` writable.
 */
enum SfStatus sf_frechet_distance(size_t dim,
                                  const double *mean_a,
                                  const double *cov_a,
                                  const double *mean_b,
                                  const double *cov_b,
                                  double *out_value);

/**
 * `KL(p || q)` over `n` classes, with the library's probability floor.
 *
 * # Safety
 * `p` and `q` must hold `n` values; `out_value` writable.
 */
enum SfStatus sf_kl_divergence(const double *p, const double *q, size_t n, double *out_value);

/**
 * CLIP-score analog in [0, 100] over `n_pairs` row-major `[n_pairs, dim]` embeddings.
 *
 * # Safety
 * `video` and `audio` must each hold `n_pairs * dim` values; `out_value` writable.
 */
enum SfStatus sf_clip_score(const double *video,
                            const double *audio,
                            size_t n_pairs,
                            size_t dim,
                            double *out_value);

/**
 * Onset F1 between two 0/1 masks of `len` frames.
 *
 * # Safety
 * `gt` and `pred` must hold `len` bytes; `out_value` writable.
 */
enum SfStatus sf_onset_f1(const uint8_t *gt,
                          const uint8_t *pred,
                          size_t len,
                          size_t tolerance,
                          double *out_value);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SMOOTHFOLEY_H */
