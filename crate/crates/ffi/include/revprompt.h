#ifndef REVPROMPT_H
#define REVPROMPT_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RpStatus {
  RP_STATUS_OK = 0,
  RP_STATUS_NULL_POINTER = 1,
  RP_STATUS_INVALID_UTF8 = 2,
  RP_STATUS_INVALID_ARGUMENT = 3,
  RP_STATUS_BACKEND = 4,
  RP_STATUS_IO = 5,
  RP_STATUS_INTERNAL = 6,
} RpStatus;

typedef enum RpVariant {
  /**
   * Average of mean and max.
   */
  RP_VARIANT_GA = 0,
  /**
   * Max only.
   */
  RP_VARIANT_GA_MAX = 1,
  /**
   * Mean only.
   */
  RP_VARIANT_GA_MEAN = 2,
} RpVariant;

/**
 * Opaque engine: a gateway, its templates and the run configuration.
 */
typedef struct RpEngine RpEngine;

typedef struct RpRouge {
  double precision;
  double recall;
  double f1;
} RpRouge;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next call on the same thread.
 */
const char *rp_last_error_message(void);

/**
 * Library version as a static string.
 */
const char *rp_version(void);

/**
 * Creates an engine from a JSON configuration:
 * `{"gateway": {...}, "ga": {...}, "template_file": "..."}`, all optional.
 *
 * # Safety
 * `config_json` must be null or a NUL-terminated string; `out` must be
 * null or valid for writes.
 */
enum RpStatus rp_engine_new(const char *config_json, struct RpEngine **out);

/**
 * # Safety
 * `engine` must be null or a pointer from [`rp_engine_new`] not yet freed.
 */
void rp_engine_free(struct RpEngine *engine);

/**
 * Recovers the prompt behind `answers_json` (a JSON array of strings) with
 * `method` (`1A1S`, `5A1S`, `5A5S`, `GA`, `GAm`, `GAa`). The recovered
 * text is written to `out_text` and must be freed with [`rp_string_free`].
 *
 * # Safety
 * Pointers must be valid as for [`rp_engine_new`]; `engine` must come from
 * it.
 */
enum RpStatus rp_invert(const struct RpEngine *engine,
                        const char *answers_json,
                        const char *method,
                        char **out_text);

/**
 * ROUGE-1 of `candidate` against `reference`.
 *
 * # Safety
 * String arguments must be NUL-terminated; `out` valid for writes.
 */
enum RpStatus rp_rouge1(const char *candidate, const char *reference, struct RpRouge *out);

/**
 * Combined score of `len` per-answer scores in [0, 1].
 *
 * # Safety
 * `scores` must point to `len` readable doubles; `out` valid for writes.
 */
enum RpStatus rp_combined_score(const double *scores,
                                size_t len,
                                enum RpVariant variant,
                                double *out);

/**
 * Cosine similarity of two vectors of length `len`.
 *
 * # Safety
 * `a` and `b` must point to `len` readable doubles; `out` valid for writes.
 */
enum RpStatus rp_cosine_similarity(const double *a, const double *b, size_t len, double *out);

/**
 * # Safety
 * `s` must be null or a string returned by this library, not yet freed.
 */
void rp_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* REVPROMPT_H */
