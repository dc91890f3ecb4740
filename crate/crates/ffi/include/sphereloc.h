#ifndef SPHERELOC_H
#define SPHERELOC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  SL_STATUS_OK = 0,
  SL_STATUS_NULL_POINTER = 1,
  SL_STATUS_INVALID_ARGUMENT = 2,
  SL_STATUS_SHAPE_MISMATCH = 3,
  SL_STATUS_FORMAT = 4,
  SL_STATUS_UNSUPPORTED_VERSION = 5,
  SL_STATUS_CONFIG = 6,
  SL_STATUS_IO = 7,
  SL_STATUS_PANIC = 8,
} SlStatus;

/**
 * Sampling grid with its transform plan.
 */
typedef struct SlGrid SlGrid;

typedef struct SlMap SlMap;

/**
 * Configured pipeline (taper bank, voting rules).
 */
typedef struct SlPipeline SlPipeline;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Static description of a status code.
 */
const char *sl_status_string(SlStatus status);

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length, 0 if none.
 *
 * # Safety
 * `buf` must be writable for `len` bytes or null with `len == 0`.
 */
size_t sl_last_error(char *buf, size_t len);

/**
 * Number of packed coefficients for bandwidth `bandwidth`.
 */
size_t sl_coefficient_count(size_t bandwidth);

/**
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
SlStatus sl_grid_new(size_t bandwidth, SlGrid **out);

/**
 * # Safety
 * `grid` must come from [`sl_grid_new`] and not be used afterwards.
 */
void sl_grid_free(SlGrid *grid);

/**
 * Samples per channel (`4B²`); 0 for a null handle.
 *
 * # Safety
 * `grid` must be null or a live handle.
 */
size_t sl_grid_len(const SlGrid *grid);

/**
 * Forward transform of `4B²` samples into `B(B+1)/2` coefficients.
 *
 * # Safety
 * Array arguments must hold the stated number of elements.
 */
SlStatus sl_sht_forward(const SlGrid *grid,
                        const double *samples,
                        size_t n_samples,
                        double *out_re,
                        double *out_im,
                        size_t n_coeffs);

/**
 * Inverse transform of `B(B+1)/2` coefficients into `4B²` real samples.
 *
 * # Safety
 * Array arguments must hold the stated number of elements.
 */
SlStatus sl_sht_inverse(const SlGrid *grid,
                        const double *re,
                        const double *im,
                        size_t n_coeffs,
                        double *out_samples,
                        size_t n_samples);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid handle slot.
 */
SlStatus sl_map_load(const char *path, SlMap **out);

/**
 * # Safety
 * `map` must come from [`sl_map_load`] and not be used afterwards.
 */
void sl_map_free(SlMap *map);

/**
 * Entry count; 0 for a null handle.
 *
 * # Safety
 * `map` must be null or a live handle.
 */
size_t sl_map_len(const SlMap *map);

/**
 * Exact k nearest entries to `descriptor`, nearest first. Writes entry ids
 * and Euclidean distances; `*out_count` receives min(k, map size).
 *
 * # Safety
 * `descriptor` holds `dim` values; `out_ids` and `out_dist` hold `k`.
 */
SlStatus sl_map_query(const SlMap *map,
                      const double *descriptor,
                      size_t dim,
                      size_t k,
                      uint32_t *out_ids,
                      double *out_dist,
                      size_t *out_count);

/**
 * Builds a pipeline from TOML text; null selects the defaults.
 *
 * # Safety
 * `config_toml` must be null or NUL-terminated; `out` a valid handle slot.
 */
SlStatus sl_pipeline_new(const char *config_toml, SlPipeline **out);

/**
 * # Safety
 * `pipeline` must come from [`sl_pipeline_new`] and not be used afterwards.
 */
void sl_pipeline_free(SlPipeline *pipeline);

/**
 * Grid bandwidth of the pipeline; 0 for a null handle.
 *
 * # Safety
 * `pipeline` must be null or a live handle.
 */
size_t sl_pipeline_bandwidth(const SlPipeline *pipeline);

/**
 * Votes among `n_candidates` feature spheres for the one matching `query`.
 * Each sphere is `3 × 4B²` values. Writes the winning index and, if
 * `out_scores` is non-null, one score per candidate.
 *
 * # Safety
 * `query` holds one sphere, `candidates` holds `n_candidates` spheres and
 * `out_scores` is null or holds `n_candidates` values.
 */
SlStatus sl_vote(const SlPipeline *pipeline,
                 const double *query,
                 const double *candidates,
                 size_t n_candidates,
                 size_t *out_selected,
                 double *out_scores);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPHERELOC_H */
