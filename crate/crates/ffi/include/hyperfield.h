#ifndef HYPERFIELD_H
#define HYPERFIELD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum HfStatus {
  HF_STATUS_OK = 0,
  HF_STATUS_NULL_POINTER = 1,
  HF_STATUS_INVALID_ARGUMENT = 2,
  HF_STATUS_IO = 3,
  HF_STATUS_PARSE = 4,
  HF_STATUS_CONFIG = 5,
  HF_STATUS_NUMERIC = 6,
  HF_STATUS_PANIC = 7,
} HfStatus;

typedef struct HfAbundance HfAbundance;

typedef struct HfCube HfCube;

typedef struct HfEndmembers HfEndmembers;

typedef struct HfModel HfModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *hf_version(void);

/**
 * Message of the last failure on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *hf_last_error(void);

/**
 * Reads an ENVI cube (`.hdr` path or its payload path).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum HfStatus hf_cube_read(const char *path, struct HfCube **out);

/**
 * Builds a reflectance cube from pixel-interleaved data
 * (`rows * cols * bands` values, band fastest).
 *
 * # Safety
 * `wavelengths` must hold `bands` values and `data` `rows * cols * bands`.
 */
enum HfStatus hf_cube_new(size_t rows,
                          size_t cols,
                          size_t bands,
                          const double *wavelengths,
                          const double *data,
                          struct HfCube **out);

/**
 * # Safety
 * `cube` must be a live handle; the out pointers may be NULL.
 */
enum HfStatus hf_cube_dims(const struct HfCube *cube, size_t *rows, size_t *cols, size_t *bands);

/**
 * # Safety
 * `cube` must come from this library and not be used afterwards.
 */
void hf_cube_free(struct HfCube *cube);

/**
 * Reads an endmember CSV (`label,<wavelength>...` header, one row per
 * endmember).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum HfStatus hf_endmembers_read_csv(const char *path, struct HfEndmembers **out);

/**
 * Builds an endmember set from `count` spectra of `bands` values each,
 * stored one after another. Labels are `em1`, `em2`, ...
 *
 * # Safety
 * `wavelengths` must hold `bands` values and `spectra` `count * bands`.
 */
enum HfStatus hf_endmembers_new(size_t count,
                                size_t bands,
                                const double *wavelengths,
                                const double *spectra,
                                struct HfEndmembers **out);

/**
 * # Safety
 * `em` must be a live handle; the out pointers may be NULL.
 */
enum HfStatus hf_endmembers_dims(const struct HfEndmembers *em, size_t *count, size_t *bands);

/**
 * # Safety
 * `em` must come from this library and not be used afterwards.
 */
void hf_endmembers_free(struct HfEndmembers *em);

/**
 * Simplex-constrained abundances of one spectrum; writes `count` values.
 *
 * # Safety
 * `pixel` must hold `bands` values and `abundances` room for `count`.
 */
enum HfStatus hf_unmix_pixel(const struct HfEndmembers *em,
                             const double *pixel,
                             size_t bands,
                             double *abundances,
                             size_t count);

/**
 * Unmixes every pixel of a cube.
 *
 * # Safety
 * `cube` and `em` must be live handles; `out` must be writable.
 */
enum HfStatus hf_unmix_cube(const struct HfCube *cube,
                            const struct HfEndmembers *em,
                            struct HfAbundance **out);

/**
 * # Safety
 * `ab` must be a live handle; the out pointers may be NULL.
 */
enum HfStatus hf_abundance_dims(const struct HfAbundance *ab,
                                size_t *rows,
                                size_t *cols,
                                size_t *count);

/**
 * Copies the pixel-major abundances (`rows * cols * count` values).
 *
 * # Safety
 * `buf` must have room for `len` values.
 */
enum HfStatus hf_abundance_copy(const struct HfAbundance *ab, double *buf, size_t len);

/**
 * # Safety
 * `ab` must come from this library and not be used afterwards.
 */
void hf_abundance_free(struct HfAbundance *ab);

/**
 * Loads a trained model checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum HfStatus hf_model_read(const char *path, struct HfModel **out);

/**
 * # Safety
 * `model` must be a live handle; `dim` must be writable.
 */
enum HfStatus hf_model_input_dim(const struct HfModel *model, size_t *dim);

/**
 * Predicts `rows` feature vectors of width `dim` (row-major) into
 * `predictions`.
 *
 * # Safety
 * `features` must hold `rows * dim` values and `predictions` `rows`.
 */
enum HfStatus hf_model_predict(const struct HfModel *model,
                               const double *features,
                               size_t rows,
                               size_t dim,
                               double *predictions);

/**
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void hf_model_free(struct HfModel *model);

/**
 * Splits `plot_yield` over windows in proportion to their SL pixel counts.
 *
 * # Safety
 * `counts` must hold `n` values and `out` room for `n`.
 */
enum HfStatus hf_allocate_yield(const size_t *counts, size_t n, double plot_yield, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HYPERFIELD_H */
