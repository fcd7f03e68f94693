#ifndef SENSORSIM_H
#define SENSORSIM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum SsStatus {
  SS_STATUS_OK = 0,
  SS_STATUS_NULL_POINTER = 1,
  SS_STATUS_INVALID_ARGUMENT = 2,
  SS_STATUS_INVALID_CONFIG = 3,
  SS_STATUS_IO = 4,
  SS_STATUS_FORMAT = 5,
  SS_STATUS_DIMENSION_MISMATCH = 6,
  SS_STATUS_NUMERIC = 7,
  SS_STATUS_PANIC = 8,
} SsStatus;

// Preprocessing applied before the sensor chain.
typedef enum SsMode {
  SS_MODE_CROP = 0,
  SS_MODE_RESIZE = 1,
} SsMode;

// Opaque sensor configuration.
typedef struct SsConfig SsConfig;

// Opaque embedding set.
typedef struct SsEmbeddings SsEmbeddings;

// Sampling and cutoff frequencies of a configuration.
typedef struct SsFrequencyBudget {
  double f_number;
  double q;
  double gsd_m;
  double nu_optcut_gnd;
  double nu_nyquist_gnd;
  double nu_cutoff_gnd;
  bool oversampled;
} SsFrequencyBudget;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *ss_version(void);

// Length in bytes of the last error message on this thread, excluding the
// terminator; 0 when there is none.
size_t ss_last_error_length(void);

// Copies the last error message into `buf` (NUL-terminated, truncated to
// `len`). Returns the number of bytes written excluding the terminator.
//
// # Safety
// `buf` must point to `len` writable bytes.
size_t ss_last_error_message(char *buf, size_t len);

// Reference RGB configuration with the given focal length and aperture.
//
// # Safety
// `out` must be a valid pointer.
enum SsStatus ss_config_reference(double focal_length_m,
                                  double aperture_diameter_m,
                                  struct SsConfig **out);

// Parses a configuration from JSON text.
//
// # Safety
// `json` must be a NUL-terminated string and `out` a valid pointer.
enum SsStatus ss_config_from_json(const char *json, struct SsConfig **out);

// Sets one scalar parameter by name (e.g. `focal_length_m`).
//
// # Safety
// `config` must be a live handle and `name` a NUL-terminated string.
enum SsStatus ss_config_set(struct SsConfig *config, const char *name, double value);

// # Safety
// `config` must be null or a handle not yet freed.
void ss_config_free(struct SsConfig *config);

// # Safety
// `config` must be a live handle and `out` a valid pointer.
enum SsStatus ss_frequency_budget(const struct SsConfig *config, struct SsFrequencyBudget *out);

// Predicted NIIRS with the bundled GIQE-5 coefficients.
//
// # Safety
// `config` must be a live handle and `out` a valid pointer.
enum SsStatus ss_predict_niirs(const struct SsConfig *config, double *out);

// Simulates one image file and writes the output reflectance as BIMG.
//
// # Safety
// All string arguments must be NUL-terminated; `config` must be live.
enum SsStatus ss_simulate_file(const struct SsConfig *config,
                               const char *image_path,
                               const char *metadata_path,
                               enum SsMode mode,
                               uint64_t seed,
                               const char *out_path);

// Mean-over-bands PSNR of two band-sequential `bands`×`height`×`width`
// arrays. Identical inputs give +inf.
//
// # Safety
// Both arrays must hold `bands*height*width` doubles.
enum SsStatus ss_psnr(const double *reference,
                      const double *test,
                      size_t bands,
                      size_t height,
                      size_t width,
                      double data_range,
                      double *out);

// Mean-over-bands SSIM with the default Gaussian window.
//
// # Safety
// Both arrays must hold `bands*height*width` doubles.
enum SsStatus ss_ssim(const double *reference,
                      const double *test,
                      size_t bands,
                      size_t height,
                      size_t width,
                      double data_range,
                      double *out);

// Reads an EMB1 file.
//
// # Safety
// `path` must be NUL-terminated and `out` valid.
enum SsStatus ss_embeddings_read(const char *path, struct SsEmbeddings **out);

// Builds an embedding set from `count` row-major vectors of length `dim`
// and one label string per row. Ids are the row indices.
//
// # Safety
// `vectors` must hold `count*dim` floats and `labels` `count` strings.
enum SsStatus ss_embeddings_new(const float *vectors,
                                size_t count,
                                size_t dim,
                                const char *const *labels,
                                struct SsEmbeddings **out);

// # Safety
// `emb` must be null or a handle not yet freed.
void ss_embeddings_free(struct SsEmbeddings *emb);

// # Safety
// `emb` must be a live handle.
size_t ss_embeddings_len(const struct SsEmbeddings *emb);

// Mean retrieval AP; probes without a same-class partner are excluded.
//
// # Safety
// `emb` must be a live handle and `out` valid.
enum SsStatus ss_mean_rap(const struct SsEmbeddings *emb, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SENSORSIM_H */
