/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef SEGSYNTH_H
#define SEGSYNTH_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SegsynthStatus {
  SEGSYNTH_STATUS_OK = 0,
  SEGSYNTH_STATUS_INVALID_ARGUMENT = 1,
  SEGSYNTH_STATUS_CONFIG = 2,
  SEGSYNTH_STATUS_TRANSPORT = 3,
  SEGSYNTH_STATUS_DATASET = 4,
  SEGSYNTH_STATUS_GENERATION = 5,
  SEGSYNTH_STATUS_IO = 6,
  SEGSYNTH_STATUS_PANIC = 99,
} SegsynthStatus;

typedef struct SegsynthBackend SegsynthBackend;

typedef struct SegsynthConfig SegsynthConfig;

typedef struct SegsynthRunReport SegsynthRunReport;

typedef struct SegsynthRunCounts {
  size_t samples;
  size_t d1_ok;
  size_t d2_ok;
  size_t d2_skipped;
  size_t failed;
  size_t class_failures;
  size_t load_issues;
} SegsynthRunCounts;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or NULL. Valid until the
// next segsynth call on the same thread.
const char *segsynth_last_error(void);

// Library version as a static string.
const char *segsynth_version(void);

// # Safety
// `s` must be NULL or a string returned by this library.
void segsynth_string_free(char *s);

// Default configuration.
struct SegsynthConfig *segsynth_config_new(void);

// Parses TOML configuration text.
//
// # Safety
// `text` must be a NUL-terminated string; `out` must be writable.
enum SegsynthStatus segsynth_config_from_toml(const char *text, struct SegsynthConfig **out);

// Reads a TOML configuration file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum SegsynthStatus segsynth_config_from_file(const char *path, struct SegsynthConfig **out);

// # Safety
// `cfg` must be NULL or a handle from this library, freed at most once.
void segsynth_config_free(struct SegsynthConfig *cfg);

// # Safety
// `cfg` must be a live handle; `path` a NUL-terminated string.
enum SegsynthStatus segsynth_config_set_data_root(struct SegsynthConfig *cfg, const char *path);

// # Safety
// `cfg` must be a live handle; `path` a NUL-terminated string.
enum SegsynthStatus segsynth_config_set_out_root(struct SegsynthConfig *cfg, const char *path);

// `"mock"` or a worker base URL.
//
// # Safety
// `cfg` must be a live handle; `spec` a NUL-terminated string.
enum SegsynthStatus segsynth_config_set_backend(struct SegsynthConfig *cfg, const char *spec);

// # Safety
// `cfg` must be a live handle.
enum SegsynthStatus segsynth_config_set_run_seed(struct SegsynthConfig *cfg, uint64_t seed);

// # Safety
// `cfg` must be a live handle.
enum SegsynthStatus segsynth_config_set_alpha(struct SegsynthConfig *cfg, double alpha);

// # Safety
// `cfg` must be a live handle.
enum SegsynthStatus segsynth_config_set_gen_resolution(struct SegsynthConfig *cfg,
                                                       uint32_t width,
                                                       uint32_t height);

// # Safety
// `cfg` must be a live handle.
enum SegsynthStatus segsynth_config_set_paths(struct SegsynthConfig *cfg, bool d1, bool d2);

// Effective configuration as TOML.
//
// # Safety
// `cfg` must be a live handle; `out` must be writable.
enum SegsynthStatus segsynth_config_to_toml(const struct SegsynthConfig *cfg, char **out);

// `"mock"` or a worker base URL.
//
// # Safety
// `spec` must be a NUL-terminated string; `out` must be writable.
enum SegsynthStatus segsynth_backend_new(const char *spec, struct SegsynthBackend **out);

// # Safety
// `backend` must be NULL or a handle from this library, freed at most once.
void segsynth_backend_free(struct SegsynthBackend *backend);

// Queries the backend's health endpoint; `capability` is one of
// `img2img`, `inpaint`, `caption`, `prior`.
//
// # Safety
// `backend` must be a live handle; `capability` a NUL-terminated string;
// `supported` must be writable.
enum SegsynthStatus segsynth_backend_supports(const struct SegsynthBackend *backend,
                                              const char *capability,
                                              bool *supported);

// Runs the pipeline. `backend` may be NULL to build the one named in the
// configuration. A report is produced even when some samples fail; check
// its counts.
//
// # Safety
// `cfg` must be a live handle; `backend` NULL or a live handle; `out` must
// be writable.
enum SegsynthStatus segsynth_run(const struct SegsynthConfig *cfg,
                                 const struct SegsynthBackend *backend,
                                 struct SegsynthRunReport **out);

// # Safety
// `report` must be a live handle; `out` must be writable.
enum SegsynthStatus segsynth_report_counts(const struct SegsynthRunReport *report,
                                           struct SegsynthRunCounts *out);

// Full report as JSON.
//
// # Safety
// `report` must be a live handle; `out` must be writable.
enum SegsynthStatus segsynth_report_to_json(const struct SegsynthRunReport *report, char **out);

// # Safety
// `report` must be NULL or a handle from this library, freed at most once.
void segsynth_report_free(struct SegsynthRunReport *report);

// Re-checks a finished run; the dataset layout and class map come from
// `cfg`. Writes the number of failing entries to `failures`.
//
// # Safety
// Strings must be NUL-terminated; `cfg` a live handle; `failures` writable.
enum SegsynthStatus segsynth_verify(const char *out_root,
                                    const char *data_root,
                                    const struct SegsynthConfig *cfg,
                                    size_t *failures);

// Pointwise `min(1, alpha * image_prior + label_prior)` over `len` values.
// Inputs are clamped to `[0, 1]` first.
//
// # Safety
// All three buffers must hold `len` floats; `out` may alias neither input.
enum SegsynthStatus segsynth_blend(const float *image_prior,
                                   const float *label_prior,
                                   size_t len,
                                   double alpha,
                                   float *out);

// Pastes each patch onto `base` where its mask is non-zero. Buffers are
// row-major: RGB images `width*height*3` bytes, masks `width*height` bytes.
// Masks must not overlap.
//
// # Safety
// `base` and `out` must hold an RGB image; `patches` and `masks` must each
// point to `count` pointers to buffers of the stated sizes.
enum SegsynthStatus segsynth_composite(const uint8_t *base,
                                       uint32_t width,
                                       uint32_t height,
                                       const uint8_t *const *patches,
                                       const uint8_t *const *masks,
                                       size_t count,
                                       uint8_t *out);

// Builds the class-aware prompt for `caption` (may be NULL) and returns the
// weighted rendering and the plain text. Either output pointer may be NULL.
//
// # Safety
// `class_names` must point to `count` NUL-terminated strings.
enum SegsynthStatus segsynth_prompt_render(const char *caption,
                                           const char *const *class_names,
                                           size_t count,
                                           double weight,
                                           char **weighted_out,
                                           char **plain_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEGSYNTH_H */
