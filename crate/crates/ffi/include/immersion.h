#ifndef IMMERSION_H
#define IMMERSION_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible function.
typedef enum ImmStatus {
  IMM_STATUS_OK = 0,
  IMM_STATUS_NULL_POINTER = 1,
  IMM_STATUS_INVALID_UTF8 = 2,
  IMM_STATUS_INVALID_ARGUMENT = 3,
  IMM_STATUS_JSON = 4,
  IMM_STATUS_DIMENSION_MISMATCH = 5,
  IMM_STATUS_NUMERIC = 6,
  IMM_STATUS_PANIC = 7,
} ImmStatus;

// Opaque handle to a fitted or deserialized reconstruction map.
typedef struct ImmModel ImmModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. The pointer
// stays valid until the next call into this library on the same thread.
const char *imm_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *imm_version(void);

// Releases a string returned by this library. Null is a no-op.
//
// # Safety
// `s` must come from this library and not have been freed already.
void imm_string_free(char *s);

// Parses a model from its JSON form.
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be writable.
enum ImmStatus imm_model_from_json(const char *json, struct ImmModel **out);

// Serializes a model to JSON; free the result with [`imm_string_free`].
//
// # Safety
// `model` must be a live handle; `out` must be writable.
enum ImmStatus imm_model_to_json(const struct ImmModel *model, char **out);

// Releases a model handle. Null is a no-op.
//
// # Safety
// `model` must come from this library and not have been freed already.
void imm_model_free(struct ImmModel *model);

// Ambient dimension `d` and number of layers `m`.
//
// # Safety
// `model` must be a live handle; `d` and `m` must be writable.
enum ImmStatus imm_model_dims(const struct ImmModel *model, size_t *d, size_t *m);

// Writes `G(x)` into `out`; both buffers hold `len` doubles, which must
// equal the model dimension.
//
// # Safety
// `x` must point to `len` readable doubles and `out` to `len` writable ones.
enum ImmStatus imm_model_reconstruct(const struct ImmModel *model,
                                     const double *x,
                                     size_t len,
                                     double *out);

// Mean reconstruction error over `n` row-major points of dimension `d`.
//
// # Safety
// `points` must point to `n * d` readable doubles; `out` must be writable.
enum ImmStatus imm_model_empirical_risk(const struct ImmModel *model,
                                        const double *points,
                                        size_t n,
                                        size_t d,
                                        double *out);

// Fits a model to `n` row-major points of dimension `d`. `spec_json` is a
// model spec; `train_json` is a training config or null for defaults. On
// success `*out` receives a new handle and `*risk` the final empirical risk
// (`risk` may be null).
//
// # Safety
// Pointers must be valid as described; strings NUL-terminated.
enum ImmStatus imm_fit(const double *points,
                       size_t n,
                       size_t d,
                       const char *spec_json,
                       const char *train_json,
                       struct ImmModel **out,
                       double *risk);

// Entropy-integral bound for a class description at sample size `n`,
// returned as a JSON report. `options_json` may be null for defaults.
//
// # Safety
// Strings must be NUL-terminated (or null where allowed); `out` writable.
enum ImmStatus imm_bound_report(const char *class_json,
                                size_t n,
                                const char *options_json,
                                char **out);

// `4·rademacher + D·√(2 log(1/δ)/n)`.
//
// # Safety
// `out` must be writable.
enum ImmStatus imm_theorem2_certificate(double diameter,
                                        size_t n,
                                        double delta_conf,
                                        double rademacher_value,
                                        double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IMMERSION_H */
