#ifndef SEPSPLIT_H
#define SEPSPLIT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes. Validation and numerical failures match the CLI exit codes.
 */
typedef enum SepsplitStatus {
  SepsplitStatus_Ok = 0,
  SepsplitStatus_ErrValidation = 2,
  SepsplitStatus_ErrNumerical = 3,
  SepsplitStatus_ErrNullPointer = 4,
  SepsplitStatus_ErrPanic = 5,
} SepsplitStatus;

/**
 * Opaque model handle.
 */
typedef struct SepsplitModel SepsplitModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Parses a model from JSON text.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer. The
 * handle written to `out` must be released with `sepsplit_model_free`.
 */
enum SepsplitStatus sepsplit_model_from_json(const char *json, struct SepsplitModel **out);

/**
 * # Safety
 * `m` must be null or a handle from `sepsplit_model_from_json` not yet freed.
 */
void sepsplit_model_free(struct SepsplitModel *m);

/**
 * Regime, hypotheses, separatrix and constants as a JSON string. `bits`
 * 0 selects the default precision.
 *
 * # Safety
 * `m` must be a live handle and `out_json` a valid pointer; the string must
 * be released with `sepsplit_string_free`.
 */
enum SepsplitStatus sepsplit_analyze(const struct SepsplitModel *m, uint32_t bits, char **out_json);

/**
 * Melnikov coefficient M^[k](ε).
 *
 * # Safety
 * `m` must be a live handle; out-pointers may be null.
 */
enum SepsplitStatus sepsplit_melnikov_coefficient(const struct SepsplitModel *m,
                                                  int64_t k,
                                                  double eps,
                                                  uint32_t bits,
                                                  double *out_re,
                                                  double *out_im,
                                                  double *out_err);

/**
 * Predicted lobe area from the regime's formula with the Melnikov constant.
 *
 * # Safety
 * `m` must be a live handle; `out_area` may be null.
 */
enum SepsplitStatus sepsplit_predict_area(const struct SepsplitModel *m,
                                          double eps,
                                          uint32_t bits,
                                          double *out_area);

/**
 * Direct lobe-area measurement. `bits` 0 uses the precision schedule.
 *
 * # Safety
 * `m` must be a live handle; out-pointers may be null.
 */
enum SepsplitStatus sepsplit_measure(const struct SepsplitModel *m,
                                     double eps,
                                     double tau0,
                                     uint32_t bits,
                                     double *out_area,
                                     double *out_est_error);

/**
 * Message of the last failure on this thread, or null. Free with
 * `sepsplit_string_free`.
 */
char *sepsplit_last_error_message(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library, not yet freed.
 */
void sepsplit_string_free(char *s);

/**
 * Library version as a static string.
 */
const char *sepsplit_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEPSPLIT_H */
