#ifndef BREIT_LAB_H
#define BREIT_LAB_H

/* Generated by cbindgen from crates/capi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes. Zero is success.
 */
typedef enum BreitStatus {
  BREIT_STATUS_OK = 0,
  BREIT_STATUS_NULL_POINTER = 1,
  BREIT_STATUS_INVALID_UTF8 = 2,
  BREIT_STATUS_INVALID_CONFIG = 3,
  BREIT_STATUS_UNKNOWN_TASK = 4,
  /**
   * The task ran but an error or a failed tolerance was recorded.
   */
  BREIT_STATUS_TASK_FAILED = 5,
  BREIT_STATUS_SERIALIZATION = 6,
  BREIT_STATUS_PANIC = 7,
} BreitStatus;

/**
 * Task selector.
 */
typedef enum BreitTask {
  BREIT_TASK_SPECTRUM = 0,
  BREIT_TASK_PERTURB = 1,
  BREIT_TASK_DYNAMICS = 2,
  BREIT_TASK_VERIFY = 3,
  BREIT_TASK_CONVERGE = 4,
} BreitTask;

/**
 * Validated configuration.
 */
typedef struct BreitConfig BreitConfig;

/**
 * Finished run: results, tolerance outcomes and the serialized record.
 */
typedef struct BreitRecord BreitRecord;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * NUL-terminated message for the last failure on this thread. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *breit_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *breit_version(void);

/**
 * Parse `text` (config file syntax), apply `n_overrides` `key=value`
 * strings and validate.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `overrides` must point to
 * `n_overrides` such strings (or be null when the count is zero); `out`
 * must be writable.
 */
enum BreitStatus breit_config_parse(const char *text,
                                    const char *const *overrides,
                                    size_t n_overrides,
                                    struct BreitConfig **out);

/**
 * Effective configuration rendered in file syntax. Free the string with
 * [`breit_string_free`].
 *
 * # Safety
 * `config` must come from [`breit_config_parse`]; `out` must be writable.
 */
enum BreitStatus breit_config_text(const struct BreitConfig *config, char **out);

/**
 * # Safety
 * `config` must come from [`breit_config_parse`] or be null.
 */
void breit_config_free(struct BreitConfig *config);

/**
 * Run `task`. Companion CSV files are written next to `output_path` when
 * it is non-null; otherwise nothing touches the file system except tasks
 * that always write tables, which then use the current directory.
 *
 * The record is returned in `out` whenever the task was attempted, also
 * when the status is [`BreitStatus::TaskFailed`].
 *
 * # Safety
 * `config` must come from [`breit_config_parse`]; `output_path` must be
 * null or NUL-terminated; `out` must be writable.
 */
enum BreitStatus breit_run(const struct BreitConfig *config,
                           enum BreitTask task,
                           const char *output_path,
                           struct BreitRecord **out);

/**
 * Parse a task name (`spectrum`, `perturb`, ...).
 *
 * # Safety
 * `name` must be NUL-terminated; `out` must be writable.
 */
enum BreitStatus breit_task_from_name(const char *name, enum BreitTask *out);

/**
 * 1 when every tolerance was met, else 0; -1 for a null handle.
 *
 * # Safety
 * `record` must come from [`breit_run`] or be null.
 */
int32_t breit_record_passed(const struct BreitRecord *record);

/**
 * Copy up to `capacity` entries of a numeric array from the results
 * payload (for example `eigenvalues` or `binding_energies`) into `values`,
 * and store the array length in `len`. Pass `capacity = 0` to query the
 * length.
 *
 * # Safety
 * `record` must come from [`breit_run`]; `key` must be NUL-terminated;
 * `values` must have room for `capacity` doubles; `len` must be writable.
 */
enum BreitStatus breit_record_array(const struct BreitRecord *record,
                                    const char *key,
                                    double *values,
                                    size_t capacity,
                                    size_t *len);

/**
 * Borrow the JSON run record. The pointer lives as long as the handle.
 *
 * # Safety
 * `record` must come from [`breit_run`] or be null.
 */
const char *breit_record_json(const struct BreitRecord *record);

/**
 * # Safety
 * `record` must come from [`breit_run`] or be null.
 */
void breit_record_free(struct BreitRecord *record);

/**
 * # Safety
 * `s` must come from this library or be null.
 */
void breit_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BREIT_LAB_H */
