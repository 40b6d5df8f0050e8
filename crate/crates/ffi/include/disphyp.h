#ifndef DISPHYP_H
#define DISPHYP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes of the C interface.
 */
typedef enum DisphypStatus {
  DISPHYP_STATUS_OK = 0,
  DISPHYP_STATUS_NULL_POINTER = 1,
  DISPHYP_STATUS_INVALID_UTF8 = 2,
  DISPHYP_STATUS_PARSE = 3,
  DISPHYP_STATUS_CONFIG = 4,
  DISPHYP_STATUS_DOMAIN = 5,
  DISPHYP_STATUS_NUMERICAL = 6,
  DISPHYP_STATUS_IO = 7,
  DISPHYP_STATUS_BUFFER_TOO_SMALL = 8,
  DISPHYP_STATUS_PANIC = 9,
} DisphypStatus;

/**
 * Opaque system handle.
 */
typedef struct DisphypSystem DisphypSystem;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *disphyp_last_error(void);

/**
 * Library version as a static string.
 */
const char *disphyp_version(void);

/**
 * Creates a bundled family in space dimension `n`.
 *
 * # Safety
 * `name` must be a nul-terminated string and `out` a valid pointer.
 */
enum DisphypStatus disphyp_system_from_family(const char *name,
                                              size_t n,
                                              struct DisphypSystem **out);

/**
 * Creates a system from a JSON system description.
 *
 * # Safety
 * `json` must be a nul-terminated string and `out` a valid pointer.
 */
enum DisphypStatus disphyp_system_from_json(const char *json, struct DisphypSystem **out);

/**
 * Releases a system handle. Null is ignored.
 *
 * # Safety
 * `sys` must come from this library and must not be used afterwards.
 */
void disphyp_system_free(struct DisphypSystem *sys);

/**
 * Number of unknowns `m` and space dimension `n` of a system.
 *
 * # Safety
 * `sys` must be a live handle; `m` and `n` valid pointers.
 */
enum DisphypStatus disphyp_system_dims(const struct DisphypSystem *sys, size_t *m, size_t *n);

/**
 * Fundamental solution `E(t, s, xi)` by direct integration, written
 * row-major as interleaved `(re, im)` pairs into `out` (`2 m^2` doubles).
 *
 * # Safety
 * `sys` must be a live handle, `xi` must hold `xi_len` doubles and `out`
 * must hold `out_len` doubles.
 */
enum DisphypStatus disphyp_propagate_direct(const struct DisphypSystem *sys,
                                            double t,
                                            double s,
                                            const double *xi,
                                            size_t xi_len,
                                            double rtol,
                                            double *out,
                                            size_t out_len);

/**
 * Screens the structural assumptions with default settings. The report is
 * returned as JSON in `*json_out`; `*all_pass` is set to 0 or 1.
 *
 * # Safety
 * `sys` must be a live handle; `json_out` and `all_pass` valid pointers.
 */
enum DisphypStatus disphyp_check_assumptions(const struct DisphypSystem *sys,
                                             char **json_out,
                                             int32_t *all_pass);

/**
 * Runs a pipeline config given as JSON text, writing the report and CSV
 * files to `out_dir`. `*exit_code` receives 0 when every stage passed and
 * 1 otherwise; configuration errors are returned as a status instead.
 *
 * # Safety
 * `config_json` and `out_dir` must be nul-terminated strings and
 * `exit_code` a valid pointer.
 */
enum DisphypStatus disphyp_run_config(const char *config_json,
                                      const char *out_dir,
                                      int32_t no_cache,
                                      int32_t *exit_code);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and must not be used afterwards.
 */
void disphyp_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DISPHYP_H */
