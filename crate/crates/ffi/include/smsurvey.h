/* SPDX-License-Identifier: Apache-2.0 */

#ifndef SMSURVEY_H
#define SMSURVEY_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SmsStatus {
  SMS_STATUS_OK = 0,
  SMS_STATUS_NULL_ARGUMENT = 1,
  SMS_STATUS_INVALID_UTF8 = 2,
  SMS_STATUS_INVALID_INPUT = 3,
  SMS_STATUS_NOT_FOUND = 4,
  SMS_STATUS_CONFLICT = 5,
  SMS_STATUS_STORAGE_UNAVAILABLE = 6,
  SMS_STATUS_TRANSPORT_ERROR = 7,
  SMS_STATUS_PANIC = 8,
} SmsStatus;

/**
 * An open store plus the session engine driving it.
 */
typedef struct SmsEngine SmsEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. The pointer is
 * owned by the library and valid until the next call on the same thread.
 */
const char *smsurvey_last_error(void);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library that has not been freed.
 */
void smsurvey_string_free(char *s);

/**
 * Opens the store at `path` (NULL or `:memory:` for a throwaway store).
 * Outbound messages are appended as JSON lines to `outbox_path`; when that
 * is NULL they are kept in memory and dropped with the engine.
 *
 * # Safety
 * String arguments must be NULL or valid NUL-terminated strings; `out` must
 * be writable.
 */
enum SmsStatus smsurvey_engine_open(const char *path,
                                    const char *outbox_path,
                                    struct SmsEngine **out);

/**
 * # Safety
 * `engine` must be NULL or a handle from [`smsurvey_engine_open`] not yet freed.
 */
void smsurvey_engine_free(struct SmsEngine *engine);

/**
 * Feeds one inbound SMS to the engine. `now_ms` is milliseconds since the
 * Unix epoch. Writes the outcome as JSON.
 *
 * # Safety
 * `engine` must be a live handle; strings must be valid; `out_json` writable.
 */
enum SmsStatus smsurvey_handle_inbound(const struct SmsEngine *engine,
                                       const char *phone,
                                       const char *text,
                                       int64_t now_ms,
                                       char **out_json);

/**
 * Exports `table` (`users`, `responses`, `sms_log`, ...) as CSV.
 * `filters` holds zero or more filter expressions separated by newlines.
 *
 * # Safety
 * `engine` must be a live handle; strings must be NULL or valid; `out_csv` writable.
 */
enum SmsStatus smsurvey_export_csv(const struct SmsEngine *engine,
                                   const char *table,
                                   const char *filters,
                                   char **out_csv);

/**
 * Runs a scenario script on a fresh in-memory store. Writes the JSON report
 * and whether every expectation held.
 *
 * # Safety
 * `script` must be valid; both out pointers writable.
 */
enum SmsStatus smsurvey_run_scenario(const char *script, char **out_json, bool *out_passed);

/**
 * Decodes a bulk-answer SMS body into a JSON record.
 *
 * # Safety
 * `body` must be valid; `out_json` writable.
 */
enum SmsStatus smsurvey_decode_bulk(const char *body, char **out_json);

/**
 * Encodes a JSON record (as produced by [`smsurvey_decode_bulk`]) into a
 * bulk-answer SMS body.
 *
 * # Safety
 * `record_json` must be valid; `out_body` writable.
 */
enum SmsStatus smsurvey_encode_bulk(const char *record_json, char **out_body);

/**
 * Normalizes a numeric answer. Writes `{"status":"ok",...}` or
 * `{"status":"failed","reason":...}`; a failed parse is not an error.
 *
 * # Safety
 * `raw` must be valid; `out_json` writable.
 */
enum SmsStatus smsurvey_normalize_numeric(const char *raw, char **out_json);

/**
 * # Safety
 * `raw` must be valid; `out_json` writable.
 */
enum SmsStatus smsurvey_normalize_free_text(const char *raw, char **out_json);

/**
 * Number of SMS parts `text` needs under default segment limits.
 * Fails with `InvalidInput` past the part limit.
 *
 * # Safety
 * `text` must be valid; `out_parts` writable.
 */
enum SmsStatus smsurvey_segment_count(const char *text, uint32_t *out_parts);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SMSURVEY_H */
