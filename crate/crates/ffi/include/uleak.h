#ifndef ULEAK_H
#define ULEAK_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

/*
 Result of every fallible call.
 */
typedef enum UleakStatus {
  ULEAK_STATUS_OK = 0,
  ULEAK_STATUS_NULL_POINTER = 1,
  ULEAK_STATUS_INVALID_UTF8 = 2,
  ULEAK_STATUS_PARSE_ERROR = 3,
  ULEAK_STATUS_CONFIG_ERROR = 4,
  ULEAK_STATUS_RUNTIME_ERROR = 5,
  ULEAK_STATUS_PANIC = 6,
} UleakStatus;

typedef enum UleakVerdictClass {
  ULEAK_VERDICT_CLASS_SECURE = 0,
  ULEAK_VERDICT_CLASS_LEAK = 1,
  ULEAK_VERDICT_CLASS_TIMEOUT = 2,
  ULEAK_VERDICT_CLASS_ERROR = 3,
} UleakVerdictClass;

typedef struct UleakInterface UleakInterface;

typedef struct UleakProgram UleakProgram;

typedef struct UleakVerdict UleakVerdict;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failed call on this thread, or null. Valid until
 the next call into the library from the same thread.
 */
const char *uleak_last_error(void);

/*
 Library version as a static string.
 */
const char *uleak_version(void);

/*
 Parses assembly source.

 # Safety
 `source` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum UleakStatus uleak_program_parse(const char *source, struct UleakProgram **out);

/*
 Number of instructions in `program`, or 0 if it is null.

 # Safety
 `program` must be null or a live handle.
 */
size_t uleak_program_len(const struct UleakProgram *program);

/*
 # Safety
 `program` must be null or a handle not yet freed.
 */
void uleak_program_free(struct UleakProgram *program);

/*
 Parses a TOML interface description.

 # Safety
 `text` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum UleakStatus uleak_interface_parse(const char *text, struct UleakInterface **out);

/*
 # Safety
 `interface` must be null or a handle not yet freed.
 */
void uleak_interface_free(struct UleakInterface *interface);

/*
 Loads a bundled corpus entry's program and interface.

 # Safety
 `name` must be a valid NUL-terminated string; both out pointers valid.
 */
enum UleakStatus uleak_corpus_load(const char *name,
                                   struct UleakProgram **program_out,
                                   struct UleakInterface **interface_out);

/*
 Runs a campaign of `cases` low-equivalent input pairs.

 # Safety
 Handles must be live; strings NUL-terminated (`params` may be null);
 `out` must be a valid pointer.
 */
enum UleakStatus uleak_campaign_run(const struct UleakProgram *program,
                                    const struct UleakInterface *interface,
                                    const char *leakage,
                                    const char *predictor,
                                    const char *params,
                                    uint64_t cases,
                                    uint64_t seed,
                                    uint32_t jobs,
                                    struct UleakVerdict **out);

/*
 Class of a verdict; `Error` for a null handle.

 # Safety
 `verdict` must be null or a live handle.
 */
enum UleakVerdictClass uleak_verdict_class(const struct UleakVerdict *verdict);

/*
 The verdict's one-line machine report; free with `uleak_string_free`.

 # Safety
 `verdict` must be null or a live handle.
 */
char *uleak_verdict_report(const struct UleakVerdict *verdict);

/*
 # Safety
 `verdict` must be null or a handle not yet freed.
 */
void uleak_verdict_free(struct UleakVerdict *verdict);

/*
 Dumps the leakage trace for one input given as hex.

 # Safety
 Handles must be live; strings NUL-terminated (`params` may be null);
 `out` must be a valid pointer. The result is freed with
 `uleak_string_free`.
 */
enum UleakStatus uleak_trace_dump(const struct UleakProgram *program,
                                  const struct UleakInterface *interface,
                                  const char *leakage,
                                  const char *predictor,
                                  const char *params,
                                  const char *input_hex,
                                  char **out);

/*
 Releases a string returned by this library.

 # Safety
 `s` must be null or a string from this library not yet freed.
 */
void uleak_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ULEAK_H */
