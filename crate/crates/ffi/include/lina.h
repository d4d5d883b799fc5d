#ifndef LINA_H
#define LINA_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Result code of every entry point.
typedef enum LinaStatus {
  LINA_STATUS_OK = 0,
  LINA_STATUS_NULL_ARGUMENT = 1,
  LINA_STATUS_INVALID_UTF8 = 2,
  LINA_STATUS_PARSE_ERROR = 3,
  LINA_STATUS_TYPE_ERROR = 4,
  LINA_STATUS_UNKNOWN_FUNCTION = 5,
  LINA_STATUS_TRANSFORM_ERROR = 6,
  LINA_STATUS_EVAL_ERROR = 7,
  LINA_STATUS_BUFFER_TOO_SMALL = 8,
  LINA_STATUS_PANIC = 9,
} LinaStatus;

// A parsed program. Opaque to C.
typedef struct LinaProgram LinaProgram;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *lina_version(void);

// Copy of the last error message on this thread, or NULL if there is none.
// Release with `lina_string_free`.
char *lina_last_error_message(void);

// Releases a string returned by this library. NULL is ignored.
//
// # Safety
// `s` must come from this library and not have been freed.
void lina_string_free(char *s);

// Parses program text into a new handle. Does not typecheck.
//
// # Safety
// `source` must be a NUL-terminated string; `out` must be writable.
enum LinaStatus lina_program_parse(const char *source, struct LinaProgram **out);

// Releases a program handle. NULL is ignored.
//
// # Safety
// `p` must come from this library and not have been freed.
void lina_program_free(struct LinaProgram *p);

// Typechecks every def.
//
// # Safety
// `p` must be a live handle.
enum LinaStatus lina_program_check(const struct LinaProgram *p);

// Number of defs in the program.
//
// # Safety
// `p` must be a live handle; `out` must be writable.
enum LinaStatus lina_program_def_count(const struct LinaProgram *p, size_t *out);

// Renders the program in surface syntax. Release with `lina_string_free`.
//
// # Safety
// `p` must be a live handle; `out` must be writable.
enum LinaStatus lina_program_to_string(const struct LinaProgram *p, char **out);

// Renders the program in the structured tree encoding.
//
// # Safety
// `p` must be a live handle; `out` must be writable.
enum LinaStatus lina_program_to_structured(const struct LinaProgram *p, char **out);

// Adds `func.jvp` and the derivatives of its callees; the result is a new
// handle.
//
// # Safety
// `p` must be a live handle, `func` a NUL-terminated string, `out` writable.
enum LinaStatus lina_jvp(const struct LinaProgram *p, const char *func, struct LinaProgram **out);

// Adds `func.nl` and `func.lin` for `func` and its callees.
//
// # Safety
// As for `lina_jvp`.
enum LinaStatus lina_unzip(const struct LinaProgram *p,
                           const char *func,
                           bool checkpoint,
                           struct LinaProgram **out);

// Adds `func.T` for a Linear B linear def.
//
// # Safety
// As for `lina_jvp`.
enum LinaStatus lina_transpose(const struct LinaProgram *p,
                               const char *func,
                               struct LinaProgram **out);

// Evaluates `func`. Arguments and results are flattened scalars. The result
// lengths are always written; if a buffer is too small the call returns
// `BufferTooSmall` and writes nothing else.
//
// # Safety
// Arrays must hold at least the stated number of doubles; length and work
// pointers must be writable (`work` may be NULL).
enum LinaStatus lina_eval(const struct LinaProgram *p,
                          const char *func,
                          const double *nl_args,
                          size_t nl_len,
                          const double *lin_args,
                          size_t lin_len,
                          double *nl_out,
                          size_t nl_cap,
                          size_t *nl_out_len,
                          double *lin_out,
                          size_t lin_cap,
                          size_t *lin_out_len,
                          uint64_t *work);

// Reverse-mode gradient of a def with a single `R` result, flattened.
//
// # Safety
// `point` must hold `point_len` doubles; `out` must hold `cap` doubles;
// `out_len` must be writable.
enum LinaStatus lina_gradient(const struct LinaProgram *p,
                              const char *func,
                              const double *point,
                              size_t point_len,
                              double *out,
                              size_t cap,
                              size_t *out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LINA_H */
