#ifndef CRL_H
#define CRL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CrlStatus {
  CRL_STATUS_OK = 0,
  CRL_STATUS_NULL_POINTER = 1,
  CRL_STATUS_INVALID_UTF8 = 2,
  CRL_STATUS_INVALID_ARGUMENT = 3,
  CRL_STATUS_PARSE = 4,
  CRL_STATUS_NOT_FOUND = 5,
  CRL_STATUS_IO = 6,
  CRL_STATUS_VOCAB_MISMATCH = 7,
  CRL_STATUS_UNKNOWN_MODULE = 8,
  CRL_STATUS_NUMERIC = 9,
  CRL_STATUS_CONFIG = 10,
  // The episode ended without reducing the input to one token.
  CRL_STATUS_NO_ANSWER = 11,
  CRL_STATUS_PANIC = 12,
} CrlStatus;

// A trained learner loaded from a checkpoint.
typedef struct CrlLearner CrlLearner;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer stays
// valid until the next failing call on the same thread.
const char *crl_last_error_message(void);

// Library version as a static string.
const char *crl_version(void);

// Exact value mod 10 of an expression such as `3+4*7`, with usual
// operator precedence.
//
// # Safety
// `expr` must be a nul-terminated string and `out` a writable pointer.
enum CrlStatus crl_eval_mod10(const char *expr, uint8_t *out);

// Load a learner from a checkpoint file.
//
// # Safety
// `path` must be a nul-terminated string and `out` a writable pointer. The
// handle written to `out` must be released with [`crl_learner_free`].
enum CrlStatus crl_learner_load(const char *path, struct CrlLearner **out);

// Release a learner. Null is ignored.
//
// # Safety
// `learner` must come from [`crl_learner_load`] and not be used afterwards.
void crl_learner_free(struct CrlLearner *learner);

// Answer digit the learner gives for `expr` written in language `src`,
// with the answer requested in language `tgt` (0 for numerals). Actions are
// chosen greedily and `seed` keys the episode's rng stream. Returns
// `NoAnswer` when the episode does not end on one digit.
//
// # Safety
// `learner` must be a live handle, `expr` a nul-terminated string and
// `digit` a writable pointer.
enum CrlStatus crl_learner_solve(const struct CrlLearner *learner,
                                 const char *expr,
                                 uint32_t src,
                                 uint32_t tgt,
                                 uint64_t seed,
                                 uint8_t *digit);

// Rendered execution trace of one episode, preceded by a header line.
// `sample` selects sampled instead of greedy actions.
//
// # Safety
// `learner` must be a live handle, `expr` a nul-terminated string and `out`
// a writable pointer. The string written to `out` must be released with
// [`crl_string_free`].
enum CrlStatus crl_learner_trace(const struct CrlLearner *learner,
                                 const char *expr,
                                 uint32_t src,
                                 uint32_t tgt,
                                 uint64_t seed,
                                 bool sample,
                                 char **out);

// Release a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not be used afterwards.
void crl_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CRL_H */
