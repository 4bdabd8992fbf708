#ifndef METASEQ_H
#define METASEQ_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum MetaseqStatus {
  METASEQ_STATUS_OK = 0,
  METASEQ_STATUS_NULL_ARGUMENT = 1,
  METASEQ_STATUS_INVALID_ARGUMENT = 2,
  METASEQ_STATUS_IO_ERROR = 3,
  METASEQ_STATUS_PARSE_ERROR = 4,
  METASEQ_STATUS_VOCAB_MISMATCH = 5,
  METASEQ_STATUS_EMPTY_SUPPORT = 6,
  METASEQ_STATUS_INTERNAL = 7,
} MetaseqStatus;

/**
 * A trained model loaded from a checkpoint.
 */
typedef struct MetaseqModel MetaseqModel;

/**
 * A seeded stream of meta-training episodes.
 */
typedef struct MetaseqSampler MetaseqSampler;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failure on this thread, or null. The pointer
 * stays valid until the next library call on the same thread.
 */
const char *metaseq_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *metaseq_version(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed already.
 */
void metaseq_string_free(char *s);

/**
 * Executes a SCAN instruction under the standard grammar, writing the
 * space-separated action sequence to `*out`.
 *
 * # Safety
 * `instruction` must be a valid C string and `out` a writable pointer.
 */
enum MetaseqStatus metaseq_interpret(const char *instruction, char **out);

/**
 * Loads a training checkpoint written by the `metaseq` CLI.
 *
 * # Safety
 * `path` must be a valid C string and `out` a writable pointer.
 */
enum MetaseqStatus metaseq_model_load(const char *path, struct MetaseqModel **out);

/**
 * # Safety
 * `model` must come from [`metaseq_model_load`] and not be used afterwards.
 */
void metaseq_model_free(struct MetaseqModel *model);

/**
 * Greedy translation of `query` given a support set. `support` holds one
 * `IN: <instruction> OUT: <actions>` pair per line. The prediction (without
 * the end symbol) is written to `*out`.
 *
 * # Safety
 * `model` must be a live handle, the strings valid C strings and `out` a
 * writable pointer.
 */
enum MetaseqStatus metaseq_model_predict(const struct MetaseqModel *model,
                                         const char *support,
                                         const char *query,
                                         char **out);

/**
 * Creates a meta-training episode stream for an experiment (`me`,
 * `add-jump-perm`, `add-jump-aug`, `around-right`, `length`).
 *
 * # Safety
 * `experiment` must be a valid C string and `out` a writable pointer.
 */
enum MetaseqStatus metaseq_sampler_new(const char *experiment,
                                       uint64_t seed,
                                       struct MetaseqSampler **out);

/**
 * Writes the next episode to `*out` in the text episode format
 * (`SUPPORT` and `QUERY` sections of `IN:/OUT:` lines).
 *
 * # Safety
 * `sampler` must be a live handle and `out` a writable pointer.
 */
enum MetaseqStatus metaseq_sampler_next(struct MetaseqSampler *sampler, char **out);

/**
 * # Safety
 * `sampler` must come from [`metaseq_sampler_new`] and not be used
 * afterwards.
 */
void metaseq_sampler_free(struct MetaseqSampler *sampler);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* METASEQ_H */
