#ifndef REALTREES_H
#define REALTREES_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RtStatus {
  RT_STATUS_OK = 0,
  RT_STATUS_NULL_POINTER = 1,
  RT_STATUS_INVALID_ARGUMENT = 2,
  RT_STATUS_IO = 3,
  RT_STATUS_PARSE = 4,
  RT_STATUS_CONFIG = 5,
  RT_STATUS_DATA = 6,
  RT_STATUS_SET_OVERFLOW = 7,
  RT_STATUS_EPSILON_EXHAUSTED = 8,
  RT_STATUS_RUN_FAILED = 9,
  RT_STATUS_PANIC = 10,
} RtStatus;

/*
 Binary feature matrix with class labels.
 */
typedef struct RtDataset RtDataset;

/*
 Enumerated Rashomon set.
 */
typedef struct RtRashomonSet RtRashomonSet;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failure on this thread, or null. The pointer stays
 valid until the next failing call on the same thread.
 */
const char *rt_last_error(void);

/*
 Library version as a static string.
 */
const char *rt_version(void);

/*
 # Safety
 `s` must be null or a string returned by this library.
 */
void rt_string_free(char *s);

/*
 Loads a CSV file and binarizes its columns.

 # Safety
 `path` and `label` must be NUL-terminated strings; `out` must be writable.
 */
enum RtStatus rt_dataset_from_csv(const char *path,
                                  const char *label,
                                  size_t max_thresholds,
                                  struct RtDataset **out);

/*
 XOR / linear-threshold mixture with label noise `phi`.

 # Safety
 `out` must be writable.
 */
enum RtStatus rt_dataset_xor(size_t n,
                             size_t p,
                             double alpha,
                             double phi,
                             uint64_t seed,
                             struct RtDataset **out);

/*
 Three-bit parity padded with `noise_dims` irrelevant features.

 # Safety
 `out` must be writable.
 */
enum RtStatus rt_dataset_parity(size_t n, size_t noise_dims, uint64_t seed, struct RtDataset **out);

/*
 Builds a dataset from a row-major 0/1 matrix and labels in `0..n_classes`.

 # Safety
 `x` must hold `n * p` bytes and `y` `n` labels; `out` must be writable.
 */
enum RtStatus rt_dataset_from_matrix(const uint8_t *x,
                                     const uint32_t *y,
                                     size_t n,
                                     size_t p,
                                     size_t n_classes,
                                     struct RtDataset **out);

/*
 # Safety
 `ds` must be null or a handle from this library, not yet freed.
 */
void rt_dataset_free(struct RtDataset *ds);

/*
 # Safety
 `ds` must be a live handle and the output pointers writable.
 */
enum RtStatus rt_dataset_shape(const struct RtDataset *ds, size_t *n, size_t *p, size_t *n_classes);

/*
 Enumerates every legal tree within `(1 + epsilon)` of the optimal
 objective. A `cap` of zero means the library default.

 # Safety
 `ds` must be a live handle and `out` writable.
 */
enum RtStatus rt_rashomon_enumerate(const struct RtDataset *ds,
                                    size_t max_depth,
                                    double lambda,
                                    double epsilon,
                                    size_t cap,
                                    struct RtRashomonSet **out);

/*
 # Safety
 `set` must be null or a handle from this library, not yet freed.
 */
void rt_rashomon_free(struct RtRashomonSet *set);

/*
 Member count, optimal objective and inclusion threshold.

 # Safety
 `set` must be a live handle and the output pointers writable.
 */
enum RtStatus rt_rashomon_summary(const struct RtRashomonSet *set,
                                  size_t *len,
                                  double *optimum,
                                  double *threshold);

/*
 Objective, misclassification count and leaf count of one member.

 # Safety
 `set` must be a live handle and the output pointers writable.
 */
enum RtStatus rt_rashomon_member(const struct RtRashomonSet *set,
                                 size_t index,
                                 double *objective,
                                 size_t *misclassified,
                                 size_t *leaves);

/*
 Text form of one member, e.g. `(f0 l0 l1)`. Free with [`rt_string_free`].

 # Safety
 `set` must be a live handle and `out` writable.
 */
enum RtStatus rt_rashomon_member_text(const struct RtRashomonSet *set, size_t index, char **out);

/*
 Predicted label of one member for a row of `p` 0/1 values.

 # Safety
 `set` must be a live handle, `row` must hold `p` bytes and `label` be writable.
 */
enum RtStatus rt_rashomon_member_predict(const struct RtRashomonSet *set,
                                         size_t index,
                                         const uint8_t *row,
                                         size_t p,
                                         uint32_t *label);

/*
 Copies the member objectives into `out`, which must hold `len` values
 where `len` is the set size.

 # Safety
 `set` must be a live handle and `out` writable for `len` values.
 */
enum RtStatus rt_rashomon_losses(const struct RtRashomonSet *set, double *out, size_t len);

/*
 Committee weights for `len` losses. `gibbs` selects `exp(-beta * loss)`
 weighting, otherwise weights are uniform.

 # Safety
 `losses` must hold `len` values and `out` be writable for `len` values.
 */
enum RtStatus rt_committee_weights(const double *losses,
                                   size_t len,
                                   bool gibbs,
                                   double beta,
                                   double *out);

/*
 `exp` of the Shannon entropy of `len` weights.

 # Safety
 `weights` must hold `len` values and `out` be writable.
 */
enum RtStatus rt_effective_committee_size(const double *weights, size_t len, double *out);

/*
 Shannon entropy in nats of a class distribution.

 # Safety
 `probs` must hold `len` values and `out` be writable.
 */
enum RtStatus rt_vote_entropy(const double *probs, size_t len, double *out);

/*
 Runs a JSON experiment config and writes its result files. `output`
 overrides the config's output directory when non-null. Returns
 `RunFailed` when the files were written but some runs failed.

 # Safety
 `config_path` must be a NUL-terminated string, `output` null or one.
 */
enum RtStatus rt_run_experiment(const char *config_path, const char *output, size_t jobs);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* REALTREES_H */
