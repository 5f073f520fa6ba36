#ifndef COALESCENT_H
#define COALESCENT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible function.
typedef enum CoalStatus {
  COAL_STATUS_OK = 0,
  COAL_STATUS_NULL_POINTER = 1,
  COAL_STATUS_INVALID_UTF8 = 2,
  COAL_STATUS_ARGUMENT = 3,
  COAL_STATUS_DATA = 4,
  COAL_STATUS_STRUCTURAL = 5,
  COAL_STATUS_NUMERIC = 6,
  COAL_STATUS_DEGENERACY = 7,
  COAL_STATUS_CONFIG = 8,
  COAL_STATUS_UNSUPPORTED = 9,
  COAL_STATUS_IO = 10,
  COAL_STATUS_INGESTION = 11,
  COAL_STATUS_UNRESTORABLE = 12,
  COAL_STATUS_PANIC = 99,
} CoalStatus;

typedef enum CoalModel {
  // Pick from the column types: all real is Brownian, all categorical is multinomial.
  COAL_MODEL_AUTO = 0,
  COAL_MODEL_BROWNIAN = 1,
  COAL_MODEL_MULTINOMIAL = 2,
} CoalModel;

typedef enum CoalGreedy {
  COAL_GREEDY_MAX_PROB = 0,
  COAL_GREEDY_MIN_DURATION = 1,
  COAL_GREEDY_RATE1 = 2,
} CoalGreedy;

typedef enum CoalProposal {
  COAL_PROPOSAL_PRIOR_PRIOR = 0,
  COAL_PROPOSAL_PRIOR_POST = 1,
  COAL_PROPOSAL_POST_POST = 2,
} CoalProposal;

// A data matrix. Missing cells read back as NaN.
typedef struct CoalData CoalData;

// A fitted tree together with the parameters it was fitted under.
typedef struct CoalTree CoalTree;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failing call on this thread, or NULL. The pointer is
// valid until the next failing call on this thread.
const char *coal_last_error(void);

// Library version as a static NUL-terminated string.
const char *coal_version(void);

// Loads a CSV file with a header row.
//
// `schema` is NULL for inference, or e.g. `"real"`, `"cat:3"`, or a
// comma-separated list with one entry per column. `na_token` is NULL for `"NA"`.
//
// # Safety
// String arguments must be NUL-terminated; `out` must be writable.
enum CoalStatus coal_data_load_csv(const char *path,
                                   const char *schema,
                                   const char *na_token,
                                   struct CoalData **out);

// Builds a real-valued matrix from `rows * cols` row-major values; NaN marks a missing cell.
//
// # Safety
// `values` must point to `rows * cols` doubles; `out` must be writable.
enum CoalStatus coal_data_from_real(const double *values,
                                    size_t rows,
                                    size_t cols,
                                    struct CoalData **out);

// Builds a categorical matrix with `k` categories per column from row-major
// codes in `0..k`; a negative code marks a missing cell.
//
// # Safety
// `codes` must point to `rows * cols` ints; `out` must be writable.
enum CoalStatus coal_data_from_categorical(const int32_t *codes,
                                           size_t rows,
                                           size_t cols,
                                           size_t k,
                                           struct CoalData **out);

// Number of rows, or 0 for NULL.
//
// # Safety
// `data` must be NULL or a live handle.
size_t coal_data_rows(const struct CoalData *data);

// Number of columns, or 0 for NULL.
//
// # Safety
// `data` must be NULL or a live handle.
size_t coal_data_cols(const struct CoalData *data);

// Reads one cell; missing cells give NaN. Categorical cells give the code.
//
// # Safety
// `data` must be a live handle; `out` must be writable.
enum CoalStatus coal_data_get(const struct CoalData *data, size_t row, size_t col, double *out);

// # Safety
// `data` must be NULL or a handle not yet freed.
void coal_data_free(struct CoalData *data);

// Fits a tree with a greedy builder, re-estimating parameters between
// `iterations` builds (1 means a single build at the starting parameters).
//
// # Safety
// `data` must be a live handle; `out` must be writable.
enum CoalStatus coal_fit_greedy(const struct CoalData *data,
                                enum CoalModel model,
                                enum CoalGreedy variant,
                                size_t iterations,
                                struct CoalTree **out);

// Runs SMC at the starting parameters and keeps the highest-weight tree.
// The tree's log marginal is the SMC estimate of the data evidence.
//
// # Safety
// `data` must be a live handle; `out` must be writable.
enum CoalStatus coal_fit_smc(const struct CoalData *data,
                             enum CoalModel model,
                             enum CoalProposal proposal,
                             size_t particles,
                             uint64_t seed,
                             struct CoalTree **out);

// Number of leaves, or 0 for NULL.
//
// # Safety
// `tree` must be NULL or a live handle.
size_t coal_tree_leaves(const struct CoalTree *tree);

// Log prior of the tree's merge times, NaN for NULL.
//
// # Safety
// `tree` must be NULL or a live handle.
double coal_tree_log_prior(const struct CoalTree *tree);

// Log marginal likelihood recorded at fit time, NaN for NULL.
//
// # Safety
// `tree` must be NULL or a live handle.
double coal_tree_log_marginal(const struct CoalTree *tree);

// Joint log probability of the tree and `data` under the fitted parameters.
//
// # Safety
// Handles must be live; `out` must be writable.
enum CoalStatus coal_tree_joint_log_prob(const struct CoalTree *tree,
                                         const struct CoalData *data,
                                         double *out);

// Newick text of the tree with leaves named from `data`'s row labels.
// Release the string with [`coal_string_free`].
//
// # Safety
// Handles must be live; `out` must be writable.
enum CoalStatus coal_tree_newick(const struct CoalTree *tree,
                                 const struct CoalData *data,
                                 char **out);

// Fills the missing cells of `data` with their posterior point estimates
// under the tree, producing a new data handle.
//
// # Safety
// Handles must be live; `out` must be writable.
enum CoalStatus coal_tree_restore(const struct CoalTree *tree,
                                  const struct CoalData *data,
                                  struct CoalData **out);

// # Safety
// `tree` must be NULL or a handle not yet freed.
void coal_tree_free(struct CoalTree *tree);

// # Safety
// `s` must be NULL or a string returned by this library and not yet freed.
void coal_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COALESCENT_H */
