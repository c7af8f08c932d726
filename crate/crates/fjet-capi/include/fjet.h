#ifndef FJET_H
#define FJET_H

/* Generated by cbindgen from the fjet-capi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of a C API call.
typedef enum FjetStatus {
  // The call succeeded.
  FJET_STATUS_OK = 0,
  // A required pointer argument was null.
  FJET_STATUS_NULL_ARGUMENT = 1,
  // A string argument was not valid UTF-8.
  FJET_STATUS_INVALID_UTF8 = 2,
  // The request was malformed (bad parameter name, range, or value).
  FJET_STATUS_CONFIG = 3,
  // A computation produced a non-finite intermediate value.
  FJET_STATUS_OVERFLOW = 4,
  // The operation is not supported for this input.
  FJET_STATUS_UNSUPPORTED = 5,
  // The regression design matrix is numerically rank-deficient.
  FJET_STATUS_RANK_DEFICIENT = 6,
  // A feature string could not be parsed.
  FJET_STATUS_PARSE = 7,
  // A file's contents are malformed or have an unsupported version.
  FJET_STATUS_FILE_FORMAT = 8,
  // An underlying I/O operation failed.
  FJET_STATUS_IO = 9,
  // An index argument was out of bounds.
  FJET_STATUS_INDEX_OUT_OF_BOUNDS = 10,
  // An internal invariant was violated; the library state is unchanged.
  FJET_STATUS_PANIC = 11,
} FjetStatus;

// Which row of an update map a query refers to.
typedef enum FjetResponse {
  // The position update Δu.
  FJET_RESPONSE_DU = 0,
  // The velocity update Δv.
  FJET_RESPONSE_DV = 1,
} FjetResponse;

// Opaque handle to a sampled dataset of update records.
typedef struct FjetDataset FjetDataset;

// Opaque handle to a fitted update-map model.
typedef struct FjetModel FjetModel;

// Opaque handle to a reference system.
typedef struct FjetSystem FjetSystem;

// Opaque handle to a generated trajectory.
typedef struct FjetTrajectory FjetTrajectory;

// Cosine drive parameters: `p(t) = A cos(Ω t)`.
typedef struct FjetForcing {
  // Amplitude A.
  double amplitude;
  // Angular frequency Ω.
  double frequency;
} FjetForcing;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Returns the library version as a static string.
const char *fjet_version(void);

// Returns a description of the most recent error on the calling thread, or
// an empty string if no error has occurred. The pointer stays valid until
// the next failing call on this thread.
const char *fjet_last_error_message(void);

// Releases a string returned through a `char **` out-parameter.
//
// # Safety
// `s` must be null or a pointer previously returned by this library through
// a `char **` out-parameter, not yet freed.
void fjet_string_free(char *s);

// Creates a reference system.
//
// `kind` is one of `"ho"`, `"pendulum"`, `"duffing"`. `param_names` /
// `param_values` are `n_params` parallel entries overriding the system's
// defaults; recognized names are `omega0`, `gamma` (oscillator, pendulum)
// and `gamma`, `alpha`, `beta`, `A`, `Omega` (double-well). Pass
// `n_params = 0` for all defaults.
//
// # Safety
// `kind` must be a valid C string; `param_names` must point to `n_params`
// valid C strings and `param_values` to `n_params` doubles (both may be
// null when `n_params` is 0); `out` must be a valid pointer.
enum FjetStatus fjet_system_new(const char *kind,
                                const char *const *param_names,
                                const double *param_values,
                                size_t n_params,
                                struct FjetSystem **out);

// Destroys a system handle (accepts null).
//
// # Safety
// `sys` must be null or an unfreed handle from `fjet_system_new`.
void fjet_system_free(struct FjetSystem *sys);

// Evaluates the system's right-hand side `(du/dt, dv/dt)` at `(t, u, v)`.
//
// # Safety
// `sys` must be a valid handle; `out_dudt` and `out_dvdt` must be valid
// pointers.
enum FjetStatus fjet_system_eval_rhs(const struct FjetSystem *sys,
                                     double t,
                                     double u,
                                     double v,
                                     double *out_dudt,
                                     double *out_dvdt);

// Evaluates the system's conserved-form energy at `(u, v)`. Returns
// `FJET_STATUS_UNSUPPORTED` for systems without a defined energy (the
// driven double-well).
//
// # Safety
// `sys` must be a valid handle; `out_energy` must be a valid pointer.
enum FjetStatus fjet_system_energy(const struct FjetSystem *sys,
                                   double u,
                                   double v,
                                   double *out_energy);

// Samples `n` update records from `sys` over its default phase-space
// domains at step size `eps`, noise scale `sigma`, and RNG `seed`.
//
// # Safety
// `sys` must be a valid handle; `out` must be a valid pointer.
enum FjetStatus fjet_dataset_sample(const struct FjetSystem *sys,
                                    size_t n,
                                    double eps,
                                    double sigma,
                                    uint64_t seed,
                                    struct FjetDataset **out);

// Writes a dataset to `path` (CSV plus a metadata sidecar).
//
// # Safety
// `ds` must be a valid handle; `path` must be a valid C string.
enum FjetStatus fjet_dataset_save(const struct FjetDataset *ds, const char *path);

// Reads a dataset previously written by `fjet_dataset_save`.
//
// # Safety
// `path` must be a valid C string; `out` must be a valid pointer.
enum FjetStatus fjet_dataset_load(const char *path, struct FjetDataset **out);

// Number of records in a dataset (0 for null).
//
// # Safety
// `ds` must be null or a valid handle.
size_t fjet_dataset_len(const struct FjetDataset *ds);

// Step size the dataset was sampled at (NaN for null).
//
// # Safety
// `ds` must be null or a valid handle.
double fjet_dataset_eps(const struct FjetDataset *ds);

// Destroys a dataset handle (accepts null).
//
// # Safety
// `ds` must be null or an unfreed dataset handle.
void fjet_dataset_free(struct FjetDataset *ds);

// Fits an update-map model to `ds` by ordinary least squares.
//
// `features_du` and `features_dv` are comma-separated feature lists (e.g.
// `"u,v"` or `"v,sin(u),v*cos(u)"`) for the Δu and Δv rows.
//
// # Safety
// `ds` must be a valid handle; the feature lists must be valid C strings;
// `out` must be a valid pointer.
enum FjetStatus fjet_model_fit(const struct FjetDataset *ds,
                               const char *features_du,
                               const char *features_dv,
                               struct FjetModel **out);

// Writes a model to `path`.
//
// # Safety
// `m` must be a valid handle; `path` must be a valid C string.
enum FjetStatus fjet_model_save(const struct FjetModel *m, const char *path);

// Reads a model previously written by `fjet_model_save`.
//
// # Safety
// `path` must be a valid C string; `out` must be a valid pointer.
enum FjetStatus fjet_model_load(const char *path, struct FjetModel **out);

// Step size the model was fitted at (NaN for null).
//
// # Safety
// `m` must be null or a valid handle.
double fjet_model_eps(const struct FjetModel *m);

// Number of features in the requested row (0 for null).
//
// # Safety
// `m` must be null or a valid handle.
size_t fjet_model_feature_count(const struct FjetModel *m, enum FjetResponse response);

// Returns the canonical string of feature `index` in the requested row
// through `out_name`; release it with `fjet_string_free`.
//
// # Safety
// `m` must be a valid handle; `out_name` must be a valid pointer.
enum FjetStatus fjet_model_feature_name(const struct FjetModel *m,
                                        enum FjetResponse response,
                                        size_t index,
                                        char **out_name);

// Returns the raw fitted coefficient of feature `index` in the requested
// row through `out_coeff`.
//
// # Safety
// `m` must be a valid handle; `out_coeff` must be a valid pointer.
enum FjetStatus fjet_model_coefficient(const struct FjetModel *m,
                                       enum FjetResponse response,
                                       size_t index,
                                       double *out_coeff);

// Evaluates the model's predicted updates `(Δu, Δv)` at a jet-space point.
// `p` and `pdot` are the drive value and its derivative; pass 0 for models
// that do not use a drive.
//
// # Safety
// `m` must be a valid handle; `out_du` and `out_dv` must be valid pointers.
enum FjetStatus fjet_model_predict(const struct FjetModel *m,
                                   double t,
                                   double u,
                                   double v,
                                   double p,
                                   double pdot,
                                   double *out_du,
                                   double *out_dv);

// Destroys a model handle (accepts null).
//
// # Safety
// `m` must be null or an unfreed model handle.
void fjet_model_free(struct FjetModel *m);

// Iterates the model's update map from `(u0, v0)` at time `t0` for `steps`
// steps of the model's step size. `forcing` supplies the drive for models
// that use `p`/`pdot` and may be null otherwise. If the orbit diverges the
// trajectory is truncated at the last finite point.
//
// # Safety
// `m` must be a valid handle; `forcing` must be null or a valid pointer;
// `out` must be a valid pointer.
enum FjetStatus fjet_trajectory_generate(const struct FjetModel *m,
                                         double u0,
                                         double v0,
                                         double t0,
                                         size_t steps,
                                         const struct FjetForcing *forcing,
                                         struct FjetTrajectory **out);

// Number of points in a trajectory, including the initial state (0 for
// null).
//
// # Safety
// `traj` must be null or a valid handle.
size_t fjet_trajectory_len(const struct FjetTrajectory *traj);

// Whether the trajectory was cut short because the orbit diverged (false
// for null).
//
// # Safety
// `traj` must be null or a valid handle.
bool fjet_trajectory_truncated(const struct FjetTrajectory *traj);

// Copies point `index` of the trajectory into `out_t`, `out_u`, `out_v`.
//
// # Safety
// `traj` must be a valid handle; the out-pointers must be valid.
enum FjetStatus fjet_trajectory_point(const struct FjetTrajectory *traj,
                                      size_t index,
                                      double *out_t,
                                      double *out_u,
                                      double *out_v);

// Destroys a trajectory handle (accepts null).
//
// # Safety
// `traj` must be null or an unfreed trajectory handle.
void fjet_trajectory_free(struct FjetTrajectory *traj);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FJET_H */
