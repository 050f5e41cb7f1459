#ifndef PSHAPE_H
#define PSHAPE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Ground metric between points.
 */
typedef enum PshapeNorm {
  PSHAPE_NORM_L1 = 0,
  PSHAPE_NORM_L2 = 1,
} PshapeNorm;

/**
 * Transport solver selection.
 */
typedef enum PshapeSolver {
  PSHAPE_SOLVER_AUTO = 0,
  PSHAPE_SOLVER_EXACT = 1,
  PSHAPE_SOLVER_APPROX = 2,
} PshapeSolver;

/**
 * Result code of every fallible call.
 */
typedef enum PshapeStatus {
  PSHAPE_STATUS_OK = 0,
  PSHAPE_STATUS_NULL_POINTER = 1,
  PSHAPE_STATUS_INVALID_ARGUMENT = 2,
  PSHAPE_STATUS_CONFIG = 3,
  PSHAPE_STATUS_DATA = 4,
  PSHAPE_STATUS_NUMERIC = 5,
  PSHAPE_STATUS_CORRUPT = 6,
  PSHAPE_STATUS_IO = 7,
  PSHAPE_STATUS_PANIC = 8,
} PshapeStatus;

/**
 * Opaque point cloud.
 */
typedef struct PshapeCloud PshapeCloud;

/**
 * Opaque trained model restored from a checkpoint.
 */
typedef struct PshapeModel PshapeModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *pshape_last_error_message(void);

/**
 * Creates a cloud from `n` points stored as interleaved `x, y, z` values.
 *
 * # Safety
 * `xyz` must point to `3 * n` readable doubles; `out` must be writable.
 */
enum PshapeStatus pshape_cloud_new(const double *xyz, uintptr_t n, struct PshapeCloud **out);

/**
 * Reads an ASCII PLY file or a CSV file with an `x,y,z` header.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum PshapeStatus pshape_cloud_load(const char *path, struct PshapeCloud **out);

/**
 * Centers the cloud and scales its farthest point onto the unit sphere.
 *
 * # Safety
 * `cloud` must be a live handle; `out` must be writable.
 */
enum PshapeStatus pshape_cloud_normalize(const struct PshapeCloud *cloud, struct PshapeCloud **out);

/**
 * Number of points, or 0 for a null handle.
 *
 * # Safety
 * `cloud` must be null or a live handle.
 */
uintptr_t pshape_cloud_len(const struct PshapeCloud *cloud);

/**
 * Copies the points as interleaved `x, y, z` into `out`, which holds
 * `capacity` doubles and must have room for `3 * len`.
 *
 * # Safety
 * `cloud` must be a live handle; `out` must point to `capacity` writable doubles.
 */
enum PshapeStatus pshape_cloud_points(const struct PshapeCloud *cloud,
                                      double *out,
                                      uintptr_t capacity);

/**
 * Releases a cloud handle; null is ignored.
 *
 * # Safety
 * `cloud` must be null or a handle not yet freed.
 */
void pshape_cloud_free(struct PshapeCloud *cloud);

/**
 * Total optimal transport cost between two equal-size clouds. The solver
 * that ran is written to `out_solver` when it is not null.
 *
 * # Safety
 * `a` and `b` must be live handles; `out_cost` must be writable;
 * `out_solver` must be null or writable.
 */
enum PshapeStatus pshape_emd(const struct PshapeCloud *a,
                             const struct PshapeCloud *b,
                             enum PshapeNorm norm,
                             enum PshapeSolver solver,
                             double epsilon,
                             double *out_cost,
                             enum PshapeSolver *out_solver);

/**
 * Restores a model from a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum PshapeStatus pshape_model_load(const char *path, struct PshapeModel **out);

/**
 * Releases a model handle; null is ignored.
 *
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void pshape_model_free(struct PshapeModel *model);

/**
 * Number of structures the model takes, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
uintptr_t pshape_model_structures(const struct PshapeModel *model);

/**
 * Points per structure, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
uintptr_t pshape_model_points(const struct PshapeModel *model);

/**
 * Latent size of a generative model; 0 for discriminative models.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
uintptr_t pshape_model_latent_dim(const struct PshapeModel *model);

/**
 * Condition size of a generative model; 0 otherwise.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
uintptr_t pshape_model_condition_dim(const struct PshapeModel *model);

/**
 * Decodes latent `z` (length `k`) under `condition` (length `m`) into one
 * new cloud handle per structure, written to `out_clouds`, which holds
 * `capacity` handles.
 *
 * # Safety
 * `model` must be a live handle; `z` and `condition` must point to `k` and
 * `m` readable doubles; `out_clouds` must point to `capacity` writable handles.
 */
enum PshapeStatus pshape_model_generate(const struct PshapeModel *model,
                                        const double *z,
                                        uintptr_t k,
                                        const double *condition,
                                        uintptr_t m,
                                        struct PshapeCloud **out_clouds,
                                        uintptr_t capacity);

/**
 * Runs a discriminative model on one normalized cloud per structure and
 * writes the predicted class index (classification) or value (regression).
 *
 * # Safety
 * `model` must be a live handle; `clouds` must point to `count` live cloud
 * handles; `out` must be writable.
 */
enum PshapeStatus pshape_model_predict(const struct PshapeModel *model,
                                       const struct PshapeCloud *const *clouds,
                                       uintptr_t count,
                                       double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PSHAPE_H */
