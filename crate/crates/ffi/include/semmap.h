#ifndef SEMMAP_H
#define SEMMAP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum SemmapStatus {
  SEMMAP_STATUS_OK = 0,
  SEMMAP_STATUS_NULL_ARGUMENT = 1,
  SEMMAP_STATUS_INVALID_UTF8 = 2,
  SEMMAP_STATUS_IO = 3,
  SEMMAP_STATUS_PARSE = 4,
  SEMMAP_STATUS_VALIDATION = 5,
  SEMMAP_STATUS_NUMERICAL = 6,
  SEMMAP_STATUS_BUFFER_TOO_SMALL = 7,
  SEMMAP_STATUS_PANIC = 8,
} SemmapStatus;

// Point cloud handle.
typedef struct SemmapCloud SemmapCloud;

// Dataset (semantic map on disk) handle.
typedef struct SemmapDataset SemmapDataset;

// Pose graph handle.
typedef struct SemmapGraph SemmapGraph;

// Knowledge base handle.
typedef struct SemmapKb SemmapKb;

typedef struct SemmapWeights {
  double w_g;
  double w_s;
  double w_d;
  double w_u;
} SemmapWeights;

typedef struct SemmapReport {
  double geometric_error;
  size_t delta_count;
  size_t gamma_count;
  double spatial_distance;
  size_t unmatched_1;
  size_t unmatched_gt;
  double scalar;
} SemmapReport;

typedef struct SemmapOptimizeReport {
  double chi2_before;
  double chi2_after;
  size_t iterations;
} SemmapOptimizeReport;

typedef struct SemmapRegistration {
  // Maps source points into the target frame.
  double transform[7];
  bool converged;
  double mean_residual;
  double inlier_fraction;
  size_t iterations;
} SemmapRegistration;

typedef struct SemmapIntrinsics {
  double fx;
  double fy;
  double cx;
  double cy;
  uint32_t width;
  uint32_t height;
  double near;
  double far;
} SemmapIntrinsics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the calling thread's last error message into `buf` (NUL
// terminated, truncated to `len`) and returns the full message length.
// An empty message means the last call succeeded.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t semmap_last_error(char *buf, size_t len);

// # Safety
// `text` must be a NUL-terminated string and `out` a valid pointer.
enum SemmapStatus semmap_kb_parse(const char *text_, struct SemmapKb **out_);

// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum SemmapStatus semmap_kb_read(const char *path, struct SemmapKb **out_);

// # Safety
// `kb` must be null or a handle from this library, not yet freed.
void semmap_kb_free(struct SemmapKb *kb);

// Whether `sub` is a subclass of `sup` after closure.
//
// # Safety
// `kb` must be a live handle, the names NUL-terminated strings and `out` valid.
enum SemmapStatus semmap_kb_entails_is_a(const struct SemmapKb *kb,
                                         const char *sub,
                                         const char *sup,
                                         bool *out_);

// Whether `individual` is an instance of `class` after closure.
//
// # Safety
// `kb` must be a live handle, the names NUL-terminated strings and `out` valid.
enum SemmapStatus semmap_kb_entails_instance_of(const struct SemmapKb *kb,
                                                const char *individual,
                                                const char *class_,
                                                bool *out_);

// Number of atoms in the closure.
//
// # Safety
// `kb` must be a live handle and `out` valid.
enum SemmapStatus semmap_kb_closure_size(const struct SemmapKb *kb, size_t *out_);

// # Safety
// `dir` must be a NUL-terminated string and `out` a valid pointer.
enum SemmapStatus semmap_dataset_open(const char *dir, struct SemmapDataset **out_);

// # Safety
// `ds` must be null or a handle from this library, not yet freed.
void semmap_dataset_free(struct SemmapDataset *ds);

// Default evaluation weights.
struct SemmapWeights semmap_default_weights(void);

// Compares `candidate` against `ground_truth`. `align` may be null for the
// identity, `weights` null for the defaults.
//
// # Safety
// Handles must be live; `align` null or 7 doubles; `weights` null or valid;
// `out` valid.
enum SemmapStatus semmap_evaluate(const struct SemmapDataset *candidate,
                                  const struct SemmapDataset *ground_truth,
                                  const double *align,
                                  const struct SemmapWeights *weights,
                                  struct SemmapReport *out_);

// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum SemmapStatus semmap_graph_read(const char *path, struct SemmapGraph **out_);

// # Safety
// `graph` must be a live handle and `path` a NUL-terminated string.
enum SemmapStatus semmap_graph_write(const struct SemmapGraph *graph, const char *path);

// # Safety
// `graph` must be null or a handle from this library, not yet freed.
void semmap_graph_free(struct SemmapGraph *graph);

// # Safety
// `graph` must be a live handle and the outputs valid.
enum SemmapStatus semmap_graph_counts(const struct SemmapGraph *graph,
                                      size_t *nodes,
                                      size_t *edges);

// Pose of node `id` in the map frame.
//
// # Safety
// `graph` must be a live handle and `pose` point to 7 writable doubles.
enum SemmapStatus semmap_graph_node_pose(const struct SemmapGraph *graph,
                                         uint32_t id,
                                         double *pose);

// Optimizes the graph in place; the lowest node id stays fixed.
//
// # Safety
// `graph` must be a live handle; `report` null or valid.
enum SemmapStatus semmap_graph_optimize(struct SemmapGraph *graph,
                                        size_t max_iterations,
                                        struct SemmapOptimizeReport *report);

// Builds a cloud from `n` packed xyz triples.
//
// # Safety
// `xyz` must point to `3 n` doubles (may be null when `n` is 0) and `out` be valid.
enum SemmapStatus semmap_cloud_from_xyz(const double *xyz, size_t n, struct SemmapCloud **out_);

// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum SemmapStatus semmap_cloud_read(const char *path, struct SemmapCloud **out_);

// # Safety
// `cloud` must be null or a handle from this library, not yet freed.
void semmap_cloud_free(struct SemmapCloud *cloud);

// Number of points, 0 for a null handle.
//
// # Safety
// `cloud` must be null or a live handle.
size_t semmap_cloud_len(const struct SemmapCloud *cloud);

// Copies the points as packed xyz into `xyz`, which holds `capacity` points.
//
// # Safety
// `cloud` must be a live handle and `xyz` point to `3 capacity` doubles.
enum SemmapStatus semmap_cloud_points(const struct SemmapCloud *cloud,
                                      double *xyz,
                                      size_t capacity);

// Aligns `source` onto `target` with the default configuration, starting
// from `guess` (null for the identity).
//
// # Safety
// Handles must be live, `guess` null or 7 doubles, `out` valid.
enum SemmapStatus semmap_register(const struct SemmapCloud *source,
                                  const struct SemmapCloud *target,
                                  const double *guess,
                                  struct SemmapRegistration *out_);

// Renders the cloud as a depth image seen from `pose` (camera to map).
// `depth` receives `width * height` row-major values in metres, 0 where
// nothing was hit.
//
// # Safety
// `cloud` must be live, `pose` 7 doubles, `k` valid, `depth` `capacity` doubles.
enum SemmapStatus semmap_render_depth(const struct SemmapCloud *cloud,
                                      const double *pose,
                                      const struct SemmapIntrinsics *k,
                                      double *depth,
                                      size_t capacity);

// Solves `A_i X = X B_i` for the sensor pose `X` in the base frame from
// `n` robot motions `a` and matching sensor motions `b`, each packed as 7
// doubles per motion.
//
// # Safety
// `a` and `b` must each point to `7 n` doubles and `out` to 7 writable doubles.
enum SemmapStatus semmap_calibrate_sensor_base(const double *a,
                                               const double *b,
                                               size_t n,
                                               bool refine,
                                               double *out_);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEMMAP_H */
