#ifndef EDGEHAR_H
#define EDGEHAR_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Number of keypoints in a reduced skeleton.
 */
#define EH_NUM_JOINTS 15

typedef enum {
  EH_STATUS_OK = 0,
  EH_STATUS_NULL_POINTER = 1,
  EH_STATUS_INVALID_ARGUMENT = 2,
  EH_STATUS_INVALID_DEPTH = 3,
  EH_STATUS_OUT_OF_BOUNDS = 4,
  EH_STATUS_BEHIND_CAMERA = 5,
  EH_STATUS_INVALID_INTRINSICS = 6,
  EH_STATUS_INVALID_PROBABILITIES = 7,
  /**
   * The caller's buffer is too small.
   */
  EH_STATUS_BUFFER_TOO_SMALL = 8,
  /**
   * Nothing to return, e.g. no finalized period is waiting.
   */
  EH_STATUS_EMPTY = 9,
  EH_STATUS_PANIC = 10,
} EhStatus;

typedef enum {
  EH_TRACK_STATUS_SEARCHING = 0,
  EH_TRACK_STATUS_KNOWN = 1,
  EH_TRACK_STATUS_UNKNOWN = 2,
  EH_TRACK_STATUS_LOST = 3,
} EhTrackStatus;

/**
 * Opaque period fuser handle.
 */
typedef struct EhFuser EhFuser;

/**
 * Opaque tracker handle.
 */
typedef struct EhTracker EhTracker;

typedef struct {
  double fx;
  double fy;
  double u0;
  double v0;
  /**
   * Meters per raw depth unit.
   */
  double depth_scale;
  uint32_t width;
  uint32_t height;
} EhIntrinsics;

typedef struct {
  double x;
  double y;
  double z;
} EhPoint3;

/**
 * Reduced 3D skeleton; `valid[j]` is non-zero when `points[j]` is set.
 */
typedef struct {
  EhPoint3 points[EH_NUM_JOINTS];
  uint8_t valid[EH_NUM_JOINTS];
} EhSkeleton3D;

typedef struct {
  size_t person_index;
  /**
   * NUL-terminated UTF-8.
   */
  const char *person_id;
} EhIdentityEvent;

typedef struct {
  EhTrackStatus status;
  uint32_t times_untracked;
  /**
   * Frame of the held user skeleton, or -1 when none is held.
   */
  int64_t user_frame;
  /**
   * Person index of the held user skeleton, or -1.
   */
  int64_t user_person;
} EhTrackState;

typedef struct {
  uint64_t period_index;
  double t_start;
  double t_end;
  /**
   * Winning class, or -1 when below threshold.
   */
  int32_t decision;
  uint32_t num_contributions;
  double finalized_at;
} EhPeriod;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to fit) and returns the full message length in bytes.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t eh_last_error_message(char *buf, size_t len);

/**
 * Pixel plus depth in meters to a camera-frame point.
 *
 * # Safety
 * Pointers must be null or valid.
 */
EhStatus eh_backproject(const EhIntrinsics *intr, double u, double v, double z, EhPoint3 *out);

/**
 * Camera-frame point to pixel coordinates.
 *
 * # Safety
 * Pointers must be null or valid.
 */
EhStatus eh_project(const EhIntrinsics *intr, const EhPoint3 *point, double *out_u, double *out_v);

/**
 * Fuses `num_windows` row-major probability vectors of `num_classes` each.
 * Writes the mean into `out_mean` and the winning class, or -1 below
 * `theta`, into `out_decision`.
 *
 * # Safety
 * `probs` must hold `num_windows * num_classes` values and `out_mean`
 * `num_classes`.
 */
EhStatus eh_fuse(const double *probs,
                 size_t num_windows,
                 size_t num_classes,
                 double theta,
                 double *out_mean,
                 int32_t *out_decision);

/**
 * Creates a tracker for `user_id`.
 *
 * # Safety
 * `user_id` must be a NUL-terminated string and `out` valid.
 */
EhStatus eh_tracker_new(const char *user_id, double diameter, uint32_t tolerance, EhTracker **out);

/**
 * # Safety
 * `tracker` must come from `eh_tracker_new` and not be used afterwards.
 */
void eh_tracker_free(EhTracker *tracker);

/**
 * Advances the tracker by one frame.
 *
 * # Safety
 * `skeletons` must hold `num_skeletons` entries and `events` `num_events`
 * (either may be null when its count is zero). `out` may be null.
 */
EhStatus eh_tracker_step(EhTracker *tracker,
                         const EhSkeleton3D *skeletons,
                         size_t num_skeletons,
                         const EhIdentityEvent *events,
                         size_t num_events,
                         EhTrackState *out);

/**
 * Current tracker state.
 *
 * # Safety
 * Pointers must be null or valid.
 */
EhStatus eh_tracker_state(const EhTracker *tracker, EhTrackState *out);

/**
 * Creates a period fuser. `n` frames per window, step `m` (must divide
 * `n`), sampling rate `sr`, threshold `theta`.
 *
 * # Safety
 * `out` must be valid.
 */
EhStatus eh_fuser_new(uint32_t n,
                      uint32_t m,
                      double sr,
                      double theta,
                      uint32_t num_classes,
                      EhFuser **out);

/**
 * # Safety
 * `fuser` must come from `eh_fuser_new` and not be used afterwards.
 */
void eh_fuser_free(EhFuser *fuser);

/**
 * Records the result of window `window`. Pass a null `probs` to mark the
 * window as failed. Finalized periods are queued for `eh_fuser_poll`.
 *
 * # Safety
 * `probs` must be null or hold `len` values.
 */
EhStatus eh_fuser_resolve(EhFuser *fuser, uint64_t window, const double *probs, size_t len);

/**
 * Finalizes every remaining period that has a contribution, stamping them
 * with `at` seconds.
 *
 * # Safety
 * `fuser` must be valid.
 */
EhStatus eh_fuser_flush(EhFuser *fuser, double at);

/**
 * Pops the oldest finalized period. Its mean probabilities go to
 * `mean_out` when non-null, which must then hold `mean_cap >= num_classes`
 * values. Returns `Empty` when nothing is waiting.
 *
 * # Safety
 * Pointers must be null or valid.
 */
EhStatus eh_fuser_poll(EhFuser *fuser, EhPeriod *out, double *mean_out, size_t mean_cap);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EDGEHAR_H */
