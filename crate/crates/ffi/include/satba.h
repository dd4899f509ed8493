#ifndef SATBA_H
#define SATBA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/*
 Result code of every fallible call.
 */
typedef enum SatbaStatus {
  SATBA_STATUS_OK = 0,
  SATBA_STATUS_NULL_POINTER = 1,
  SATBA_STATUS_INVALID_ARGUMENT = 2,
  SATBA_STATUS_IO = 3,
  SATBA_STATUS_PARSE = 4,
  SATBA_STATUS_DATA = 5,
  SATBA_STATUS_NUMERICAL = 6,
  SATBA_STATUS_PANIC = 7,
} SatbaStatus;

/*
 Opaque bias adjustment problem and, after a run, its solution.
 */
typedef struct SatbaAdjustment SatbaAdjustment;

/*
 Opaque RPC camera model.
 */
typedef struct SatbaRpc SatbaRpc;

/*
 Message of the last failed call on this thread; empty if none. The
 pointer stays valid until the next failing call on the same thread.
 */
const char *satba_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *satba_version(void);

/*
 Reads an RPC text file (`KEY: value` lines).

 # Safety
 `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SatbaStatus satba_rpc_read(const char *path, struct SatbaRpc **out);

/*
 Parses RPC text held in memory.

 # Safety
 `text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SatbaStatus satba_rpc_parse(const char *text, struct SatbaRpc **out);

/*
 # Safety
 `rpc` must come from `satba_rpc_read`/`satba_rpc_parse` and not be used
 afterwards. Null is ignored.
 */
void satba_rpc_free(struct SatbaRpc *rpc);

/*
 Projects a ground point (degrees, meters) to pixel coordinates, with the
 bias subtracted from the raw projection.

 # Safety
 `rpc` must be a live handle; `row` and `col` valid pointers.
 */
enum SatbaStatus satba_rpc_project(const struct SatbaRpc *rpc,
                                   double d_row,
                                   double d_col,
                                   double lat,
                                   double lon,
                                   double hei,
                                   double *row,
                                   double *col);

/*
 Intersects the ray of a pixel with the height `hei`.

 # Safety
 `rpc` must be a live handle; `lat` and `lon` valid pointers.
 */
enum SatbaStatus satba_rpc_inverse_project(const struct SatbaRpc *rpc,
                                           double d_row,
                                           double d_col,
                                           double row,
                                           double col,
                                           double hei,
                                           double *lat,
                                           double *lon);

/*
 Creates an empty adjustment problem.
 */
struct SatbaAdjustment *satba_adjustment_new(void);

/*
 # Safety
 `adj` must come from `satba_adjustment_new` and not be used afterwards.
 Null is ignored.
 */
void satba_adjustment_free(struct SatbaAdjustment *adj);

/*
 Adds a copy of `rpc` as the next image; its id is written to `image_id`.

 # Safety
 Handles must be live; `image_id` may be null.
 */
enum SatbaStatus satba_adjustment_add_image(struct SatbaAdjustment *adj,
                                            const struct SatbaRpc *rpc,
                                            uintptr_t *image_id);

/*
 Adds a track of `count` observations; its id is written to `track_id`.

 # Safety
 `images`, `rows` and `cols` must each hold `count` elements; `track_id`
 may be null.
 */
enum SatbaStatus satba_adjustment_add_track(struct SatbaAdjustment *adj,
                                            uintptr_t count,
                                            const uintptr_t *images,
                                            const double *rows,
                                            const double *cols,
                                            uintptr_t *track_id);

/*
 Fixes the ground position of a track, making it a control point.

 # Safety
 `adj` must be a live handle.
 */
enum SatbaStatus satba_adjustment_set_gcp(struct SatbaAdjustment *adj,
                                          uintptr_t track_id,
                                          double lat,
                                          double lon,
                                          double hei);

/*
 Solves for the biases. A tolerance or iteration count of zero selects
 the default (0.001 px, 50 iterations).

 # Safety
 `adj` must be a live handle.
 */
enum SatbaStatus satba_adjustment_run(struct SatbaAdjustment *adj,
                                      double tolerance_px,
                                      uintptr_t max_iter);

/*
 Adjusted bias of one image.

 # Safety
 `adj` must be a live handle that has been run; outputs valid pointers.
 */
enum SatbaStatus satba_adjustment_bias(const struct SatbaAdjustment *adj,
                                       uintptr_t image_id,
                                       double *d_row,
                                       double *d_col);

/*
 Mean reprojection error before and after adjustment, the iteration count
 and whether the tolerance was reached. Any output may be null.

 # Safety
 `adj` must be a live handle that has been run.
 */
enum SatbaStatus satba_adjustment_summary(const struct SatbaAdjustment *adj,
                                          double *before_avg_xy,
                                          double *after_avg_xy,
                                          uintptr_t *iterations,
                                          bool *converged);

#endif  /* SATBA_H */
